#include "facemix/feature_matrix.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "facemix/json_io.hpp"

namespace facemix {

std::vector<double> FeatureMatrix::column(std::size_t sample) const {
  std::vector<double> c(P);
  for (std::size_t f = 0; f < P; ++f) c[f] = at(f, sample);
  return c;
}

FeatureMatrix FeatureMatrix::select_rows(const std::vector<int>& rows) const {
  FeatureMatrix out;
  out.P = rows.size();
  out.N = N;
  out.sample_ids = sample_ids;
  out.values.reserve(out.P * N);
  for (int r : rows) {
    if (r < 0 || static_cast<std::size_t>(r) >= P) throw ShapeError("feature row out of range");
    out.values.insert(out.values.end(), values.begin() + static_cast<std::ptrdiff_t>(r * N),
                      values.begin() + static_cast<std::ptrdiff_t>((r + 1) * N));
    if (!descriptors.empty()) out.descriptors.push_back(descriptors[static_cast<std::size_t>(r)]);
  }
  return out;
}

FeatureMatrix FeatureMatrix::select_columns(const std::vector<std::size_t>& cols) const {
  FeatureMatrix out;
  out.P = P;
  out.N = cols.size();
  out.descriptors = descriptors;
  out.values.resize(P * out.N);
  for (std::size_t f = 0; f < P; ++f) {
    for (std::size_t j = 0; j < cols.size(); ++j) out.values[f * out.N + j] = at(f, cols[j]);
  }
  if (!sample_ids.empty()) {
    for (std::size_t c : cols) out.sample_ids.push_back(sample_ids.at(c));
  }
  return out;
}

FeatureMatrix feature_matrix_from_samples(const std::vector<std::vector<double>>& per_sample,
                                          std::vector<FeatureDescriptor> descriptors,
                                          std::vector<std::string> sample_ids) {
  FeatureMatrix m;
  m.N = per_sample.size();
  m.P = per_sample.empty() ? descriptors.size() : per_sample.front().size();
  for (const auto& v : per_sample) {
    if (v.size() != m.P) throw ShapeError("samples disagree on feature count");
  }
  if (!descriptors.empty() && descriptors.size() != m.P) {
    throw ShapeError("descriptor count does not match feature count");
  }
  m.values.resize(m.P * m.N);
  for (std::size_t j = 0; j < m.N; ++j) {
    for (std::size_t f = 0; f < m.P; ++f) m.values[f * m.N + j] = per_sample[j][f];
  }
  m.descriptors = std::move(descriptors);
  m.sample_ids = std::move(sample_ids);
  return m;
}

namespace {

void put_u64_le(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64_le(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (in.gcount() != 8) throw ParseError("truncated feature matrix header");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t{b[i]} << (8 * i);
  return v;
}

}  // namespace

void write_feature_matrix(const std::filesystem::path& path, const FeatureMatrix& m) {
  if (m.values.size() != m.P * m.N) throw ShapeError("feature matrix size mismatch");
  nlohmann::json header;
  header["P"] = m.P;
  header["N"] = m.N;
  header["dtype"] = "f32le";
  header["descriptors"] = nlohmann::json::array();
  for (const auto& d : m.descriptors) header["descriptors"].push_back(descriptor_to_json(d));
  header["sample_ids"] = m.sample_ids;
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  put_u64_le(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  std::vector<unsigned char> blob(4 * m.values.size());
  for (std::size_t i = 0; i < m.values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(m.values[i]));
    for (int k = 0; k < 4; ++k) blob[4 * i + k] = static_cast<unsigned char>(bits >> (8 * k));
  }
  out.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
  if (!out) throw Error("write failed: " + path.string());
}

FeatureMatrix read_feature_matrix(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open feature matrix " + path.string());
  const std::uint64_t len = get_u64_le(in);
  if (len > (std::uint64_t{1} << 34)) throw ParseError("implausible feature matrix header length");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (static_cast<std::uint64_t>(in.gcount()) != len) throw ParseError("truncated feature matrix header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad feature matrix header: ") + e.what());
  }
  FeatureMatrix m;
  m.P = header.at("P").get<std::size_t>();
  m.N = header.at("N").get<std::size_t>();
  if (header.value("dtype", "f32le") != "f32le") throw ParseError("unsupported dtype");
  for (const auto& d : header.at("descriptors")) m.descriptors.push_back(descriptor_from_json(d));
  m.sample_ids = header.value("sample_ids", std::vector<std::string>{});
  std::vector<unsigned char> blob(4 * m.P * m.N);
  in.read(reinterpret_cast<char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
  if (static_cast<std::size_t>(in.gcount()) != blob.size()) throw ParseError("truncated feature matrix payload");
  m.values.resize(m.P * m.N);
  for (std::size_t i = 0; i < m.values.size(); ++i) {
    std::uint32_t bits = 0;
    for (int k = 0; k < 4; ++k) bits |= std::uint32_t{blob[4 * i + k]} << (8 * k);
    m.values[i] = std::bit_cast<float>(bits);
  }
  return m;
}

}  // namespace facemix
