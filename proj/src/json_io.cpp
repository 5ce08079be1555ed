#include "facemix/json_io.hpp"

#include <fstream>

namespace facemix {

nlohmann::json descriptor_to_json(const FeatureDescriptor& d) {
  nlohmann::json j;
  j["kind"] = to_string(d.kind);
  j["indices"] = d.indices;
  if (d.kind == FeatureKind::angle) j["vertex"] = d.vertex;
  return j;
}

FeatureDescriptor descriptor_from_json(const nlohmann::json& j) {
  FeatureDescriptor d;
  d.kind = parse_feature_kind(j.at("kind").get<std::string>());
  d.indices = j.at("indices").get<std::vector<int>>();
  d.vertex = j.value("vertex", -1);
  return d;
}

nlohmann::json topology_to_json(const Triangulation& t) {
  nlohmann::json j;
  j["triangles"] = nlohmann::json::array();
  for (const auto& tri : t.triangles) j["triangles"].push_back({tri[0], tri[1], tri[2]});
  j["hull_size"] = t.hull_size;
  return j;
}

Triangulation topology_from_json(const nlohmann::json& j) {
  Triangulation t;
  try {
    for (const auto& tri : j.at("triangles")) {
      if (tri.size() != 3) throw ParseError("triangle must have 3 indices");
      t.triangles.push_back({tri[0].get<int>(), tri[1].get<int>(), tri[2].get<int>()});
    }
    t.hull_size = j.at("hull_size").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad topology: ") + e.what());
  }
  return t;
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw Error("write failed: " + path.string());
}

}  // namespace facemix
