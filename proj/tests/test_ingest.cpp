#include <doctest.h>

#include <cmath>
#include <fstream>

#include "facemix/ingest.hpp"
#include "test_util.hpp"

using namespace facemix;
using facemix::testing::TempDir;

namespace {

void write_bytes(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out << bytes;
}

void write_sample_files(const TempDir& dir, const std::string& stem, int landmark_lines = 68) {
  write_bytes(dir / (stem + ".pgm"), std::string("P5\n2 2\n255\n") + std::string("\x00\xff\x80\x40", 4));
  std::ofstream lm(dir / (stem + ".txt"));
  for (int i = 0; i < landmark_lines; ++i) lm << i << ".5 " << 2 * i << "\n";
}

}  // namespace

TEST_CASE("load_image_pgm scales by maxval") {
  TempDir dir("pgm");
  write_bytes(dir / "a.pgm", std::string("P5\n2 2\n255\n") + std::string("\x00\xff\x80\x40", 4));
  const auto img = load_image_pgm(dir / "a.pgm");
  REQUIRE(img.width == 2);
  REQUIRE(img.height == 2);
  CHECK(img.pixels[0] == 0.0f);
  CHECK(img.pixels[1] == 1.0f);
  CHECK(img.pixels[2] == doctest::Approx(128.0 / 255));
  CHECK(img.pixels[3] == doctest::Approx(64.0 / 255));

  write_bytes(dir / "b.pgm", std::string("P5\n# comment\n3 1\n1\n") + std::string("\x01\x01\x01", 3));
  for (float v : load_image_pgm(dir / "b.pgm").pixels) CHECK(v == 1.0f);

  write_bytes(dir / "c.pgm", "P2\n2 1\n255\n0 255\n");
  CHECK_THROWS_WITH_AS(load_image_pgm(dir / "c.pgm"), doctest::Contains("unsupported PGM variant"),
                       ParseError);

  write_bytes(dir / "d.pgm", std::string("P5\n4 4\n255\n") + std::string(3, '\x10'));
  CHECK_THROWS_WITH_AS(load_image_pgm(dir / "d.pgm"), doctest::Contains("truncated"), ParseError);

  write_bytes(dir / "e.pgm", "GIF89a");
  CHECK_THROWS_AS(load_image_pgm(dir / "e.pgm"), ParseError);
}

TEST_CASE("16-bit PGM payloads are big-endian") {
  TempDir dir("pgm16");
  write_bytes(dir / "a.pgm", std::string("P5\n2 1\n65535\n") + std::string("\xff\xff\x80\x00", 4));
  const auto img = load_image_pgm(dir / "a.pgm");
  CHECK(img.pixels[0] == 1.0f);
  CHECK(img.pixels[1] == doctest::Approx(32768.0 / 65535));
}

TEST_CASE("PGM write/read round trip stays within half a grey level") {
  TempDir dir("pgmrt");
  Rng rng(7);
  GrayImage img(13, 9);
  for (auto& p : img.pixels) p = static_cast<float>(rng.uniform());
  write_image_pgm(dir / "x.pgm", img);
  const auto back = load_image_pgm(dir / "x.pgm");
  REQUIRE(back.pixels.size() == img.pixels.size());
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    CHECK(std::abs(back.pixels[i] - img.pixels[i]) <= 1.0 / (2 * 255) + 1e-7);
  }
}

TEST_CASE("load_manifest builds a dataset and reports bad rows") {
  TempDir dir("manifest");
  write_sample_files(dir, "s0");
  write_sample_files(dir, "s1");
  {
    std::ofstream m(dir / "m.csv");
    m << "sample_id,subject_id,domain,label,image,landmarks\n";
    m << "a,subj1,source,0,s0.pgm,s0.txt\n";
    m << "b,subj2,target,1,s1.pgm,s1.txt\n";
  }
  const auto data = load_manifest(dir / "m.csv");
  REQUIRE(data.size() == 2);
  CHECK(data.K == 2);
  CHECK(data.class_counts == std::vector<std::size_t>{1, 1});
  CHECK(data.samples[1].domain == Domain::target);
  CHECK(data.samples[0].landmarks[3].x == doctest::Approx(3.5));

  write_sample_files(dir, "short", 67);
  {
    std::ofstream m(dir / "bad.csv");
    m << "sample_id,subject_id,domain,label,image,landmarks\n";
    m << "a,subj1,source,0,s0.pgm,s0.txt\n";
    m << "b,subj2,target,1,short.pgm,short.txt\n";
  }
  try {
    load_manifest(dir / "bad.csv");
    FAIL("expected a ParseError");
  } catch (const ParseError& e) {
    CHECK(e.row() == 2);
    CHECK(std::string(e.what()).find("67") != std::string::npos);
  }

  {
    std::ofstream m(dir / "neg.csv");
    m << "sample_id,subject_id,domain,label,image,landmarks\n";
    m << "a,subj1,source,-1,s0.pgm,s0.txt\n";
  }
  CHECK_THROWS_WITH_AS(load_manifest(dir / "neg.csv"), doctest::Contains("row 1"), ParseError);
  CHECK_THROWS_AS(load_manifest(dir / "missing.csv"), ParseError);
}

TEST_CASE("manifest with 707 rows and 7 labels") {
  TempDir dir("manifest707");
  write_sample_files(dir, "s");
  {
    std::ofstream m(dir / "m.csv");
    m << "sample_id,subject_id,domain,label,image,landmarks\n";
    for (int i = 0; i < 707; ++i) m << "x" << i << ",p" << i % 154 << ",target," << i % 7 << ",s.pgm,s.txt\n";
  }
  const auto data = load_manifest(dir / "m.csv");
  CHECK(data.size() == 707);
  CHECK(data.K == 7);
  std::size_t total = 0;
  for (auto c : data.class_counts) total += c;
  CHECK(total == 707);
}

TEST_CASE("landmark sets must hold 68 finite points") {
  std::vector<Point2> pts(67);
  CHECK_THROWS_AS(LandmarkSet{pts}, ParseError);
  pts.resize(68);
  pts[5].x = std::nan("");
  CHECK_THROWS_AS(LandmarkSet{pts}, ParseError);
}

TEST_CASE("align_face places the eyes on the reference line") {
  Rng rng(11);
  const int S = 64;
  GrayImage img(200, 200);
  for (auto& p : img.pixels) p = static_cast<float>(rng.uniform());
  const auto lm = facemix::testing::random_landmarks(rng, {100, 100}, {150, 150});

  // Oracle: build the similarity map from the two eye correspondences directly.
  const Point2 l = left_eye_center(lm), r = right_eye_center(lm);
  const double angle = -std::atan2(r.y - l.y, r.x - l.x);
  const double scale = 0.40 * S / std::hypot(r.x - l.x, r.y - l.y);
  auto oracle = [&](Point2 p) {
    const double x = p.x - l.x, y = p.y - l.y;
    return Point2{0.30 * S + scale * (std::cos(angle) * x - std::sin(angle) * y),
                  0.35 * S + scale * (std::sin(angle) * x + std::cos(angle) * y)};
  };

  const auto out = align_face(img, lm, S);
  CHECK(out.image.width == S);
  const Point2 nl = left_eye_center(out.landmarks), nr = right_eye_center(out.landmarks);
  CHECK(std::abs(nl.x - 0.30 * S) <= 0.5);
  CHECK(std::abs(nr.x - 0.70 * S) <= 0.5);
  CHECK(std::abs(nl.y - nr.y) <= 0.5);
  for (std::size_t i = 0; i < kLandmarkCount; ++i) {
    const Point2 o = oracle(lm[i]);
    CHECK(out.landmarks[i].x == doctest::Approx(o.x).epsilon(1e-9));
    CHECK(out.landmarks[i].y == doctest::Approx(o.y).epsilon(1e-9));
  }
  for (float v : out.image.pixels) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
}

TEST_CASE("align_face at 256 puts the left eye at column 76.8") {
  Rng rng(3);
  GrayImage img(300, 300, 0.5f);
  const auto lm = facemix::testing::random_landmarks(rng, {90, 140}, {190, 120}, 280);
  const auto out = align_face(img, lm, 256);
  CHECK(left_eye_center(out.landmarks).x == doctest::Approx(76.8).epsilon(1e-9));
  CHECK(left_eye_center(out.landmarks).y == doctest::Approx(0.35 * 256).epsilon(1e-9));
}

TEST_CASE("align_face is the identity on an already aligned face and idempotent") {
  Rng rng(5);
  const int S = 48;
  GrayImage img(S, S);
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x) img.at(x, y) = static_cast<float>(0.5 + 0.4 * std::sin(0.3 * x) * std::cos(0.2 * y));
  const auto lm = facemix::testing::random_landmarks(rng, {0.30 * S, 0.35 * S}, {0.70 * S, 0.35 * S}, S);
  const auto once = align_face(img, lm, S);
  float max_diff = 0;
  for (std::size_t i = 0; i < img.pixels.size(); ++i) max_diff = std::max(max_diff, std::abs(once.image.pixels[i] - img.pixels[i]));
  CHECK(max_diff <= 1.0f / 255);

  // Rotated input: aligning twice changes the image by at most 2/255.
  const auto tilted = facemix::testing::random_landmarks(rng, {60, 70}, {110, 90}, 160);
  GrayImage big(160, 160);
  for (int y = 0; y < 160; ++y)
    for (int x = 0; x < 160; ++x) big.at(x, y) = static_cast<float>(0.5 + 0.4 * std::sin(0.05 * x + 0.03 * y));
  const auto a1 = align_face(big, tilted, 64);
  const auto a2 = align_face(a1.image, a1.landmarks, 64);
  max_diff = 0;
  for (std::size_t i = 0; i < a1.image.pixels.size(); ++i) max_diff = std::max(max_diff, std::abs(a1.image.pixels[i] - a2.image.pixels[i]));
  CHECK(max_diff <= 2.0f / 255);
}

TEST_CASE("align_face rejects coincident eyes") {
  Rng rng(1);
  const auto lm = facemix::testing::random_landmarks(rng, {50, 50}, {50, 50});
  CHECK_THROWS_AS(align_face(GrayImage(100, 100), lm, 32), DegenerateGeometry);
}

TEST_CASE("eyes end up level for random non-degenerate inputs") {
  Rng rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    const Point2 l{rng.uniform(10, 190), rng.uniform(10, 190)};
    Point2 r{rng.uniform(10, 190), rng.uniform(10, 190)};
    if (std::hypot(r.x - l.x, r.y - l.y) < 1.0) r.x += 5;
    const auto lm = facemix::testing::random_landmarks(rng, l, r);
    const auto t = alignment_transform(lm, 128);
    const Point2 nl = t.apply(left_eye_center(lm)), nr = t.apply(right_eye_center(lm));
    CHECK(std::abs(nl.y - nr.y) <= 0.5);
  }
}
