#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <string>

#include <unistd.h>

#include "facemix/ingest.hpp"
#include "facemix/rng.hpp"

namespace facemix::testing {

/// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("facemix_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter()++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  static std::uint64_t& counter() {
    static std::uint64_t c = 0;
    return c;
  }
  std::filesystem::path path_;
};

/// 68 random points in a box, with eye groups placed around the given centers.
inline LandmarkSet random_landmarks(Rng& rng, Point2 left_eye, Point2 right_eye, double box = 200.0) {
  std::array<Point2, kLandmarkCount> pts;
  for (auto& p : pts) p = {rng.uniform(0, box), rng.uniform(0, box)};
  // Eye rings whose means are exactly the requested centers.
  for (int k = 0; k < 6; ++k) {
    const double th = 2.0 * 3.141592653589793 * k / 6.0;
    pts[36 + k] = {left_eye.x + 5 * std::cos(th), left_eye.y + 3 * std::sin(th)};
    pts[42 + k] = {right_eye.x + 5 * std::cos(th), right_eye.y + 3 * std::sin(th)};
  }
  return LandmarkSet(pts);
}

}  // namespace facemix::testing
