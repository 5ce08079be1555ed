#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "facemix/common.hpp"

namespace facemix {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point2&, const Point2&) = default;
};

inline constexpr std::size_t kLandmarkCount = 68;

/// 68 ordered facial landmarks in pixel coordinates (standard iBUG layout).
class LandmarkSet {
 public:
  LandmarkSet() = default;
  /// Throws ParseError unless exactly 68 finite points are given.
  explicit LandmarkSet(std::span<const Point2> points);

  const std::array<Point2, kLandmarkCount>& points() const { return points_; }
  const Point2& operator[](std::size_t i) const { return points_[i]; }
  std::span<const Point2> span() const { return points_; }

  friend bool operator==(const LandmarkSet&, const LandmarkSet&) = default;

 private:
  std::array<Point2, kLandmarkCount> points_{};
};

/// Row-major grayscale image with pixel values in [0, 1].
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<float> pixels;

  GrayImage() = default;
  GrayImage(int w, int h, float fill = 0.0f);

  float at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  float& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
};

enum class Domain { source, target };

const char* to_string(Domain d);
Domain parse_domain(const std::string& s);

struct Sample {
  std::string sample_id;
  std::string subject_id;
  Domain domain = Domain::source;
  int label = 0;
  GrayImage image;
  LandmarkSet landmarks;
};

struct Dataset {
  std::vector<Sample> samples;
  int K = 0;
  std::vector<std::size_t> class_counts;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  /// Recomputes K (1 + max label, never below `min_k`) and class_counts.
  void refresh_counts(int min_k = 0);
};

/// Reads a manifest CSV (header `sample_id,subject_id,domain,label,image,landmarks`).
/// Image and landmark paths are resolved against the manifest's directory.
Dataset load_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const Dataset& data,
                    const std::vector<std::string>& image_files,
                    const std::vector<std::string>& landmark_files);

/// Binary PGM (P5) reader; 8- or 16-bit big-endian payloads.
GrayImage load_image_pgm(const std::filesystem::path& path);
/// Writes a P5 file at maxval 255, rounding to nearest.
void write_image_pgm(const std::filesystem::path& path, const GrayImage& image);

/// 68 lines of "x y".
LandmarkSet load_landmarks(const std::filesystem::path& path);
void write_landmarks(const std::filesystem::path& path, const LandmarkSet& landmarks);

/// Eye centers: image-left = mean of landmarks 36..41, image-right = 42..47.
Point2 left_eye_center(const LandmarkSet& lm);
Point2 right_eye_center(const LandmarkSet& lm);

/// Similarity transform dst = [a -b; b a] * src + t.
struct Similarity {
  double a = 1.0, b = 0.0, tx = 0.0, ty = 0.0;
  Point2 apply(Point2 p) const { return {a * p.x - b * p.y + tx, b * p.x + a * p.y + ty}; }
  Similarity inverse() const;
};

/// The map sending the image-left eye to (0.30 S, 0.35 S) and the image-right
/// eye to (0.70 S, 0.35 S). Throws DegenerateGeometry for coincident eyes.
Similarity alignment_transform(const LandmarkSet& lm, int out_size);

struct AlignedFace {
  GrayImage image;
  LandmarkSet landmarks;
};

/// Warps `image` into an out_size x out_size crop with level eyes. Bilinear
/// sampling, zero outside the source image, pixel centers at integer coords.
AlignedFace align_face(const GrayImage& image, const LandmarkSet& landmarks, int out_size);

/// Bilinear sample; coordinates outside the image read as 0.
float sample_bilinear(const GrayImage& image, double x, double y);

}  // namespace facemix
