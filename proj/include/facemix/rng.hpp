#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace facemix {

/// Counter-based generator: output k is mix(key, k). Streams are split by
/// hashing a name into the key, so every stage of a run can be replayed in
/// isolation from the root seed.
///
/// The mixing function is the SplitMix64 finalizer applied twice; all
/// distributions below are implemented here so results are identical on any
/// platform (std:: distributions are implementation-defined).
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : key_(mix(seed ^ 0x9e3779b97f4a7c15ULL)) {}

  /// Independent child stream named `name`. Does not advance this stream.
  Rng split(std::string_view name) const;
  /// Independent child stream keyed by an integer (fold index, epoch, ...).
  Rng split(std::uint64_t index) const;

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);
  double normal();
  double normal(double mean, double sd) { return mean + sd * normal(); }
  /// Gamma(shape, 1) by Marsaglia–Tsang, with the shape < 1 boost.
  double gamma(double shape);
  double beta(double a, double b);
  bool bernoulli(double p) { return uniform() < p; }

  /// Fisher–Yates shuffle of `v` in place.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = below(i);
      std::swap(v[i - 1], v[j]);
    }
  }

  std::vector<std::size_t> permutation(std::size_t n);

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

  static std::uint64_t mix(std::uint64_t z);

 private:
  Rng(std::uint64_t key, std::uint64_t counter, int) : key_(key), counter_(counter) {}

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// FNV-1a hash of a stage name, used to derive per-stage seeds.
std::uint64_t hash_name(std::string_view name);

}  // namespace facemix
