#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "gridflow/errors.hpp"

namespace gridflow {

namespace detail {

/// SplitMix64 finalizer, used to derive child stream seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace detail

/// Deterministic random source. All randomness in the project flows from one
/// root seed, split into named child streams via split(). The uniform mappings
/// are implemented here (not via std::uniform_*_distribution) so that output
/// sequences are identical across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), eng_(detail::splitmix64(seed)) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return eng_(); }

  /// Uniform double in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform index in [0, n). Rejection-free modulo is fine at these scales.
  std::size_t uniform_index(std::size_t n) {
    if (n == 0) throw PreconditionError("uniform_index: n must be positive");
    return static_cast<std::size_t>(next_u64() % n);
  }

  /// Sample an index from an (unnormalized is fine) nonnegative weight vector.
  std::size_t categorical(const std::vector<double>& weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    if (total <= 0.0) throw PreconditionError("categorical: weights must have positive mass");
    double u = uniform() * total;
    double acc = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      acc += weights[i];
      if (u < acc) return i;
    }
    return weights.size() - 1;
  }

  /// In-place Fisher-Yates shuffle (std::shuffle is implementation-defined).
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = uniform_index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

  /// Derive an independent child stream. Children of the same parent with
  /// distinct ids are decorrelated; the scheme is a pure function of
  /// (parent seed, id), so splitting never consumes parent state.
  Rng split(std::uint64_t id) const {
    return Rng(detail::splitmix64(seed_ ^ detail::splitmix64(id + 0x632BE59BD9B4E019ULL)));
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 eng_;
};

}  // namespace gridflow
