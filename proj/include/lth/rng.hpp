#pragma once

#include <cstdint>
#include <cmath>
#include <vector>

namespace lth {

// splitmix64 finalizer (Steele, Lea & Flood / xoshiro reference code).
inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Counter-based splitmix64 stream: output i is a pure function of
// (seed, stream, i), so any draw can be replayed on any platform without
// generating its predecessors. Used project-wide for every random choice
// (init, shuffling, corruption, augmentation); std:: distributions are
// implementation-defined and never used on top of it.
class SplitMix {
 public:
  explicit SplitMix(std::uint64_t seed, std::uint64_t stream = 0)
      : key_(mix64(seed + 0x9e3779b97f4a7c15ULL) ^
             mix64(stream * 0xda942042e4dd58b5ULL + 0x2545f4914f6cdd1dULL)) {}

  // Derives an independent child generator; label picks the branch.
  SplitMix split(std::uint64_t label) const {
    SplitMix child(0, 0);
    child.key_ = mix64(key_ ^ mix64(label + 0x165667b19e3779f9ULL));
    child.counter_ = 0;
    return child;
  }

  std::uint64_t next_u64() { return at(counter_++); }

  // Random-access draw; does not advance the cursor.
  std::uint64_t at(std::uint64_t i) const {
    return mix64(key_ + (i + 1) * 0x9e3779b97f4a7c15ULL);
  }

  // Uniform in [0, 1) with 53 random bits.
  double next_double() { return double(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in [0, 1) with 24 random bits.
  float next_float() { return float(next_u64() >> 40) * 0x1.0p-24f; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Uniform integer in [0, n), unbiased via rejection.
  std::uint64_t next_below(std::uint64_t n) {
    const std::uint64_t limit = ~std::uint64_t(0) - (~std::uint64_t(0) % n);
    std::uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return v % n;
  }

  // Standard normal via Box-Muller; one value per call, no cached state.
  double next_normal() {
    double u1 = next_double();
    while (u1 <= 0.0) u1 = next_double();
    const double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = std::size_t(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::uint64_t key() const { return key_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace lth
