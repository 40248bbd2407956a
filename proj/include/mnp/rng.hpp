#pragma once

#include <cstdint>
#include <random>

#include "mnp/normal.hpp"

namespace mnp {

namespace detail {

// SplitMix64 finalizer; used to derive child stream seeds.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d649bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace detail

// Seeded, splittable random stream. Every stochastic routine in the library
// takes one of these; nothing seeds from the wall clock. split(tag) derives
// an independent child stream as a pure function of (seed, path, tag), so a
// run is reproducible regardless of how much randomness parent streams have
// already consumed.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed, std::uint64_t path = 0)
      : seed_(seed), path_(path), gen_(detail::mix64(seed ^ detail::mix64(path))) {}

  // Uniform on (0,1); never returns an exact endpoint.
  double uniform() {
    const std::uint64_t bits = gen_() >> 11;  // 53 random bits
    return (static_cast<double>(bits) + 0.5) * 0x1p-53;
  }

  // Standard normal via the inverse CDF: one uniform per variate, which keeps
  // draw counts (and therefore downstream state) deterministic.
  double gaussian() { return normal_quantile(uniform()); }

  std::uint64_t uniform_u64() { return gen_(); }

  RngStream split(std::uint64_t tag) const {
    return RngStream(seed_, detail::mix64(path_ * 0x100000001b3ULL + tag + 1));
  }

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::uint64_t path_;
  std::mt19937_64 gen_;
};

}  // namespace mnp
