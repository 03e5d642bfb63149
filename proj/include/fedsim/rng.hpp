#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "fedsim/core.hpp"

namespace fedsim {

// SplitMix64 finalizer. Used both as the per-stream generator core and as
// the key-derivation mix for named substreams, so every random decision in
// a run is a pure function of (master seed, stream, round, user).
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Deterministic sequential generator. Distributions are implemented here
// rather than with <random> ones so that streams are bit-identical across
// standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double a, double b) { return a + (b - a) * uniform01(); }

  bool bernoulli(double p) { return uniform01() < p; }

  // Unbiased integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    check(n > 0, "Rng::below: n must be positive");
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  // Standard normal via Box-Muller; caches the second deviate.
  double normal() {
    if (spare_) {
      double v = *spare_;
      spare_.reset();
      return v;
    }
    double u1 = uniform01();
    double u2 = uniform01();
    if (u1 < 1e-300) u1 = 1e-300;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    return r * std::cos(theta);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

  // Uniform k-subset of {0,...,n-1}, returned in ascending order.
  std::vector<int> sample_without_replacement(int n, int k) {
    check(k >= 0 && k <= n, "Rng::sample_without_replacement: k out of range");
    std::vector<int> ids(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) ids[static_cast<std::size_t>(i)] = i;
    for (int i = 0; i < k; ++i) {
      const std::size_t j =
          static_cast<std::size_t>(i) +
          static_cast<std::size_t>(below(static_cast<std::uint64_t>(n - i)));
      std::swap(ids[static_cast<std::size_t>(i)], ids[j]);
    }
    ids.resize(static_cast<std::size_t>(k));
    std::sort(ids.begin(), ids.end());
    return ids;
  }

 private:
  std::uint64_t state_;
  std::optional<double> spare_;
};

// Named substreams. A run owns one seed per stream; per-(round,user) keys
// are derived on demand, so replaying any call never consumes shared state.
enum class Stream : std::uint64_t {
  Data = 1,
  Partition,
  Init,
  Batches,
  Selection,
  Dither,
  Channel,
  Attacks,
  Reference,
};

struct SeedTable {
  std::uint64_t master = 1;
  // Optional per-stream overrides; used to demonstrate seed isolation.
  std::optional<std::uint64_t> override_seed[16];

  std::uint64_t stream_seed(Stream s) const {
    const auto idx = static_cast<std::size_t>(s);
    if (idx < 16 && override_seed[idx]) return *override_seed[idx];
    return mix64(master ^ mix64(static_cast<std::uint64_t>(s) * 0xA24BAED4963EE407ULL));
  }
};

// Substream keyed by up to two indices (commonly round and user).
inline Rng make_stream(std::uint64_t stream_seed, std::uint64_t a = 0,
                       std::uint64_t b = 0) {
  std::uint64_t h = stream_seed;
  h = mix64(h ^ mix64((a + 1) * 0xD6E8FEB86659FD93ULL));
  h = mix64(h ^ mix64((b + 1) * 0xCA5A826395121157ULL));
  return Rng(h);
}

}  // namespace fedsim
