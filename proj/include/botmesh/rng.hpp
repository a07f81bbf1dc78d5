#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace botmesh {

// Deterministic stream generator (splitmix64). Every subsystem draws from its
// own named stream so that adding draws in one place never perturbs another.
class Rng {
 public:
  Rng() : state_(0x9e3779b97f4a7c15ULL) {}
  explicit Rng(uint64_t seed) : state_(seed) {}

  // Derive an independent stream from (seed, name).
  static Rng stream(uint64_t seed, std::string_view name) {
    uint64_t h = 1469598103934665603ULL;  // FNV-1a over the name
    for (char c : name) {
      h ^= uint8_t(c);
      h *= 1099511628211ULL;
    }
    Rng r(seed ^ h);
    r.next_u64();  // decouple from raw seed
    return r;
  }

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  uint32_t next_u32() { return uint32_t(next_u64() >> 32); }

  // Uniform in [0, n). n must be > 0. Rejection-free modulo bias is fine at
  // simulator scale; keep it multiplicative to stay bias-free anyway.
  uint64_t uniform(uint64_t n) {
    return uint64_t((__uint128_t(next_u64()) * n) >> 64);
  }

  // Uniform double in [0, 1).
  double uniform01() { return double(next_u64() >> 11) * 0x1.0p-53; }

  bool chance(double p) { return uniform01() < p; }

  // Exponential with the given mean (> 0).
  double exponential(double mean) {
    double u = uniform01();
    return -mean * std::log1p(-u);
  }

  void fill(uint8_t* out, size_t n) {
    size_t i = 0;
    while (i < n) {
      uint64_t v = next_u64();
      for (int b = 0; b < 8 && i < n; ++b, ++i) out[i] = uint8_t(v >> (8 * b));
    }
  }

 private:
  uint64_t state_;
};

}  // namespace botmesh
