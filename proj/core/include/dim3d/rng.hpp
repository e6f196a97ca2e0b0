#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace dim3d {

// Deterministic 64-bit generator: xoshiro256** seeded via splitmix64.
// Gaussians come from the Box-Muller transform (the spare value is cached,
// so draws stay reproducible one call site at a time).
class Rng {
 public:
  explicit Rng(uint64_t seed) {
    uint64_t x = seed;
    for (auto& word : state_) word = splitmix64(x);
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0,1) with 53 random mantissa bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Integer in [0, n), n >= 1. Rejection keeps the draw unbiased.
  uint64_t uniform_index(uint64_t n) {
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return v % n;
  }

  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  void fill_gaussian(double* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = gaussian();
  }

  // Serializable state: 4 state words + Box-Muller cache.
  struct Snapshot {
    uint64_t state[4];
    bool has_spare;
    double spare;
  };
  Snapshot snapshot() const {
    Snapshot s{};
    for (int i = 0; i < 4; ++i) s.state[i] = state_[i];
    s.has_spare = has_spare_;
    s.spare = spare_;
    return s;
  }
  void restore(const Snapshot& s) {
    for (int i = 0; i < 4; ++i) state_[i] = s.state[i];
    has_spare_ = s.has_spare;
    spare_ = s.spare;
  }

  static uint64_t splitmix64(uint64_t& x) {
    uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  static uint64_t rotl(uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }

  uint64_t state_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Named independent streams derived from one master seed. Each call site
// draws from its own stream (keyed by a stable string), so adding or
// reordering unrelated draws elsewhere does not perturb it.
class RngPool {
 public:
  explicit RngPool(uint64_t seed) : seed_(seed) {}

  Rng& stream(const std::string& name) {
    auto it = streams_.find(name);
    if (it == streams_.end()) {
      it = streams_.emplace(name, Rng(seed_ ^ fnv1a(name))).first;
    }
    return it->second;
  }

  uint64_t seed() const { return seed_; }

  // Stable iteration order (std::map) for serialization.
  const std::map<std::string, Rng>& streams() const { return streams_; }
  std::map<std::string, Rng>& streams() { return streams_; }

  static uint64_t fnv1a(const std::string& s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    return h;
  }

 private:
  uint64_t seed_;
  std::map<std::string, Rng> streams_;
};

}  // namespace dim3d
