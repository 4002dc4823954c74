#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace grpolab {

// SplitMix64 finalizer; the seed-derivation primitive for the whole lab.
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derives one child seed from a parent seed and a list of stream tags
// (step index, sample id, group index, ...). Parallel and serial execution
// consume the same derived streams, which is what makes rollout fan-out
// reproducible.
inline uint64_t derive_seed(uint64_t seed, std::initializer_list<uint64_t> tags) {
  uint64_t h = splitmix64(seed ^ 0x5bd1e9955bd1e995ULL);
  for (uint64_t t : tags) h = splitmix64(h ^ t);
  return h;
}

// Deterministic RNG wrapper. mt19937_64 output is pinned by the standard;
// the distributions below are hand-rolled because the std ones are
// implementation-defined and would break cross-platform byte-exactness.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(splitmix64(seed)) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1), 53 random bits.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n), rejection sampled (no modulo bias).
  int uniform_int(int n) {
    const uint64_t bound = static_cast<uint64_t>(n);
    const uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    uint64_t x;
    do {
      x = gen_();
    } while (x >= limit);
    return static_cast<int>(x % bound);
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace grpolab
