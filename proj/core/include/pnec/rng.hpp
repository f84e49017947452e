#pragma once

#include <cstdint>

namespace pnec {

// SplitMix64 finalizer (Steele/Lea/Flood via Vigna's fixed-increment variant).
uint64_t mix64(uint64_t z);

// Counter-based random stream: output i is mix64(key + (i+1) * gamma).
// Streams are split by hashing the parent key with a stream index, so child
// streams are independent of how much the parent has been consumed and of
// how many siblings exist. All integer arithmetic, byte-stable everywhere.
class CounterRng {
 public:
  explicit CounterRng(uint64_t key) : key_(key) {}

  CounterRng split(uint64_t stream) const;

  uint64_t next_u64() { return at(counter_++); }

  // Uniform in [0, 1) with 53 random bits.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Integer uniform in [0, n) by rejection (unbiased).
  uint64_t uniform_index(uint64_t n);

  // Standard normal via Box-Muller; the second value of each pair is cached.
  double next_gaussian();

 private:
  uint64_t at(uint64_t counter) const;

  uint64_t key_;
  uint64_t counter_ = 0;
  bool have_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace pnec
