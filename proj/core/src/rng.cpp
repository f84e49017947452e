#include "pnec/rng.hpp"

#include <cmath>

namespace pnec {

namespace {
constexpr uint64_t kGamma = 0x9E3779B97F4A7C15ULL;
constexpr uint64_t kSplitSalt = 0xD1B54A32D192ED03ULL;
}  // namespace

uint64_t mix64(uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

uint64_t CounterRng::at(uint64_t counter) const { return mix64(key_ + (counter + 1) * kGamma); }

CounterRng CounterRng::split(uint64_t stream) const {
  return CounterRng(mix64(key_ ^ mix64(stream * kGamma + kSplitSalt)));
}

uint64_t CounterRng::uniform_index(uint64_t n) {
  if (n == 0) return 0;
  const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  uint64_t v = next_u64();
  while (v >= limit) v = next_u64();
  return v % n;
}

double CounterRng::next_gaussian() {
  if (have_cached_) {
    have_cached_ = false;
    return cached_;
  }
  // Box-Muller on two fresh uniforms; u1 is kept away from zero.
  const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
  const double u2 = next_double();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * M_PI * u2;
  cached_ = r * std::sin(a);
  have_cached_ = true;
  return r * std::cos(a);
}

}  // namespace pnec
