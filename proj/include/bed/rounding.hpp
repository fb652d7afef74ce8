#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>

// Rounding contract shared by the float simulation and the integer engine.
// Both sides must round half away from zero and saturate, never wrap.

namespace bed {

inline double round_half_away(double v) { return std::round(v); }

template <typename T>
constexpr T saturate(std::int64_t v) {
  return static_cast<T>(std::clamp<std::int64_t>(v, std::numeric_limits<T>::min(),
                                                 std::numeric_limits<T>::max()));
}

/// v / 2^shift rounded half away from zero. Negative shift multiplies.
constexpr std::int64_t rounding_shift(std::int64_t v, int shift) {
  if (shift <= 0) return v * (std::int64_t{1} << -shift);
  const std::int64_t half = std::int64_t{1} << (shift - 1);
  const std::int64_t mag = v < 0 ? -v : v;
  const std::int64_t q = (mag + half) >> shift;
  return v < 0 ? -q : q;
}

}  // namespace bed
