#pragma once
#include <cmath>
#include <cstdint>

namespace msim {

// Simulation clock: integer microseconds. Event ordering must not depend on
// float rounding, so all timestamps are converted once and compared as ints.
using SimTime = std::int64_t;

inline constexpr SimTime kUsPerSecond = 1'000'000;

inline SimTime seconds_to_us(double s) { return static_cast<SimTime>(std::llround(s * 1e6)); }
inline SimTime ms_to_us(double ms) { return static_cast<SimTime>(std::llround(ms * 1e3)); }
inline double us_to_seconds(SimTime t) { return static_cast<double>(t) / 1e6; }

}  // namespace msim
