#pragma once
#include <cstdint>

// Shipped defaults for every tunable. RunConfig mirrors these; a unit test
// asserts the two never drift apart.
namespace msim::defaults {

// Memory / allocator
inline constexpr std::uint64_t kPageBytes = 2ull << 20;  // 2 MiB mapping granularity
inline constexpr std::uint64_t kBufferTargetPages = 8;   // pre-mapped pages per GPU
inline constexpr double kMapLatencyMs = 0.2;             // per page, charged on buffer miss

// Engine iteration cost model: t = alpha + beta * tokens_in_iteration
inline constexpr double kAlphaMs = 6.0;
inline constexpr double kBetaMsPerToken = 0.025;
inline constexpr double kReserveFrac = 0.05;    // per-engine admission headroom
inline constexpr double kEngineInitS = 5.0;     // cold engine shell creation
inline constexpr double kRealignS = 0.05;       // one-time layout realign per (engine, model)
inline constexpr double kTpActivationOverheadS = 0.725;  // rank sync for tp >= 2 loads

// Global scheduler
inline constexpr double kTauPerGb = 0.05;          // migration threshold, KVPR units
inline constexpr double kPressureFreeFrac = 0.10;  // pressure = free pages below this fraction
inline constexpr double kIdleEvictS = 10.0;        // idle time before eviction candidacy
inline constexpr double kTickPeriodS = 10.0;
inline constexpr double kRateWindowS = 60.0;       // EMA window for request rates

// Workload
inline constexpr double kScaleJitterWindowS = 1.0;  // replica jitter, uniform [0, window)

// Policy parameters
inline constexpr double kQlmGroupWindowS = 2.0;
inline constexpr int kEnginePoolSize = 8;

}  // namespace msim::defaults
