#pragma once
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "msim/defaults.hpp"
#include "msim/errors.hpp"

namespace msim::workload {

struct TraceEvent {
    double arrival_s = 0.0;  // seconds since trace start, non-decreasing in file order
    std::string model_id;
    int prompt_tokens = 0;
    int output_tokens = 0;  // visible to the execution engine only, never to schedulers

    friend bool operator==(const TraceEvent&, const TraceEvent&) = default;
};

// JSONL, one event per line: {"t": <s>, "model": <id>, "prompt": <n>, "output": <n>}
std::vector<TraceEvent> parse_trace(const std::string& path);
std::vector<TraceEvent> parse_trace_lines(const std::string& content, const std::string& origin);
void write_trace(const std::string& path, const std::vector<TraceEvent>& trace);

// Replicates every event N times. The first replica is the original event;
// the rest jitter uniformly within [0, window) seconds so per-minute shape is
// kept without creating simultaneous arrivals. Deterministic in (trace, n, seed).
std::vector<TraceEvent> scale_trace(const std::vector<TraceEvent>& trace, int n,
                                    std::uint64_t seed,
                                    double jitter_window_s = defaults::kScaleJitterWindowS);

struct ModelStats {
    std::size_t request_count = 0;
    bool cv_defined = false;
    double cv_req_per_min = 0.0;  // population sigma / mu over per-minute bins
    bool idle_defined = false;    // needs at least two arrivals
    std::vector<double> idle_intervals_s;
    double median_idle_s = 0.0;
    std::size_t idle_over_threshold = 0;
    double idle_over_threshold_per_hour = 0.0;
};

struct WorkloadStats {
    double span_s = 0.0;  // last arrival - first arrival
    double idle_threshold_s = 0.0;
    std::map<std::string, ModelStats> models;
};

// Idle interval = gap between consecutive arrivals of the same model.
// Minute bins are anchored at the first arrival of the whole trace, so the
// result is invariant under uniform time translation.
WorkloadStats compute_stats(const std::vector<TraceEvent>& trace, double idle_threshold_s);

struct RateSegment {
    double start_s = 0.0;
    double end_s = 0.0;
    double rate_per_s = 0.0;
};

struct ModelProfile {
    std::string model_id;
    std::vector<RateSegment> segments;
    double prompt_median = 512.0;
    double prompt_sigma = 0.4;
    double output_median = 128.0;
    double output_sigma = 0.4;
};

struct SynthSpec {
    std::vector<ModelProfile> models;
};

// Poisson arrivals per piecewise-constant rate segment; lognormal lengths.
// Each model draws from its own sub-stream of the seed.
std::vector<TraceEvent> synth_trace(const SynthSpec& spec, std::uint64_t seed);

}  // namespace msim::workload
