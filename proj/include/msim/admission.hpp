#pragma once
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace msim::admission {

struct QueuedRequest {
    std::uint64_t id = 0;
    std::string model_id;
    double arrival_s = 0.0;
    int prompt_tokens = 0;
    double ttft_slo_s = 0.0;
    double exec_estimate_s = 0.0;  // prompt / chunked-prefill speed

    double deadline_s() const { return arrival_s + ttft_slo_s; }
};

struct ScheduleDecision {
    std::vector<QueuedRequest> admit;     // deadline-ascending; feasible as simulated at now
    std::vector<QueuedRequest> deferred;  // removed to protect the rest; re-eligible next round
    double now_s = 0.0;
};

// Moore-Hodgson selection: walk requests in deadline order, accumulate prefill
// time, and on a deadline violation drop the longest-running entry from the
// admit list. Dropped entries are deferred, never discarded. Deadline ties
// break by (arrival, id); removal-victim ties by (later deadline, id).
ScheduleDecision moore_hodgson(std::vector<QueuedRequest> queue, double now_s);

enum class DispatchStatus {
    dispatched,
    engine_busy,        // would queue inside the engine
    no_memory,          // KV headroom below first chunk + reserved buffer
    model_unavailable,  // evicted or still loading
};

using DispatchGate = std::function<DispatchStatus(const QueuedRequest&)>;

// Hands the admit list to engines in order. The first refusal stops further
// dispatch to that request's engine only; order across models follows the
// admit list, not per-model FIFO.
std::vector<std::uint64_t> dispatch(const ScheduleDecision& decision, const DispatchGate& gate);

// Merges deferred requests back for the next invocation, age preserved.
std::vector<QueuedRequest> requeue_deferred(const std::vector<QueuedRequest>& deferred,
                                            std::vector<QueuedRequest> queue);

}  // namespace msim::admission
