#pragma once
#include <cstdint>
#include <deque>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "msim/defaults.hpp"
#include "msim/errors.hpp"
#include "msim/pagealloc.hpp"
#include "msim/time.hpp"

namespace msim::engine {

struct ModelSpec {
    std::string model_id;
    std::uint64_t weight_bytes = 0;
    std::uint64_t token_kv_bytes = 0;
    double prefill_tps = 0.0;  // 0 -> derived from the iteration constants
    int chunk_size = 512;
    double ttft_slo_s = 1.0;
    double tpot_slo_s = 0.05;
    int tp_degree = 1;  // sharding is the placement layer's concern
};

struct EngineParams {
    double alpha_ms = defaults::kAlphaMs;
    double beta_ms_per_token = defaults::kBetaMsPerToken;
    double map_latency_ms = defaults::kMapLatencyMs;
    double engine_init_s = defaults::kEngineInitS;
    double realign_s = defaults::kRealignS;
    double reserve_frac = defaults::kReserveFrac;
};

// Steady-state chunked-prefill speed implied by the iteration cost model:
// a pure-prefill iteration processes chunk_size tokens in alpha + beta*chunk.
double effective_prefill_tps(const ModelSpec& spec, const EngineParams& params);

enum class ActivationMethod { naive, parallel };

// Weight-load latency model: piecewise-linear in loaded bytes per GPU, one
// curve per method, flat below the first anchor, linear beyond the last.
// TP models load shards in parallel across ranks and pay a sync overhead.
struct ActivationParams {
    std::vector<std::pair<double, double>> parallel_curve{{16e9, 0.7}, {28e9, 1.3}};
    std::vector<std::pair<double, double>> naive_curve{{16e9, 3.36}, {28e9, 7.1}};
    double tp_overhead_s = defaults::kTpActivationOverheadS;

    double load_latency_s(const ModelSpec& spec, ActivationMethod method) const;
};

enum class EngineStatus { pooled, aligning, loading, serving, draining };
const char* to_string(EngineStatus s);

// One inference job as the execution engine sees it (output length included).
struct EngineRequest {
    std::uint64_t id = 0;
    int prompt_tokens = 0;
    int output_tokens = 0;
    int prompt_done = 0;
    int generated = 0;
    std::uint64_t admit_seq = 0;
    std::vector<std::vector<pagealloc::TokenSlotHandle>> kv;  // one handle list per TP part

    int live_slots() const { return prompt_done + generated; }
};

struct IterationOutcome {
    SimTime duration_us = 0;
    int chunk_tokens = 0;
    int decode_tokens = 0;
    std::vector<std::uint64_t> first_tokens;
    std::vector<std::uint64_t> completions;
    std::vector<std::uint64_t> preemptions;
    std::uint64_t pages_mapped_direct = 0;
    bool prefill_paused = false;
};

// A serving-engine shell. Shells outlive models: deactivation returns the
// shell (with its reserved virtual space) to the GPU's pool for reuse.
class Engine {
public:
    Engine() = default;
    Engine(Engine&&) noexcept = default;
    Engine& operator=(Engine&&) noexcept = default;
    Engine(const Engine&) = delete;
    Engine& operator=(const Engine&) = delete;

    EngineStatus status = EngineStatus::pooled;
    std::optional<ModelSpec> model;
    std::vector<int> gpu_ids;                     // tp parts, first is the owning GPU
    std::vector<pagealloc::KvPool> pools;         // one per part, present while serving
    std::deque<EngineRequest> local_queue;
    std::vector<EngineRequest> batch;
    std::uint64_t next_admit_seq = 0;

    bool serving() const { return status == EngineStatus::serving; }
    bool drained() const { return batch.empty() && local_queue.empty(); }
    std::uint64_t reserved_pages(double reserve_frac) const;
    std::uint64_t mapped_pages() const;

    // Tokens the next prefill chunk needs, 0 when no prefill work is queued.
    std::uint64_t next_chunk_need() const;
    bool has_work() const;
    bool has_runnable_work(const std::vector<pagealloc::PhysicalLedger*>& ledgers) const;
};

// One simulated inference iteration: (a) a prefill chunk from the local queue
// head, (b) one decode token per running request, (c) duration from the linear
// cost model. Decode allocation failures preempt the most recently admitted
// request; prefill allocation failures pause prefill for this iteration.
IterationOutcome step(Engine& eng, const std::vector<pagealloc::PhysicalLedger*>& ledgers,
                      const EngineParams& params, SimTime now_us);

struct GpuState {
    int gpu_id = 0;
    pagealloc::PhysicalLedger ledger;
    std::vector<Engine> engines;
    std::set<std::pair<int, std::string>> realigned;  // (engine index, model) pairs already aligned

    GpuState(int id, std::uint64_t capacity_pages, std::uint64_t page_bytes)
        : gpu_id(id), ledger(id, capacity_pages, page_bytes) {}

    int pooled_engine() const;  // lowest-index pooled shell, -1 if none
    int engine_serving(const std::string& model_id) const;
};

struct ActivationOutcome {
    int engine_index = -1;
    SimTime init_us = 0;     // only when no pooled shell was available
    SimTime realign_us = 0;  // one-time per (engine, model layout)
    SimTime load_us = 0;
    SimTime total_us() const { return init_us + realign_us + load_us; }
};

// Reserves weight pages and starts loading `spec` into a pooled (or new)
// engine shell. Returns nullopt when the weights do not fit; the caller must
// evict first. finish_activation() flips the engine to serving.
std::optional<ActivationOutcome> activate(GpuState& gpu, const ModelSpec& spec,
                                          ActivationMethod method, const ActivationParams& act,
                                          const EngineParams& params);
void finish_activation(GpuState& gpu, int engine_index);

// Drained engines only: unmaps the pool, releases weights, returns the shell
// to the pool. The realignment cache entry is kept.
void deactivate(GpuState& gpu, int engine_index);

struct ThroughputMix {
    int prompt_tokens = 2048;
    int output_tokens = 2048;
};

struct ThroughputResult {
    double tokens_per_s = 0.0;  // generated tokens over the measurement window
    int max_batch = 0;
};

// Steady-state generation throughput with the KV pool capped at a byte
// budget: a saturated closed loop over identical requests, admission gated by
// a full-lifetime page reservation. Monotone non-decreasing in the budget.
ThroughputResult throughput_of(std::uint64_t kv_budget_bytes, const ModelSpec& spec,
                               const ThroughputMix& mix, const EngineParams& params,
                               std::uint64_t page_bytes = defaults::kPageBytes,
                               double warmup_s = 20.0, double window_s = 60.0);

}  // namespace msim::engine
