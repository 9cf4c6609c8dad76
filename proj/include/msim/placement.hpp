#pragma once
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "msim/defaults.hpp"
#include "msim/engine.hpp"
#include "msim/errors.hpp"

namespace msim::placement {

class PlacementError : public std::runtime_error {
public:
    explicit PlacementError(const std::string& what) : std::runtime_error(what) {}
};

struct ResidentModel {
    double idle_s = 0.0;
    double ttft_slo_s = 0.0;
    std::uint64_t weight_bytes = 0;
    std::uint64_t weight_pages = 0;
};

// Scheduler-facing snapshot of one GPU.
struct GpuView {
    int gpu_id = 0;
    std::uint64_t capacity_bytes = 0;  // usable for weights + KV
    std::uint64_t weight_bytes = 0;    // resident weights
    double w_req_rate = 0.0;           // sum of r_j / s_j over residents
    std::uint64_t capacity_pages = 0;
    std::uint64_t free_pages = 0;
    std::uint64_t page_bytes = defaults::kPageBytes;
    std::map<std::string, ResidentModel> residents;

    std::uint64_t shared_kv_bytes() const {
        return weight_bytes >= capacity_bytes ? 0 : capacity_bytes - weight_bytes;
    }
};

// KV pressure ratio: demand per GB of memory left for KV. The scheduler's
// balancing objective; undefined when nothing is left.
double kvpr(double w_req_rate, double shared_kv_bytes);  // throws on shared_kv <= 0

struct ModelDemand {
    engine::ModelSpec spec;
    double rate = 0.0;                  // measured request rate r_j
    std::vector<int> current_gpus;      // empty when unplaced; one entry per TP part
};

struct PartDemand {
    std::string model_id;
    int part_index = 0;
    double demand = 0.0;  // (r / tp) / s
    std::uint64_t weight_bytes = 0;
    std::optional<int> current_gpu;
};

// TP models become tp_degree parts with weight/tp and rate/tp each; the parts
// share one sort key and must land on pairwise distinct GPUs.
std::vector<PartDemand> tp_decompose(const ModelDemand& model);

struct Migration {
    std::string model_id;
    int part_index = 0;
    int from_gpu = 0;
    int to_gpu = 0;
};

struct PlacementPlan {
    std::map<std::string, std::vector<int>> assignment;  // model -> gpu per part
    std::vector<Migration> migrations;
    std::vector<double> kvpr_before;  // -1 where undefined
    std::vector<double> kvpr_after;
    double max_kvpr_after = 0.0;
    // Bound bookkeeping for the critical GPU (Graham-style analysis).
    int critical_gpu = -1;
    double critical_shared_before_bytes = 0.0;  // shared KV just before its last model
    double critical_last_weight_bytes = 0.0;
};

// Greedy KVPR-balancing placement: models sorted by r/s descending, each
// assigned to the GPU minimizing KVPR; a placed model migrates only when the
// improvement over its current GPU exceeds tau. GPU state updates as parts
// are assigned, starting from empty GPUs.
PlacementPlan place_models(const std::vector<ModelDemand>& models,
                           const std::vector<GpuView>& gpus, double tau_per_gb);

struct Eviction {
    int gpu_id = 0;
    std::string model_id;
};

using PressurePredicate = std::function<bool(const GpuView&)>;

// Evicts only under pressure; among candidates idle past the threshold, the
// largest-SLO model goes first, until the predicate clears.
std::vector<Eviction> eviction_tick(std::vector<GpuView> gpus, double idle_threshold_s,
                                    const PressurePredicate& pressured);

// Lowest-KVPR GPU with room for the model's weights; nullopt when none fits.
std::optional<int> activate_on_arrival(const engine::ModelSpec& spec,
                                       const std::vector<GpuView>& gpus);

// TP variant: distinct lowest-KVPR GPUs, one per part.
std::optional<std::vector<int>> activate_on_arrival_tp(const engine::ModelSpec& spec,
                                                       const std::vector<GpuView>& gpus);

}  // namespace msim::placement
