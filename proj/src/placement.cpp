#include "msim/placement.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace msim::placement {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double kvpr_or_inf(double w_req_rate, double shared_kv_bytes) {
    if (shared_kv_bytes <= 0.0) return kInf;
    return w_req_rate / (shared_kv_bytes / 1e9);
}

}  // namespace

double kvpr(double w_req_rate, double shared_kv_bytes) {
    if (shared_kv_bytes <= 0.0) {
        throw UsageError("kvpr: undefined pressure, no shared KV memory left");
    }
    return w_req_rate / (shared_kv_bytes / 1e9);
}

std::vector<PartDemand> tp_decompose(const ModelDemand& model) {
    const int tp = std::max(1, model.spec.tp_degree);
    std::vector<PartDemand> parts;
    parts.reserve(tp);
    for (int k = 0; k < tp; ++k) {
        PartDemand p;
        p.model_id = model.spec.model_id;
        p.part_index = k;
        p.demand = (model.rate / tp) / model.spec.ttft_slo_s;
        p.weight_bytes = model.spec.weight_bytes / tp;
        if (static_cast<std::size_t>(k) < model.current_gpus.size()) {
            p.current_gpu = model.current_gpus[k];
        }
        parts.push_back(std::move(p));
    }
    return parts;
}

PlacementPlan place_models(const std::vector<ModelDemand>& models,
                           const std::vector<GpuView>& gpus, double tau_per_gb) {
    const int n = static_cast<int>(gpus.size());
    if (n == 0) throw PlacementError("place_models: no GPUs");

    std::vector<PartDemand> parts;
    for (const auto& m : models) {
        if (m.spec.tp_degree > n) {
            throw PlacementError("place_models: model " + m.spec.model_id +
                                 " needs more GPUs than exist for TP");
        }
        auto decomposed = tp_decompose(m);
        parts.insert(parts.end(), decomposed.begin(), decomposed.end());
    }
    std::stable_sort(parts.begin(), parts.end(), [](const PartDemand& a, const PartDemand& b) {
        if (a.demand != b.demand) return a.demand > b.demand;
        if (a.model_id != b.model_id) return a.model_id < b.model_id;
        return a.part_index < b.part_index;
    });

    PlacementPlan plan;
    plan.kvpr_before.reserve(gpus.size());
    for (const auto& g : gpus) {
        const double shared = static_cast<double>(g.shared_kv_bytes());
        plan.kvpr_before.push_back(shared > 0.0 ? kvpr(g.w_req_rate, shared) : -1.0);
    }

    // Running state per Algorithm semantics: every GPU starts empty and fills
    // as parts are assigned in sorted order.
    std::vector<double> w_rate(gpus.size(), 0.0);
    std::vector<double> shared(gpus.size());
    std::vector<double> shared_before_last(gpus.size(), 0.0);
    std::vector<double> last_weight(gpus.size(), 0.0);
    for (std::size_t g = 0; g < gpus.size(); ++g) {
        shared[g] = static_cast<double>(gpus[g].capacity_bytes);
    }
    // gpu -> models with a part already assigned there (TP distinctness).
    std::vector<std::vector<std::string>> hosting(gpus.size());

    for (const PartDemand& part : parts) {
        const double w = static_cast<double>(part.weight_bytes);
        int best = -1;
        double best_r = kInf;
        for (int g = 0; g < n; ++g) {
            if (shared[g] <= w) continue;  // weights must leave KV room
            const auto& hosted = hosting[static_cast<std::size_t>(g)];
            if (std::find(hosted.begin(), hosted.end(), part.model_id) != hosted.end()) {
                continue;  // sibling part here: fall through to the next-lowest KVPR
            }
            const double r = kvpr_or_inf(w_rate[g], shared[g]);
            if (r < best_r) {
                best_r = r;
                best = g;
            }
        }
        if (best < 0) {
            throw PlacementError("place_models: model " + part.model_id + " fits on no GPU");
        }

        int chosen = best;
        if (part.current_gpu) {
            const int cur = *part.current_gpu;
            const auto& hosted = hosting[static_cast<std::size_t>(cur)];
            const bool cur_valid =
                cur >= 0 && cur < n && shared[cur] > w &&
                std::find(hosted.begin(), hosted.end(), part.model_id) == hosted.end();
            if (cur_valid) {
                const double current_r = kvpr_or_inf(w_rate[cur], shared[cur]);
                chosen = (current_r - best_r > tau_per_gb) ? best : cur;
            }
            // An invalid current GPU (no longer fits, or now hosts a sibling)
            // forces the migration.
            if (chosen != cur) {
                plan.migrations.push_back(Migration{part.model_id, part.part_index, cur, chosen});
            }
        }

        w_rate[chosen] += part.demand;
        shared_before_last[chosen] = shared[chosen];
        shared[chosen] -= w;
        last_weight[chosen] = w;
        hosting[static_cast<std::size_t>(chosen)].push_back(part.model_id);
        plan.assignment[part.model_id].push_back(chosen);
    }

    plan.kvpr_after.reserve(gpus.size());
    for (int g = 0; g < n; ++g) {
        const double r = w_rate[g] == 0.0 && shared[g] > 0.0 ? 0.0 : kvpr_or_inf(w_rate[g], shared[g]);
        plan.kvpr_after.push_back(std::isinf(r) ? -1.0 : r);
        if (r > plan.max_kvpr_after && !std::isinf(r)) {
            plan.max_kvpr_after = r;
            plan.critical_gpu = g;
            plan.critical_shared_before_bytes = shared_before_last[g];
            plan.critical_last_weight_bytes = last_weight[g];
        }
    }
    return plan;
}

std::vector<Eviction> eviction_tick(std::vector<GpuView> gpus, double idle_threshold_s,
                                    const PressurePredicate& pressured) {
    std::vector<Eviction> evictions;
    for (auto& gpu : gpus) {
        while (pressured(gpu)) {
            const std::string* victim = nullptr;
            double victim_slo = -1.0;
            for (const auto& [model, res] : gpu.residents) {
                if (res.idle_s < idle_threshold_s) continue;
                if (res.ttft_slo_s > victim_slo) {
                    victim_slo = res.ttft_slo_s;
                    victim = &model;
                }
            }
            if (!victim) break;
            Eviction ev{gpu.gpu_id, *victim};
            const ResidentModel res = gpu.residents.at(*victim);
            gpu.weight_bytes -= res.weight_bytes;
            gpu.free_pages += res.weight_pages;
            gpu.residents.erase(*victim);
            evictions.push_back(std::move(ev));
        }
    }
    return evictions;
}

namespace {

std::uint64_t weight_pages_needed(std::uint64_t weight_bytes, std::uint64_t page_bytes) {
    return (weight_bytes + page_bytes - 1) / page_bytes;
}

}  // namespace

std::optional<int> activate_on_arrival(const engine::ModelSpec& spec,
                                       const std::vector<GpuView>& gpus) {
    int best = -1;
    double best_r = kInf;
    for (const auto& g : gpus) {
        if (weight_pages_needed(spec.weight_bytes, g.page_bytes) > g.free_pages) continue;
        const double r = kvpr_or_inf(g.w_req_rate, static_cast<double>(g.shared_kv_bytes()));
        if (r < best_r) {
            best_r = r;
            best = g.gpu_id;
        }
    }
    if (best < 0) return std::nullopt;
    return best;
}

std::optional<std::vector<int>> activate_on_arrival_tp(const engine::ModelSpec& spec,
                                                       const std::vector<GpuView>& gpus) {
    const int tp = std::max(1, spec.tp_degree);
    const std::uint64_t per_part = spec.weight_bytes / tp;
    std::vector<std::pair<double, int>> candidates;
    for (const auto& g : gpus) {
        if (weight_pages_needed(per_part, g.page_bytes) > g.free_pages) continue;
        candidates.emplace_back(kvpr_or_inf(g.w_req_rate, static_cast<double>(g.shared_kv_bytes())),
                                g.gpu_id);
    }
    if (static_cast<int>(candidates.size()) < tp) return std::nullopt;
    std::sort(candidates.begin(), candidates.end());
    std::vector<int> chosen;
    for (int k = 0; k < tp; ++k) chosen.push_back(candidates[static_cast<std::size_t>(k)].second);
    return chosen;
}

}  // namespace msim::placement
