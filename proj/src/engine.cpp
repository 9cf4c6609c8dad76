#include "msim/engine.hpp"

#include <algorithm>
#include <cmath>

namespace msim::engine {

const char* to_string(EngineStatus s) {
    switch (s) {
        case EngineStatus::pooled: return "pooled";
        case EngineStatus::aligning: return "aligning";
        case EngineStatus::loading: return "loading";
        case EngineStatus::serving: return "serving";
        case EngineStatus::draining: return "draining";
    }
    return "?";
}

double effective_prefill_tps(const ModelSpec& spec, const EngineParams& params) {
    if (spec.prefill_tps > 0.0) return spec.prefill_tps;
    const double iter_ms = params.alpha_ms + params.beta_ms_per_token * spec.chunk_size;
    return 1000.0 * spec.chunk_size / iter_ms;
}

namespace {

double interp_curve(const std::vector<std::pair<double, double>>& curve, double x) {
    if (curve.empty()) throw UsageError("activation curve is empty");
    if (x <= curve.front().first) return curve.front().second;
    for (std::size_t i = 1; i < curve.size(); ++i) {
        if (x <= curve[i].first) {
            const auto& [x0, y0] = curve[i - 1];
            const auto& [x1, y1] = curve[i];
            return y0 + (x - x0) / (x1 - x0) * (y1 - y0);
        }
    }
    const auto& [x0, y0] = curve[curve.size() - 2];
    const auto& [x1, y1] = curve.back();
    return y1 + (x - x1) / (x1 - x0) * (y1 - y0);
}

}  // namespace

double ActivationParams::load_latency_s(const ModelSpec& spec, ActivationMethod method) const {
    const int tp = std::max(1, spec.tp_degree);
    const double per_gpu_bytes = static_cast<double>(spec.weight_bytes) / tp;
    const auto& curve = method == ActivationMethod::parallel ? parallel_curve : naive_curve;
    double lat = interp_curve(curve, per_gpu_bytes);
    if (tp >= 2) lat += tp_overhead_s;  // shards already load in parallel, ranks must sync
    return lat;
}

std::uint64_t Engine::reserved_pages(double reserve_frac) const {
    return static_cast<std::uint64_t>(std::ceil(reserve_frac * static_cast<double>(mapped_pages())));
}

std::uint64_t Engine::mapped_pages() const {
    std::uint64_t total = 0;
    for (const auto& pool : pools) total += pool.mapped_pages();
    return total;
}

std::uint64_t Engine::next_chunk_need() const {
    if (!model) return 0;
    const EngineRequest* target = nullptr;
    for (const auto& r : batch) {
        if (r.prompt_done < r.prompt_tokens) {
            target = &r;
            break;
        }
    }
    if (!target && !local_queue.empty()) target = &local_queue.front();
    if (!target) return 0;
    const int remaining = target->prompt_tokens - target->prompt_done;
    const int chunk = std::min(model->chunk_size, remaining);
    const bool completes = chunk == remaining;
    return static_cast<std::uint64_t>(chunk) + (completes ? 1 : 0);
}

bool Engine::has_work() const {
    return !batch.empty() || !local_queue.empty();
}

bool Engine::has_runnable_work(const std::vector<pagealloc::PhysicalLedger*>& ledgers) const {
    if (status != EngineStatus::serving && status != EngineStatus::draining) return false;
    for (const auto& r : batch) {
        if (r.prompt_done == r.prompt_tokens && r.generated < r.output_tokens) return true;
    }
    const std::uint64_t need = next_chunk_need();
    if (need == 0) return false;
    for (std::size_t part = 0; part < pools.size(); ++part) {
        if (!pools[part].can_alloc(*ledgers[part], need)) return false;
    }
    return true;
}

namespace {

struct PartAlloc {
    std::vector<std::vector<pagealloc::TokenSlotHandle>> handles;  // per part
    std::uint64_t pages_mapped_direct = 0;
    bool ok = false;
};

// Allocates `tokens` slots in every TP part or nothing at all.
PartAlloc alloc_all_parts(Engine& eng, const std::vector<pagealloc::PhysicalLedger*>& ledgers,
                          std::uint64_t tokens) {
    PartAlloc out;
    out.handles.resize(eng.pools.size());
    for (std::size_t part = 0; part < eng.pools.size(); ++part) {
        auto res = pagealloc::alloc_kv(eng.pools[part], *ledgers[part], tokens);
        if (!res.ok()) {
            for (std::size_t p = 0; p < part; ++p) {
                pagealloc::free_kv(eng.pools[p], *ledgers[p], out.handles[p]);
            }
            return out;
        }
        out.handles[part] = std::move(res.handles);
        out.pages_mapped_direct += res.pages_mapped;
    }
    out.ok = true;
    return out;
}

void free_request_kv(Engine& eng, const std::vector<pagealloc::PhysicalLedger*>& ledgers,
                     EngineRequest& req) {
    for (std::size_t part = 0; part < req.kv.size(); ++part) {
        if (!req.kv[part].empty()) {
            pagealloc::free_kv(eng.pools[part], *ledgers[part], req.kv[part]);
            req.kv[part].clear();
        }
    }
}

// Most recently admitted request loses its work: KV freed, re-queued at the
// head of the local queue for a fresh prefill.
bool preempt_latest(Engine& eng, const std::vector<pagealloc::PhysicalLedger*>& ledgers,
                    IterationOutcome& out) {
    if (eng.batch.empty()) return false;
    auto victim = eng.batch.begin();
    for (auto it = eng.batch.begin() + 1; it != eng.batch.end(); ++it) {
        if (it->admit_seq > victim->admit_seq) victim = it;
    }
    EngineRequest req = *victim;
    free_request_kv(eng, ledgers, req);
    eng.batch.erase(victim);
    req.prompt_done = 0;
    req.generated = 0;
    req.kv.assign(eng.pools.size(), {});
    out.preemptions.push_back(req.id);
    eng.local_queue.push_front(std::move(req));
    return true;
}

}  // namespace

IterationOutcome step(Engine& eng, const std::vector<pagealloc::PhysicalLedger*>& ledgers,
                      const EngineParams& params, SimTime now_us) {
    if (eng.status != EngineStatus::serving && eng.status != EngineStatus::draining) {
        throw UsageError("step: engine is not serving");
    }
    if (eng.pools.size() != ledgers.size()) {
        throw UsageError("step: ledger list does not match TP parts");
    }
    for (auto* ledger : ledgers) ledger->set_time(now_us);

    IterationOutcome out;

    // (a) prefill chunk for the in-flight prefill, or admit the queue head.
    EngineRequest* prefill = nullptr;
    for (auto& r : eng.batch) {
        if (r.prompt_done < r.prompt_tokens) {
            prefill = &r;
            break;
        }
    }
    bool admit_from_queue = false;
    if (!prefill && !eng.local_queue.empty()) {
        prefill = &eng.local_queue.front();
        admit_from_queue = true;
    }
    if (prefill) {
        const int remaining = prefill->prompt_tokens - prefill->prompt_done;
        const int chunk = std::min(eng.model->chunk_size, remaining);
        const bool completes = chunk == remaining;
        const std::uint64_t need = static_cast<std::uint64_t>(chunk) + (completes ? 1 : 0);
        PartAlloc alloc = alloc_all_parts(eng, ledgers, need);
        if (!alloc.ok) {
            out.prefill_paused = true;  // retried next iteration
        } else {
            if (admit_from_queue) {
                eng.batch.push_back(std::move(eng.local_queue.front()));
                eng.local_queue.pop_front();
                prefill = &eng.batch.back();
                prefill->admit_seq = eng.next_admit_seq++;
                prefill->kv.assign(eng.pools.size(), {});
            }
            for (std::size_t part = 0; part < alloc.handles.size(); ++part) {
                auto& kv = prefill->kv[part];
                kv.insert(kv.end(), alloc.handles[part].begin(), alloc.handles[part].end());
            }
            out.pages_mapped_direct += alloc.pages_mapped_direct;
            out.chunk_tokens = chunk;
            prefill->prompt_done += chunk;
            if (completes) {
                prefill->generated = 1;  // prefill emits the first token
                out.first_tokens.push_back(prefill->id);
            }
        }
    }

    // (b) one decode token per running request, in admission order.
    std::vector<std::uint64_t> decoded_ids;
    std::vector<std::size_t> order(eng.batch.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return eng.batch[a].admit_seq < eng.batch[b].admit_seq;
    });
    std::vector<std::uint64_t> decode_targets;
    for (std::size_t i : order) decode_targets.push_back(eng.batch[i].id);
    for (std::uint64_t id : decode_targets) {
        auto it = std::find_if(eng.batch.begin(), eng.batch.end(),
                               [&](const EngineRequest& r) { return r.id == id; });
        if (it == eng.batch.end()) continue;  // preempted earlier in this loop
        if (it->prompt_done < it->prompt_tokens || it->generated == 0) continue;
        if (std::find(out.first_tokens.begin(), out.first_tokens.end(), id) !=
            out.first_tokens.end()) {
            continue;  // first token came out of this iteration's prefill
        }
        if (it->generated >= it->output_tokens) continue;
        PartAlloc alloc = alloc_all_parts(eng, ledgers, 1);
        while (!alloc.ok) {
            if (!preempt_latest(eng, ledgers, out)) break;
            it = std::find_if(eng.batch.begin(), eng.batch.end(),
                              [&](const EngineRequest& r) { return r.id == id; });
            if (it == eng.batch.end()) break;  // the request preempted itself
            alloc = alloc_all_parts(eng, ledgers, 1);
        }
        if (it == eng.batch.end() || !alloc.ok) continue;
        for (std::size_t part = 0; part < alloc.handles.size(); ++part) {
            it->kv[part].insert(it->kv[part].end(), alloc.handles[part].begin(),
                                alloc.handles[part].end());
        }
        out.pages_mapped_direct += alloc.pages_mapped_direct;
        ++it->generated;
        ++out.decode_tokens;
        decoded_ids.push_back(id);
    }

    // (d) completions free their KV immediately.
    for (auto it = eng.batch.begin(); it != eng.batch.end();) {
        if (it->generated >= it->output_tokens && it->prompt_done == it->prompt_tokens) {
            free_request_kv(eng, ledgers, *it);
            out.completions.push_back(it->id);
            it = eng.batch.erase(it);
        } else {
            ++it;
        }
    }

    const double tokens = out.decode_tokens + out.chunk_tokens;
    const double duration_ms = params.alpha_ms + params.beta_ms_per_token * tokens +
                               params.map_latency_ms * static_cast<double>(out.pages_mapped_direct);
    out.duration_us = ms_to_us(duration_ms);
    return out;
}

int GpuState::pooled_engine() const {
    for (std::size_t i = 0; i < engines.size(); ++i) {
        if (engines[i].status == EngineStatus::pooled) return static_cast<int>(i);
    }
    return -1;
}

int GpuState::engine_serving(const std::string& model_id) const {
    for (std::size_t i = 0; i < engines.size(); ++i) {
        const Engine& e = engines[i];
        if (e.model && e.model->model_id == model_id &&
            (e.status == EngineStatus::serving || e.status == EngineStatus::loading ||
             e.status == EngineStatus::draining || e.status == EngineStatus::aligning)) {
            return static_cast<int>(i);
        }
    }
    return -1;
}

std::optional<ActivationOutcome> activate(GpuState& gpu, const ModelSpec& spec,
                                          ActivationMethod method, const ActivationParams& act,
                                          const EngineParams& params) {
    if (gpu.engine_serving(spec.model_id) >= 0) {
        throw UsageError("activate: model already active on this GPU: " + spec.model_id);
    }
    const std::uint64_t page = gpu.ledger.page_bytes();
    const std::uint64_t weight_pages = (spec.weight_bytes + page - 1) / page;
    if (weight_pages > gpu.ledger.free_pages()) return std::nullopt;

    ActivationOutcome outcome;
    outcome.engine_index = gpu.pooled_engine();
    if (outcome.engine_index < 0) {
        gpu.engines.emplace_back();
        outcome.engine_index = static_cast<int>(gpu.engines.size()) - 1;
        outcome.init_us = seconds_to_us(params.engine_init_s);
    }
    Engine& eng = gpu.engines[static_cast<std::size_t>(outcome.engine_index)];

    gpu.ledger.reserve_weight_pages(spec.model_id, weight_pages);
    const auto key = std::make_pair(outcome.engine_index, spec.model_id);
    if (!gpu.realigned.count(key)) {
        outcome.realign_us = seconds_to_us(params.realign_s);
        gpu.realigned.insert(key);
    }
    outcome.load_us = seconds_to_us(act.load_latency_s(spec, method));

    eng.model = spec;
    eng.gpu_ids = {gpu.gpu_id};
    eng.status = outcome.realign_us > 0 ? EngineStatus::aligning : EngineStatus::loading;
    return outcome;
}

void finish_activation(GpuState& gpu, int engine_index) {
    Engine& eng = gpu.engines.at(static_cast<std::size_t>(engine_index));
    if (eng.status != EngineStatus::loading && eng.status != EngineStatus::aligning) {
        throw UsageError("finish_activation: engine is not loading");
    }
    eng.pools.clear();
    eng.pools.push_back(pagealloc::alloc_kvcache(gpu.ledger, eng.model->model_id,
                                                 eng.model->token_kv_bytes,
                                                 gpu.ledger.capacity_pages()));
    eng.status = EngineStatus::serving;
}

void deactivate(GpuState& gpu, int engine_index) {
    Engine& eng = gpu.engines.at(static_cast<std::size_t>(engine_index));
    if (eng.status == EngineStatus::pooled) throw UsageError("deactivate: engine already pooled");
    if (!eng.drained()) throw UsageError("deactivate: engine still has live requests");
    for (auto& pool : eng.pools) pagealloc::free_kvcache(gpu.ledger, pool);
    eng.pools.clear();
    gpu.ledger.release_weight_pages(eng.model->model_id);
    eng.model.reset();
    eng.status = EngineStatus::pooled;
    eng.next_admit_seq = 0;
}

ThroughputResult throughput_of(std::uint64_t kv_budget_bytes, const ModelSpec& spec,
                               const ThroughputMix& mix, const EngineParams& params,
                               std::uint64_t page_bytes, double warmup_s, double window_s) {
    const std::uint64_t capacity_pages = kv_budget_bytes / page_bytes;
    const std::uint64_t tpp = page_bytes / spec.token_kv_bytes;
    const std::uint64_t tokens_per_req =
        static_cast<std::uint64_t>(mix.prompt_tokens) + mix.output_tokens + 1;
    const std::uint64_t pages_per_req = (tokens_per_req + tpp - 1) / tpp;
    if (pages_per_req > capacity_pages) {
        throw UsageError("throughput_of: budget below a single request's KV need");
    }

    pagealloc::PhysicalLedger ledger(0, capacity_pages, page_bytes);
    Engine eng;
    eng.model = spec;
    eng.model->tp_degree = 1;
    eng.gpu_ids = {0};
    eng.status = EngineStatus::serving;
    eng.pools.push_back(pagealloc::alloc_kvcache(ledger, spec.model_id, spec.token_kv_bytes,
                                                 capacity_pages));
    std::vector<pagealloc::PhysicalLedger*> ledgers{&ledger};

    // Closed loop: admit whenever a full-lifetime page reservation fits, so the
    // batch rides the budget cap without allocation churn.
    std::uint64_t next_id = 1;
    std::uint64_t reserved_pages = 0;
    std::uint64_t live_requests = 0;
    SimTime now = 0;
    const SimTime warm_end = seconds_to_us(warmup_s);
    const SimTime run_end = seconds_to_us(warmup_s + window_s);
    std::uint64_t window_tokens = 0;
    ThroughputResult result;

    while (now < run_end) {
        while (reserved_pages + pages_per_req <= capacity_pages && eng.local_queue.size() < 4) {
            EngineRequest req;
            req.id = next_id++;
            req.prompt_tokens = mix.prompt_tokens;
            req.output_tokens = mix.output_tokens;
            eng.local_queue.push_back(std::move(req));
            reserved_pages += pages_per_req;
            ++live_requests;
        }
        IterationOutcome out = step(eng, ledgers, params, now);
        now += out.duration_us;
        result.max_batch = std::max(result.max_batch, static_cast<int>(eng.batch.size()));
        const std::uint64_t generated =
            static_cast<std::uint64_t>(out.decode_tokens) + out.first_tokens.size();
        if (now > warm_end) window_tokens += generated;
        const std::uint64_t done = out.completions.size();
        reserved_pages -= done * pages_per_req;
        live_requests -= done;
    }
    result.tokens_per_s = static_cast<double>(window_tokens) /
                          us_to_seconds(run_end - warm_end);
    return result;
}

}  // namespace msim::engine
