#include <doctest.h>

#include <cmath>

#include "msim/engine.hpp"

using namespace msim;
using namespace msim::engine;

namespace {

ModelSpec class_8b() {
    ModelSpec s;
    s.model_id = "8b";
    s.weight_bytes = 16'000'000'000ull;
    s.token_kv_bytes = 16 << 10;
    s.chunk_size = 512;
    return s;
}

ModelSpec class_14b() {
    ModelSpec s = class_8b();
    s.model_id = "14b";
    s.weight_bytes = 28'000'000'000ull;
    return s;
}

ModelSpec class_70b_tp8() {
    ModelSpec s = class_8b();
    s.model_id = "70b";
    s.weight_bytes = 140'000'000'000ull;
    s.tp_degree = 8;
    return s;
}

// A self-contained engine on one small ledger. tokens_per_page stays tiny so
// page-level behavior is easy to script.
struct Bench {
    pagealloc::PhysicalLedger ledger;
    Engine eng;
    EngineParams params;

    explicit Bench(std::uint64_t capacity_pages, std::uint64_t token_bytes = 1 << 20)
        : ledger(0, capacity_pages) {
        ModelSpec spec = class_8b();
        spec.token_kv_bytes = token_bytes;  // 1 MiB -> 2 tokens per page
        eng.model = spec;
        eng.gpu_ids = {0};
        eng.status = EngineStatus::serving;
        eng.pools.push_back(pagealloc::alloc_kvcache(ledger, spec.model_id, token_bytes,
                                                     capacity_pages));
        params.map_latency_ms = 0.0;  // keep durations on the token model only
    }

    IterationOutcome run(SimTime now = 0) { return step(eng, {&ledger}, params, now); }

    void push(std::uint64_t id, int prompt, int output) {
        EngineRequest r;
        r.id = id;
        r.prompt_tokens = prompt;
        r.output_tokens = output;
        eng.local_queue.push_back(r);
    }
};

}  // namespace

TEST_CASE("activation model returns the measured constants") {
    ActivationParams act;
    CHECK(act.load_latency_s(class_8b(), ActivationMethod::parallel) ==
          doctest::Approx(0.7).epsilon(1e-9));
    CHECK(act.load_latency_s(class_14b(), ActivationMethod::parallel) ==
          doctest::Approx(1.3).epsilon(1e-9));
    CHECK(act.load_latency_s(class_14b(), ActivationMethod::naive) ==
          doctest::Approx(7.1).epsilon(1e-9));
    CHECK(act.load_latency_s(class_70b_tp8(), ActivationMethod::parallel) ==
          doctest::Approx(1.5).epsilon(1e-9));
    const double speedup = act.load_latency_s(class_14b(), ActivationMethod::naive) /
                           act.load_latency_s(class_14b(), ActivationMethod::parallel);
    CHECK(speedup == doctest::Approx(5.5).epsilon(0.01));
}

TEST_CASE("activation model: parallel never exceeds naive") {
    ActivationParams act;
    for (double gb = 1.0; gb <= 200.0; gb += 7.0) {
        for (int tp : {1, 2, 4, 8}) {
            ModelSpec s = class_8b();
            s.weight_bytes = static_cast<std::uint64_t>(gb * 1e9);
            s.tp_degree = tp;
            CHECK(act.load_latency_s(s, ActivationMethod::parallel) <=
                  act.load_latency_s(s, ActivationMethod::naive));
        }
    }
}

TEST_CASE("prefill time example: 4096 tokens at 16384 tok/s is 0.25 s") {
    ModelSpec s = class_8b();
    s.prefill_tps = 16384.0;
    EngineParams params;
    CHECK(4096.0 / effective_prefill_tps(s, params) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("step: single-chunk prompt finishes prefill and emits the first token") {
    Bench bench(1024);
    bench.push(1, 512, 4);
    auto out = bench.run();
    CHECK(out.chunk_tokens == 512);
    REQUIRE(out.first_tokens.size() == 1);
    CHECK(out.first_tokens[0] == 1);
    CHECK(out.decode_tokens == 0);
    // 512 prompt slots + the emitted token.
    CHECK(bench.eng.batch.at(0).live_slots() == 513);
    const double expect_ms = bench.params.alpha_ms + bench.params.beta_ms_per_token * 512;
    CHECK(out.duration_us == ms_to_us(expect_ms));
}

TEST_CASE("step: chunked prefill spans iterations, decode interleaves") {
    Bench bench(4096);
    bench.push(1, 1200, 8);  // chunks of 512: 512 + 512 + 176
    auto o1 = bench.run();
    CHECK(o1.chunk_tokens == 512);
    CHECK(o1.first_tokens.empty());
    auto o2 = bench.run();
    CHECK(o2.chunk_tokens == 512);
    auto o3 = bench.run();
    CHECK(o3.chunk_tokens == 176);
    REQUIRE(o3.first_tokens.size() == 1);

    bench.push(2, 512, 4);
    auto o4 = bench.run();  // request 2 prefills while request 1 decodes
    CHECK(o4.chunk_tokens == 512);
    CHECK(o4.decode_tokens == 1);
    REQUIRE(o4.first_tokens.size() == 1);
    CHECK(o4.first_tokens[0] == 2);

    // Request 1 finishes its 8 tokens; completions free every slot.
    int completed = 0;
    for (int i = 0; i < 16 && completed < 2; ++i) {
        auto out = bench.run();
        completed += static_cast<int>(out.completions.size());
    }
    CHECK(completed == 2);
    CHECK(bench.eng.batch.empty());
    CHECK(bench.ledger.mapped_pages() == 0);
}

TEST_CASE("step: kv accounting tracks processed tokens exactly") {
    Bench bench(4096);
    bench.push(1, 700, 5);
    bench.push(2, 300, 3);
    for (int i = 0; i < 12; ++i) {
        bench.run();
        std::uint64_t live = 0;
        for (const auto& r : bench.eng.batch) {
            CHECK(static_cast<int>(r.kv[0].size()) == r.live_slots());
            live += r.kv[0].size();
        }
        CHECK(bench.eng.pools[0].occupied_slots() == live);
        bench.ledger.check_invariants();
    }
}

TEST_CASE("step: decode allocation failure preempts the newest request") {
    // Hand-replayed allocator script: 2 tokens per page, 8 pages = 16 slots,
    // chunk 4, three requests of prompt 4 / output 4 (5 slots after prefill).
    Bench bench(8);
    bench.eng.model->chunk_size = 4;
    bench.push(1, 4, 4);
    bench.push(2, 4, 4);
    bench.push(3, 4, 4);

    auto o1 = bench.run();  // r1 prefill: 5 slots, 3 pages
    REQUIRE(o1.first_tokens.size() == 1);
    CHECK(bench.ledger.mapped_pages() == 3);
    auto o2 = bench.run();  // r2 prefill (5) + r1 decode (1): 11 slots, 6 pages
    REQUIRE(o2.first_tokens.size() == 1);
    CHECK(bench.ledger.mapped_pages() == 6);
    CHECK(bench.ledger.free_pages() == 2);

    // r3's prefill takes the last two pages (16/16 slots); r1's decode then
    // finds nothing free, so the newest admission (r3) is preempted, its five
    // slots return, and both decodes proceed.
    auto o3 = bench.run();
    REQUIRE(o3.preemptions == std::vector<std::uint64_t>{3});
    CHECK(o3.chunk_tokens == 4);
    CHECK(o3.decode_tokens == 2);
    REQUIRE(bench.eng.local_queue.size() == 1);
    CHECK(bench.eng.local_queue.front().id == 3);
    CHECK(bench.eng.local_queue.front().prompt_done == 0);  // restarts from scratch
    CHECK(bench.eng.batch.size() == 2);

    // Everything still drains to completion eventually.
    int completed = 0;
    for (int i = 0; i < 200 && completed < 3; ++i) {
        auto out = bench.run();
        completed += static_cast<int>(out.completions.size());
    }
    CHECK(completed == 3);
    CHECK(bench.ledger.mapped_pages() == 0);
}

TEST_CASE("step: prefill pauses when the pool cannot grow") {
    Bench bench(2);  // 4 slots total
    bench.eng.model->chunk_size = 8;
    bench.push(1, 3, 2);  // needs 4 slots for chunk+token
    auto o1 = bench.run();
    CHECK(o1.chunk_tokens == 3);
    bench.push(2, 8, 2);  // first chunk needs 8 slots, only 0 free
    auto o2 = bench.run();
    CHECK(o2.prefill_paused);
    CHECK(o2.chunk_tokens == 0);
    // Request 2 never entered the batch.
    CHECK(bench.eng.local_queue.size() == 1);
}

TEST_CASE("engine runnability reflects allocator headroom") {
    Bench bench(2);
    bench.eng.model->chunk_size = 8;
    bench.push(1, 8, 2);  // needs 9 slots > 4 available: never runnable
    std::vector<pagealloc::PhysicalLedger*> ledgers{&bench.ledger};
    CHECK_FALSE(bench.eng.has_runnable_work(ledgers));
    bench.eng.model->chunk_size = 2;  // 2-token chunks fit
    CHECK(bench.eng.has_runnable_work(ledgers));
}

TEST_CASE("activate/deactivate: pool reuse, realign once, weight accounting") {
    GpuState gpu(0, 40'960, defaults::kPageBytes);  // 80 GiB worth of pages
    ActivationParams act;
    EngineParams params;
    ModelSpec spec = class_8b();

    auto first = activate(gpu, spec, ActivationMethod::parallel, act, params);
    REQUIRE(first.has_value());
    CHECK(first->init_us == seconds_to_us(params.engine_init_s));  // cold pool
    CHECK(first->realign_us == seconds_to_us(params.realign_s));
    CHECK(first->load_us == seconds_to_us(0.7));
    CHECK(gpu.ledger.weight_pages() == (spec.weight_bytes + defaults::kPageBytes - 1) / defaults::kPageBytes);

    finish_activation(gpu, first->engine_index);
    CHECK(gpu.engines[0].status == EngineStatus::serving);
    CHECK_THROWS_AS(activate(gpu, spec, ActivationMethod::parallel, act, params), UsageError);

    // KV pages return to the ledger on deactivation.
    auto res = pagealloc::alloc_kv(gpu.engines[0].pools[0], gpu.ledger, 300);
    REQUIRE(res.ok());
    CHECK(gpu.ledger.mapped_pages() > 0);
    deactivate(gpu, 0);
    CHECK(gpu.ledger.mapped_pages() == 0);
    CHECK(gpu.ledger.weight_pages() == 0);
    CHECK(gpu.engines[0].status == EngineStatus::pooled);
    CHECK_THROWS_AS(deactivate(gpu, 0), UsageError);  // already pooled

    // Second activation on the same shell: no init, no realign.
    auto second = activate(gpu, spec, ActivationMethod::parallel, act, params);
    REQUIRE(second.has_value());
    CHECK(second->engine_index == 0);
    CHECK(second->init_us == 0);
    CHECK(second->realign_us == 0);
    CHECK(first->total_us() - second->total_us() ==
          seconds_to_us(params.realign_s) + seconds_to_us(params.engine_init_s));

    // Rejection path: weights that cannot fit.
    ModelSpec huge = class_8b();
    huge.model_id = "huge";
    huge.weight_bytes = 100'000'000'000ull;
    CHECK_FALSE(activate(gpu, huge, ActivationMethod::parallel, act, params).has_value());
}

TEST_CASE("deactivate with live requests is a contract violation") {
    GpuState gpu(0, 40'960, defaults::kPageBytes);
    ActivationParams act;
    EngineParams params;
    auto outcome = activate(gpu, class_8b(), ActivationMethod::parallel, act, params);
    REQUIRE(outcome.has_value());
    finish_activation(gpu, outcome->engine_index);
    EngineRequest r;
    r.id = 9;
    r.prompt_tokens = 8;
    r.output_tokens = 2;
    gpu.engines[0].local_queue.push_back(r);
    CHECK_THROWS_AS(deactivate(gpu, 0), UsageError);
}

TEST_CASE("throughput_of: monotone in budget and 2x from 5 GB to 15 GB") {
    ModelSpec spec = class_8b();
    EngineParams params;
    ThroughputMix mix;
    double prev = 0.0;
    std::vector<double> grid = {5, 7, 9, 11, 13, 15};
    double at5 = 0.0, at15 = 0.0;
    for (double gb : grid) {
        auto res = throughput_of(static_cast<std::uint64_t>(gb * 1e9), spec, mix, params,
                                 defaults::kPageBytes, 10.0, 30.0);
        CHECK(res.tokens_per_s >= prev);
        prev = res.tokens_per_s;
        if (gb == 5) at5 = res.tokens_per_s;
        if (gb == 15) at15 = res.tokens_per_s;
    }
    CHECK(at15 >= 2.0 * at5);
}

TEST_CASE("throughput_of: degenerate budget runs batch size one") {
    ModelSpec spec = class_8b();
    EngineParams params;
    ThroughputMix mix{256, 64};
    // Exactly one request's pages.
    const std::uint64_t tokens = 256 + 64 + 1;
    const std::uint64_t tpp = defaults::kPageBytes / spec.token_kv_bytes;
    const std::uint64_t pages = (tokens + tpp - 1) / tpp;
    auto res = throughput_of(pages * defaults::kPageBytes, spec, mix, params,
                             defaults::kPageBytes, 2.0, 10.0);
    CHECK(res.max_batch == 1);
    CHECK(res.tokens_per_s > 0.0);

    CHECK_THROWS_AS(throughput_of((pages - 1) * defaults::kPageBytes, spec, mix, params),
                    UsageError);
}

TEST_CASE("ttft cannot beat the chunked-prefill bound") {
    Bench bench(16384, 16 << 10);
    const int prompt = 1800;
    bench.push(1, prompt, 2);
    SimTime now = 0;
    SimTime first_token = -1;
    for (int i = 0; i < 64 && first_token < 0; ++i) {
        auto out = bench.run(now);
        now += out.duration_us;
        if (!out.first_tokens.empty()) first_token = now;
    }
    REQUIRE(first_token > 0);
    const double bound_s = prompt / effective_prefill_tps(*bench.eng.model, bench.params);
    CHECK(us_to_seconds(first_token) >= bound_s - 1e-9);
}
