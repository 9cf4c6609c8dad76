#include <doctest.h>

#include <map>

#include "msim/admission.hpp"
#include "msim/oracle.hpp"
#include "msim/rng.hpp"

using namespace msim;
using namespace msim::admission;

namespace {

QueuedRequest req(std::uint64_t id, double exec, double deadline, const std::string& model = "m",
                  double arrival = 0.0) {
    QueuedRequest r;
    r.id = id;
    r.model_id = model;
    r.arrival_s = arrival;
    r.exec_estimate_s = exec;
    r.ttft_slo_s = deadline - arrival;
    return r;
}

int on_time_count(const ScheduleDecision& d) { return static_cast<int>(d.admit.size()); }

std::vector<oracle::DeadlineJob> to_jobs(const std::vector<QueuedRequest>& queue) {
    std::vector<oracle::DeadlineJob> jobs;
    for (const auto& r : queue) jobs.push_back({r.exec_estimate_s, r.deadline_s()});
    return jobs;
}

}  // namespace

TEST_CASE("moore_hodgson: slack case admits everything in deadline order") {
    std::vector<QueuedRequest> queue = {req(1, 1.0, 100), req(2, 1.0, 50), req(3, 1.0, 75)};
    auto d = moore_hodgson(queue, 0.0);
    REQUIRE(d.admit.size() == 3);
    CHECK(d.admit[0].id == 2);
    CHECK(d.admit[1].id == 3);
    CHECK(d.admit[2].id == 1);
    CHECK(d.deferred.empty());
}

TEST_CASE("moore_hodgson: reference instances") {
    // (e, d) = (2,3), (2,4), (3,5): two on time, the trailing long job defers.
    auto d1 = moore_hodgson({req(1, 2, 3), req(2, 2, 4), req(3, 3, 5)}, 0.0);
    CHECK(on_time_count(d1) == 2);
    REQUIRE(d1.admit.size() == 2);
    CHECK(d1.admit[0].id == 1);
    CHECK(d1.admit[1].id == 2);
    REQUIRE(d1.deferred.size() == 1);
    CHECK(d1.deferred[0].id == 3);

    // (6,6), (2,7), (2,8): plain EDF finishes one on time; dropping the long
    // job keeps two.
    auto d2 = moore_hodgson({req(1, 6, 6), req(2, 2, 7), req(3, 2, 8)}, 0.0);
    CHECK(on_time_count(d2) == 2);
    REQUIRE(d2.admit.size() == 2);
    CHECK(d2.admit[0].id == 2);
    CHECK(d2.admit[1].id == 3);
    REQUIRE(d2.deferred.size() == 1);
    CHECK(d2.deferred[0].id == 1);
}

TEST_CASE("moore_hodgson: admitted set is deadline-feasible at decision time") {
    Rng rng(5);
    for (int trial = 0; trial < 500; ++trial) {
        std::vector<QueuedRequest> queue;
        const int n = static_cast<int>(rng.uniform_int(1, 8));
        const double now = rng.uniform(0.0, 100.0);
        for (int i = 0; i < n; ++i) {
            const double e = rng.uniform(0.1, 5.0);
            queue.push_back(req(static_cast<std::uint64_t>(i), e, now + rng.uniform(0.0, 12.0)));
        }
        auto d = moore_hodgson(queue, now);
        double t = now;
        for (std::size_t i = 0; i < d.admit.size(); ++i) {
            t += d.admit[i].exec_estimate_s;
            CHECK(t <= d.admit[i].deadline_s() + 1e-12);
            if (i > 0) CHECK(d.admit[i - 1].deadline_s() <= d.admit[i].deadline_s());
        }
        CHECK(d.admit.size() + d.deferred.size() == queue.size());
    }
}

TEST_CASE("moore_hodgson: on-time count matches brute force on fuzzed instances") {
    Rng rng(17);
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<QueuedRequest> queue;
        const int n = static_cast<int>(rng.uniform_int(1, 8));
        for (int i = 0; i < n; ++i) {
            const double e = rng.uniform(0.1, 5.0);
            const double slack = rng.uniform(-1.0, 10.0);
            queue.push_back(req(static_cast<std::uint64_t>(i), e, e + slack));
        }
        auto d = moore_hodgson(queue, 0.0);
        CHECK(on_time_count(d) == oracle::brute_force_deadline_schedule(to_jobs(queue), 0.0));
    }
}

TEST_CASE("moore_hodgson: relaxing all SLOs never shrinks the admit set") {
    Rng rng(23);
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<QueuedRequest> queue;
        const int n = static_cast<int>(rng.uniform_int(1, 8));
        for (int i = 0; i < n; ++i) {
            QueuedRequest r = req(static_cast<std::uint64_t>(i), rng.uniform(0.1, 5.0), 0.0);
            r.ttft_slo_s = rng.uniform(0.1, 8.0);
            queue.push_back(r);
        }
        const auto base = moore_hodgson(queue, 0.0);
        auto relaxed = queue;
        const double factor = rng.uniform(1.0, 3.0);
        for (auto& r : relaxed) r.ttft_slo_s *= factor;
        CHECK(moore_hodgson(relaxed, 0.0).admit.size() >= base.admit.size());
    }
}

TEST_CASE("dispatch: order follows the admit list across models") {
    std::vector<QueuedRequest> queue = {
        req(1, 0.1, 1.0, "a"), req(2, 0.1, 1.5, "b"), req(3, 0.1, 2.0, "a"),
        req(4, 0.1, 2.5, "b"), req(5, 0.1, 3.0, "a"),
    };
    auto d = moore_hodgson(queue, 0.0);
    std::vector<std::uint64_t> order;
    std::map<std::string, int> granted{{"a", 2}, {"b", 1}};
    auto gate = [&](const QueuedRequest& r) {
        if (granted[r.model_id] == 0) return DispatchStatus::engine_busy;
        --granted[r.model_id];
        order.push_back(r.id);
        return DispatchStatus::dispatched;
    };
    auto ids = dispatch(d, gate);
    // a: head two pass; b: first passes then engine stops; later a entries
    // still flow even though b stalled in between.
    CHECK(order == std::vector<std::uint64_t>{1, 2, 3});
    CHECK(ids == order);
}

TEST_CASE("dispatch: empty engines take everything, full engines nothing") {
    std::vector<QueuedRequest> queue = {req(1, 0.1, 1.0), req(2, 0.1, 2.0)};
    auto d = moore_hodgson(queue, 0.0);
    CHECK(dispatch(d, [](const QueuedRequest&) { return DispatchStatus::dispatched; }).size() == 2);
    CHECK(dispatch(d, [](const QueuedRequest&) { return DispatchStatus::no_memory; }).empty());
}

TEST_CASE("requeue_deferred: no drops, age preserved") {
    std::vector<QueuedRequest> queue = {req(3, 0.1, 5.0, "m", 2.0)};
    CHECK(requeue_deferred({}, queue).size() == 1);

    std::vector<QueuedRequest> deferred = {req(1, 0.3, 4.0, "m", 0.5), req(2, 0.2, 9.0, "m", 1.0)};
    auto merged = requeue_deferred(deferred, queue);
    REQUIRE(merged.size() == 3);
    CHECK(merged[0].id == 1);
    CHECK(merged[1].id == 2);
    CHECK(merged[2].id == 3);

    // Deferring the same request twice keeps one aged copy.
    auto again = requeue_deferred(deferred, merged);
    CHECK(again.size() == 3);
}
