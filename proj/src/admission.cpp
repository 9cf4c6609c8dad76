#include "msim/admission.hpp"

#include <algorithm>
#include <set>

namespace msim::admission {

ScheduleDecision moore_hodgson(std::vector<QueuedRequest> queue, double now_s) {
    std::sort(queue.begin(), queue.end(), [](const QueuedRequest& a, const QueuedRequest& b) {
        if (a.deadline_s() != b.deadline_s()) return a.deadline_s() < b.deadline_s();
        if (a.arrival_s != b.arrival_s) return a.arrival_s < b.arrival_s;
        return a.id < b.id;
    });

    ScheduleDecision decision;
    decision.now_s = now_s;
    std::vector<QueuedRequest>& admit = decision.admit;
    double current_time = now_s;
    for (const QueuedRequest& r : queue) {
        admit.push_back(r);
        current_time += r.exec_estimate_s;
        if (current_time > r.deadline_s()) {
            auto victim = admit.begin();
            for (auto it = admit.begin() + 1; it != admit.end(); ++it) {
                if (it->exec_estimate_s > victim->exec_estimate_s ||
                    (it->exec_estimate_s == victim->exec_estimate_s &&
                     (it->deadline_s() > victim->deadline_s() ||
                      (it->deadline_s() == victim->deadline_s() && it->id > victim->id)))) {
                    victim = it;
                }
            }
            current_time -= victim->exec_estimate_s;
            decision.deferred.push_back(*victim);
            admit.erase(victim);
        }
    }
    return decision;
}

std::vector<std::uint64_t> dispatch(const ScheduleDecision& decision, const DispatchGate& gate) {
    std::vector<std::uint64_t> dispatched;
    std::set<std::string> stopped;
    for (const QueuedRequest& r : decision.admit) {
        if (stopped.count(r.model_id)) continue;
        switch (gate(r)) {
            case DispatchStatus::dispatched:
                dispatched.push_back(r.id);
                break;
            case DispatchStatus::engine_busy:
            case DispatchStatus::no_memory:
            case DispatchStatus::model_unavailable:
                stopped.insert(r.model_id);
                break;
        }
    }
    return dispatched;
}

std::vector<QueuedRequest> requeue_deferred(const std::vector<QueuedRequest>& deferred,
                                            std::vector<QueuedRequest> queue) {
    std::set<std::uint64_t> present;
    for (const QueuedRequest& r : queue) present.insert(r.id);
    for (const QueuedRequest& r : deferred) {
        if (present.insert(r.id).second) queue.push_back(r);
    }
    std::sort(queue.begin(), queue.end(), [](const QueuedRequest& a, const QueuedRequest& b) {
        if (a.arrival_s != b.arrival_s) return a.arrival_s < b.arrival_s;
        return a.id < b.id;
    });
    return queue;
}

}  // namespace msim::admission
