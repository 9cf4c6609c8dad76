#include "msim/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace msim::oracle {

double gpu_kvpr(double demand_sum, double shared_bytes) {
    if (shared_bytes <= 0.0) return std::numeric_limits<double>::infinity();
    return demand_sum / (shared_bytes / 1e9);
}

PlacementOptimum brute_force_placement(const PlacementInstance& inst) {
    const std::size_t m = inst.models.size();
    const int n = inst.gpu_count;
    if (n <= 0) throw UsageError("brute_force_placement: no GPUs");
    double states = std::pow(static_cast<double>(n), static_cast<double>(m));
    if (states > 1e6) throw UsageError("brute_force_placement: state space exceeds 10^6");

    PlacementOptimum best;
    best.max_kvpr = std::numeric_limits<double>::infinity();

    std::vector<int> assign(m, 0);
    std::vector<double> demand(n), weight(n);
    const std::uint64_t total = static_cast<std::uint64_t>(states);
    for (std::uint64_t code = 0; code < total; ++code) {
        std::uint64_t c = code;
        for (std::size_t i = 0; i < m; ++i) {
            assign[i] = static_cast<int>(c % n);
            c /= n;
        }
        std::fill(demand.begin(), demand.end(), 0.0);
        std::fill(weight.begin(), weight.end(), 0.0);
        for (std::size_t i = 0; i < m; ++i) {
            demand[assign[i]] += inst.models[i].demand;
            weight[assign[i]] += inst.models[i].weight_bytes;
        }
        bool fits = true;
        for (int g = 0; g < n; ++g) {
            if (weight[g] > inst.capacity_bytes) {
                fits = false;
                break;
            }
        }
        if (!fits) continue;
        double worst = 0.0;
        for (int g = 0; g < n; ++g) {
            worst = std::max(worst, gpu_kvpr(demand[g], inst.capacity_bytes - weight[g]));
        }
        if (worst < best.max_kvpr) {
            best.max_kvpr = worst;
            best.assignment = assign;
            best.feasible = true;
        }
    }
    return best;
}

namespace {

// On-time count when the given subset runs in earliest-deadline order.
// Returns -1 if some subset member misses its deadline.
int edd_feasible_count(const std::vector<DeadlineJob>& jobs, const std::vector<int>& order,
                       std::uint32_t mask, double now) {
    double t = now;
    int count = 0;
    for (int idx : order) {
        if (!(mask & (1u << idx))) continue;
        t += jobs[idx].exec_s;
        if (t > jobs[idx].deadline_s) return -1;
        ++count;
    }
    return count;
}

}  // namespace

int brute_force_deadline_schedule(const std::vector<DeadlineJob>& jobs, double now) {
    const std::size_t n = jobs.size();
    if (n > 12) throw UsageError("brute_force_deadline_schedule: n exceeds 12");
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (jobs[a].deadline_s != jobs[b].deadline_s) return jobs[a].deadline_s < jobs[b].deadline_s;
        return a < b;
    });
    int best = 0;
    for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
        int count = edd_feasible_count(jobs, order, mask, now);
        best = std::max(best, count);
    }
    return best;
}

int brute_force_deadline_permutations(const std::vector<DeadlineJob>& jobs, double now) {
    const std::size_t n = jobs.size();
    if (n > 6) throw UsageError("brute_force_deadline_permutations: n exceeds 6");
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    int best = 0;
    do {
        double t = now;
        int count = 0;
        for (int idx : perm) {
            t += jobs[idx].exec_s;
            if (t <= jobs[idx].deadline_s) ++count;
        }
        best = std::max(best, count);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

}  // namespace msim::oracle
