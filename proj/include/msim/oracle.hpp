#pragma once
#include <cstdint>
#include <vector>

#include "msim/errors.hpp"

// Brute-force reference solvers. These are deliberately independent of the
// production schedulers: they enumerate, the schedulers stay greedy. Linked
// into the test binaries and the `verify` CLI only.
namespace msim::oracle {

struct PlacementModel {
    double demand = 0.0;        // SLO-weighted request rate r/s
    double weight_bytes = 0.0;  // resident weight footprint
};

struct PlacementInstance {
    std::vector<PlacementModel> models;
    int gpu_count = 0;
    double capacity_bytes = 0.0;  // identical across GPUs
};

struct PlacementOptimum {
    double max_kvpr = 0.0;            // min over assignments of max per-GPU KVPR
    std::vector<int> assignment;      // model index -> gpu index
    bool feasible = false;
};

// KVPR of one GPU under an assignment: demand per GB of memory left after
// weights. Non-positive remaining memory yields +inf (never optimal).
double gpu_kvpr(double demand_sum, double shared_bytes);

// Exhaustive search over all gpu_count^models assignments. Assignments where
// a GPU's weights exceed capacity are skipped. Guard: state space <= 10^6.
PlacementOptimum brute_force_placement(const PlacementInstance& inst);

struct DeadlineJob {
    double exec_s = 0.0;      // prefill execution estimate
    double deadline_s = 0.0;  // absolute deadline
};

// Max number of jobs finishable on time on one machine starting at `now`.
// Searches all subsets, each executed in earliest-deadline order. Guard: n <= 12.
int brute_force_deadline_schedule(const std::vector<DeadlineJob>& jobs, double now);

// Same quantity by full permutation enumeration (all n! orders of all jobs,
// counting on-time completions). Used to validate the subset-EDD search. n <= 6.
int brute_force_deadline_permutations(const std::vector<DeadlineJob>& jobs, double now);

}  // namespace msim::oracle
