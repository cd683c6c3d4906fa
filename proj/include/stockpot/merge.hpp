#pragma once

#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "stockpot/checkpoint.hpp"
#include "stockpot/granularity.hpp"

namespace stockpot {

// Near the pole of t = N cos / (1 + (N-1) cos) the anchor is the only
// robust output; denominators at or below this clamp t to 0.
inline constexpr double kDenominatorEpsilon = 1e-6;

struct InterpolationRatio {
    double t = 0.0;   // applied value, always in [0, 1]
    double raw = 0.0; // unclamped formula value (NaN at the pole)
    bool clamped = false;
};

// t = N cos(theta) / (1 + (N-1) cos(theta)): the coefficient placing
// t * avg + (1-t) * anchor at the span's closest point to the distribution
// center. Negative cosines clamp to the anchor.
InterpolationRatio interpolation_ratio(double cos_theta, int n_models);

struct RatioEntry {
    std::string unit;
    std::string klass;
    double cos_theta = 0.0;  // mean of pairwise delta cosines; NaN if undefined
    double t = 0.0;
    bool clamped = false;
    bool degenerate = false;  // every delta in the unit is below epsilon
    int n_models = 0;
    int period = 0;  // 1-based during periodic replay, 0 otherwise
};

struct RatioReport {
    std::vector<RatioEntry> units;
    std::vector<std::string> warnings;
};

// Anchored closed-form merge. Per unit, the angle is estimated as the mean
// of all pairwise delta cosines and the output is t * mean(models) +
// (1-t) * anchor. Policy for edge cases:
//   - every delta below epsilon: t = 1 (any t gives the same output)
//   - no valid pair but some live delta: t = 0, clamped, with a warning
//   - unit absent from the anchor: t = 1 (plain average) with a warning
// Models are ordered by content digest before averaging, so the output is
// byte-identical under any permutation of the list.
std::pair<Checkpoint, RatioReport> stock_merge(const Checkpoint& anchor,
                                               std::span<const Checkpoint> models,
                                               const Granularity& granularity);

// Plain elementwise average (the same computation as pseudo_center),
// exposed as a merge method.
Checkpoint uniform_soup(std::span<const Checkpoint> models);

struct GreedyDecision {
    std::size_t model_index;  // position in the caller's list
    std::string digest;
    double individual_score = 0.0;
    double tentative_score = 0.0;
    bool accepted = false;
};

struct GreedyTrace {
    std::vector<GreedyDecision> decisions;
    std::vector<std::size_t> selected;
    double final_score = 0.0;
};

// Greedy soup: models sorted by individual score descending (ties by
// digest), each tentatively added to the running average and kept iff the
// average's score does not drop. Scoring is caller-supplied.
std::pair<Checkpoint, GreedyTrace> greedy_soup(
    std::span<const Checkpoint> models,
    const std::function<double(const Checkpoint&)>& scorer);

// alpha * model + (1 - alpha) * anchor. The endpoints return bit-exact
// copies of the respective input.
Checkpoint wise_ft(const Checkpoint& anchor, const Checkpoint& model, double alpha,
                   bool allow_extrapolation = false);

// t * a + (1 - t) * b; t outside [0, 1] needs the extrapolation flag.
Checkpoint interpolate_pair(const Checkpoint& a, const Checkpoint& b, double t,
                            bool allow_extrapolation = false);

// Coefficient minimizing the expected squared distance of t * wA + (1-t) * wB
// from its own mean: trace_b / (trace_a + trace_b).
double variance_optimal_ratio(double trace_a, double trace_b);

struct PeriodicResult {
    Checkpoint final;
    std::vector<RatioReport> period_reports;
    std::vector<Checkpoint> period_merges;
};

// Replays the periodic protocol over recorded per-period checkpoints:
// every period merges that period's snapshots with the fixed anchor. With
// one period this is exactly the post-training variant. Replay never
// re-branches training; re-branching dynamics live in the simulator.
PeriodicResult periodic_merge_replay(const Checkpoint& anchor,
                                     std::span<const std::vector<Checkpoint>> trajectories,
                                     const Granularity& granularity);

}  // namespace stockpot
