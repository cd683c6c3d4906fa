#include "stockpot/merge.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "stockpot/digest.hpp"
#include "stockpot/errors.hpp"
#include "stockpot/geometry.hpp"
#include "stockpot/parallel.hpp"
#include "stockpot/reduction.hpp"

namespace stockpot {

namespace {

std::vector<std::size_t> digest_order(std::span<const Checkpoint> models,
                                      std::vector<std::string>* digests_out = nullptr) {
    std::vector<std::string> digests(models.size());
    for (std::size_t i = 0; i < models.size(); ++i) digests[i] = content_digest(models[i]);
    std::vector<std::size_t> order(models.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return digests[a] < digests[b]; });
    if (digests_out != nullptr) *digests_out = std::move(digests);
    return order;
}

// Digest-ordered elementwise mean of a subset of models.
Dense mean_dense(std::span<const Dense> dense, std::span<const std::size_t> order) {
    Dense mean = dense[order[0]];
    const double inv_n = 1.0 / static_cast<double>(order.size());
    for (std::size_t t = 0; t < mean.tensor_count(); ++t) {
        std::vector<double>& out = mean.values[t];
        for (std::size_t e = 0; e < out.size(); ++e) {
            out[e] = pairwise_sum(0, order.size(),
                                  [&](std::uint64_t m) { return dense[order[m]].values[t][e]; }) *
                     inv_n;
        }
    }
    return mean;
}

void require_mutually_compatible(std::span<const Checkpoint> models, const char* what) {
    const SchemaReport report = validate_schema(models);
    if (!report.compatible) {
        throw SchemaError(std::string(what) + ": model schemas differ at tensor '" +
                          report.mismatches.front().tensor + "' (" +
                          report.mismatches.front().field + ")");
    }
}

}  // namespace

InterpolationRatio interpolation_ratio(double cos_theta, int n_models) {
    if (n_models < 2) {
        throw NumericError("interpolation_ratio requires N >= 2");
    }
    if (!(cos_theta >= -1.0 && cos_theta <= 1.0)) {
        throw NumericError("interpolation_ratio: cos_theta must lie in [-1, 1]");
    }
    InterpolationRatio result;
    const double n = static_cast<double>(n_models);
    const double denominator = 1.0 + (n - 1.0) * cos_theta;
    if (denominator <= kDenominatorEpsilon) {
        result.raw = std::numeric_limits<double>::quiet_NaN();
        result.t = 0.0;
        result.clamped = true;
        return result;
    }
    result.raw = n * cos_theta / denominator;
    result.t = std::clamp(result.raw, 0.0, 1.0);
    result.clamped = result.t != result.raw;
    return result;
}

std::pair<Checkpoint, RatioReport> stock_merge(const Checkpoint& anchor,
                                               std::span<const Checkpoint> models,
                                               const Granularity& granularity) {
    if (models.size() < 2) {
        throw NumericError("stock_merge requires at least 2 models");
    }
    require_mutually_compatible(models, "stock_merge");

    // The anchor may lack tensors the models have (a freshly initialized
    // head); tensors it does carry must match exactly.
    for (const auto& [name, record] : models.front().tensors) {
        const auto it = anchor.tensors.find(name);
        if (it == anchor.tensors.end()) continue;
        if (it->second.dtype != record.dtype || it->second.shape != record.shape) {
            throw SchemaError("stock_merge: anchor tensor '" + name +
                              "' does not match the models' schema");
        }
    }

    const std::vector<std::size_t> order = digest_order(models);
    const std::size_t n_models = models.size();

    std::vector<Dense> dense(n_models);
    for (std::size_t i = 0; i < n_models; ++i) dense[i] = to_dense(models[i]);
    const Dense mean = mean_dense(dense, order);

    // Anchor values aligned with the models' tensor list; zeros where the
    // anchor has no such tensor (those units never use them).
    Dense anchor_dense = mean;
    std::vector<bool> tensor_anchored(anchor_dense.tensor_count());
    for (std::size_t t = 0; t < anchor_dense.tensor_count(); ++t) {
        const auto it = anchor.tensors.find(anchor_dense.names[t]);
        tensor_anchored[t] = it != anchor.tensors.end();
        if (tensor_anchored[t]) {
            anchor_dense.values[t] = it->second.to_f64();
        } else {
            std::fill(anchor_dense.values[t].begin(), anchor_dense.values[t].end(), 0.0);
        }
    }

    // Per-model deltas in digest order.
    std::vector<Dense> deltas(n_models);
    for (std::size_t i = 0; i < n_models; ++i) {
        Dense d = dense[order[i]];
        for (std::size_t t = 0; t < d.tensor_count(); ++t) {
            for (std::size_t e = 0; e < d.values[t].size(); ++e) {
                d.values[t][e] -= anchor_dense.values[t][e];
            }
        }
        deltas[i] = std::move(d);
    }

    const std::vector<Unit> units = build_units(mean, granularity);

    RatioReport report;
    report.units.resize(units.size());
    std::vector<double> unit_t(units.size(), 1.0);
    std::vector<std::string> unit_warning(units.size());

    parallel_for(units.size(), [&](std::size_t u) {
        const Unit& unit = units[u];
        RatioEntry& entry = report.units[u];
        entry.unit = unit.key;
        entry.klass = unit.klass;
        entry.n_models = static_cast<int>(n_models);
        entry.cos_theta = std::numeric_limits<double>::quiet_NaN();

        const bool anchored = std::all_of(
            unit.segments.begin(), unit.segments.end(),
            [&](const UnitSegment& s) { return tensor_anchored[s.tensor_index]; });
        if (!anchored) {
            entry.t = 1.0;
            unit_t[u] = 1.0;
            unit_warning[u] = "unit '" + unit.key +
                              "' is absent from the anchor; merged as a plain average (t = 1)";
            return;
        }

        const double eps = epsilon_norm(unit.dim);
        std::vector<double> sumsqs(n_models);
        std::vector<double> norms(n_models);
        std::size_t live = 0;
        for (std::size_t m = 0; m < n_models; ++m) {
            sumsqs[m] = unit_sumsq(deltas[m], unit);
            norms[m] = std::sqrt(sumsqs[m]);
            live += norms[m] > eps ? 1 : 0;
        }
        if (live == 0) {
            entry.degenerate = true;
            entry.t = 1.0;
            unit_t[u] = 1.0;
            return;
        }

        std::vector<double> cosines;
        cosines.reserve(n_models * (n_models - 1) / 2);
        for (std::size_t i = 0; i < n_models; ++i) {
            for (std::size_t j = i + 1; j < n_models; ++j) {
                if (norms[i] <= eps || norms[j] <= eps) continue;
                const double dot = unit_dot(deltas[i], deltas[j], unit);
                cosines.push_back(
                    std::clamp(dot / std::sqrt(sumsqs[i] * sumsqs[j]), -1.0, 1.0));
            }
        }
        if (cosines.empty()) {
            // A live delta exists but no pair does (others sit on the
            // anchor): no angle signal, so fall back to the anchor.
            entry.t = 0.0;
            entry.clamped = true;
            unit_t[u] = 0.0;
            unit_warning[u] = "unit '" + unit.key +
                              "' has no live delta pair; falling back to the anchor (t = 0)";
            return;
        }
        entry.cos_theta = pairwise_sum(cosines) / static_cast<double>(cosines.size());
        const InterpolationRatio ratio = interpolation_ratio(entry.cos_theta,
                                                             static_cast<int>(n_models));
        entry.t = ratio.t;
        entry.clamped = ratio.clamped;
        unit_t[u] = ratio.t;
    });

    for (const auto& warning : unit_warning) {
        if (!warning.empty()) report.warnings.push_back(warning);
    }

    Dense merged = mean;
    for (std::size_t u = 0; u < units.size(); ++u) {
        const double t = unit_t[u];
        for (const UnitSegment& s : units[u].segments) {
            std::vector<double>& out = merged.values[s.tensor_index];
            const std::vector<double>& base = anchor_dense.values[s.tensor_index];
            const std::vector<double>& avg = mean.values[s.tensor_index];
            for (std::uint64_t e = s.begin; e < s.end; ++e) {
                out[e] = t * avg[e] + (1.0 - t) * base[e];
            }
        }
    }
    return {from_dense(merged, models.front()), std::move(report)};
}

Checkpoint uniform_soup(std::span<const Checkpoint> models) {
    return pseudo_center(models);
}

std::pair<Checkpoint, GreedyTrace> greedy_soup(
    std::span<const Checkpoint> models,
    const std::function<double(const Checkpoint&)>& scorer) {
    if (models.empty()) {
        throw NumericError("greedy_soup requires at least 1 model");
    }
    require_mutually_compatible(models, "greedy_soup");

    std::vector<std::string> digests;
    digest_order(models, &digests);

    const auto score_of = [&](const Checkpoint& ckpt, std::size_t index) {
        try {
            return scorer(ckpt);
        } catch (const std::exception& ex) {
            throw Error("greedy_soup: scorer failed on model " + std::to_string(index) +
                        " (digest " + digests[index] + "): " + ex.what());
        }
    };

    std::vector<double> individual(models.size());
    for (std::size_t i = 0; i < models.size(); ++i) individual[i] = score_of(models[i], i);

    std::vector<std::size_t> ranking(models.size());
    std::iota(ranking.begin(), ranking.end(), 0);
    std::sort(ranking.begin(), ranking.end(), [&](std::size_t a, std::size_t b) {
        if (individual[a] != individual[b]) return individual[a] > individual[b];
        return digests[a] < digests[b];
    });

    std::vector<Dense> dense(models.size());
    for (std::size_t i = 0; i < models.size(); ++i) dense[i] = to_dense(models[i]);

    GreedyTrace trace;
    double best = -std::numeric_limits<double>::infinity();
    std::vector<std::size_t> selected;
    for (const std::size_t candidate : ranking) {
        std::vector<std::size_t> tentative = selected;
        tentative.push_back(candidate);
        std::sort(tentative.begin(), tentative.end(),
                  [&](std::size_t a, std::size_t b) { return digests[a] < digests[b]; });
        const Checkpoint average =
            from_dense(mean_dense(dense, tentative), models.front());
        const double score = score_of(average, candidate);
        const bool accepted = score >= best;
        trace.decisions.push_back(
            {candidate, digests[candidate], individual[candidate], score, accepted});
        if (accepted) {
            selected = std::move(tentative);
            best = score;
        }
    }
    if (selected.empty()) {
        // Only reachable when every score compares false against -inf.
        throw NumericError("greedy_soup: no model accepted; the scorer returned NaN");
    }
    trace.selected = selected;
    trace.final_score = best;
    const Checkpoint soup = from_dense(mean_dense(dense, selected), models.front());
    return {soup, std::move(trace)};
}

Checkpoint interpolate_pair(const Checkpoint& a, const Checkpoint& b, double t,
                            bool allow_extrapolation) {
    if (!a.same_schema_as(b)) {
        throw SchemaError("interpolate_pair: schemas differ");
    }
    if (!allow_extrapolation && (t < 0.0 || t > 1.0)) {
        throw NumericError("interpolate_pair: t outside [0, 1] without the extrapolation flag");
    }
    if (!std::isfinite(t)) {
        throw NumericError("interpolate_pair: t must be finite");
    }
    if (t == 1.0) return a;
    if (t == 0.0) return b;

    Dense out = to_dense(a);
    const Dense other = to_dense(b);
    for (std::size_t i = 0; i < out.tensor_count(); ++i) {
        for (std::size_t e = 0; e < out.values[i].size(); ++e) {
            out.values[i][e] = t * out.values[i][e] + (1.0 - t) * other.values[i][e];
        }
    }
    return from_dense(out, a);
}

Checkpoint wise_ft(const Checkpoint& anchor, const Checkpoint& model, double alpha,
                   bool allow_extrapolation) {
    if (!allow_extrapolation && (alpha < 0.0 || alpha > 1.0)) {
        throw NumericError("wise_ft: alpha outside [0, 1] without the extrapolation flag");
    }
    return interpolate_pair(model, anchor, alpha, allow_extrapolation);
}

double variance_optimal_ratio(double trace_a, double trace_b) {
    if (!(trace_a >= 0.0) || !(trace_b >= 0.0)) {
        throw NumericError("variance_optimal_ratio: traces must be non-negative");
    }
    if (trace_a == 0.0 && trace_b == 0.0) {
        throw NumericError("variance_optimal_ratio: both traces are zero");
    }
    return trace_b / (trace_a + trace_b);
}

PeriodicResult periodic_merge_replay(const Checkpoint& anchor,
                                     std::span<const std::vector<Checkpoint>> trajectories,
                                     const Granularity& granularity) {
    if (trajectories.size() < 2) {
        throw NumericError("periodic_merge_replay requires at least 2 trajectories");
    }
    const std::size_t periods = trajectories.front().size();
    if (periods < 1) {
        throw NumericError("periodic_merge_replay requires at least 1 period");
    }
    for (const auto& trajectory : trajectories) {
        if (trajectory.size() != periods) {
            throw NumericError("periodic_merge_replay: trajectories have ragged lengths (" +
                               std::to_string(trajectory.size()) + " vs " +
                               std::to_string(periods) + ")");
        }
    }

    PeriodicResult result;
    for (std::size_t p = 0; p < periods; ++p) {
        std::vector<Checkpoint> snapshot;
        snapshot.reserve(trajectories.size());
        for (const auto& trajectory : trajectories) snapshot.push_back(trajectory[p]);
        auto [merged, report] = stock_merge(anchor, snapshot, granularity);
        for (auto& entry : report.units) entry.period = static_cast<int>(p) + 1;
        result.period_reports.push_back(std::move(report));
        result.period_merges.push_back(std::move(merged));
    }
    result.final = result.period_merges.back();
    return result;
}

}  // namespace stockpot
