#include "stockpot/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>

#include "stockpot/digest.hpp"
#include "stockpot/errors.hpp"
#include "stockpot/parallel.hpp"
#include "stockpot/reduction.hpp"
#include "stockpot/rng.hpp"

namespace stockpot {

namespace {

void require_same_schema(const Checkpoint& a, const Checkpoint& b, const char* what) {
    if (!a.same_schema_as(b)) {
        const Checkpoint pair[] = {a, b};
        const SchemaReport report = validate_schema(pair);
        std::string detail = "schema mismatch";
        if (!report.mismatches.empty()) {
            detail += " at tensor '" + report.mismatches.front().tensor + "' (" +
                      report.mismatches.front().field + ")";
        }
        throw SchemaError(std::string(what) + ": " + detail);
    }
}

void require_compatible_ensemble(std::span<const Checkpoint> ensemble, const char* what) {
    const SchemaReport report = validate_schema(ensemble);
    if (!report.compatible) {
        throw SchemaError(std::string(what) + ": schema mismatch at tensor '" +
                          report.mismatches.front().tensor + "' (" +
                          report.mismatches.front().field + ")");
    }
}

Dense dense_difference(const Checkpoint& model, const Checkpoint& anchor) {
    Dense out = to_dense(model);
    auto it = anchor.tensors.begin();
    for (std::size_t t = 0; t < out.tensor_count(); ++t, ++it) {
        const std::vector<double> base = it->second.to_f64();
        std::vector<double>& values = out.values[t];
        for (std::size_t i = 0; i < values.size(); ++i) values[i] -= base[i];
    }
    return out;
}

// Cosine from the dot product and the two squared norms. The single
// sqrt(sa * sb) keeps bitwise-equal vectors at exactly 1.
double clamped_cosine(double dot, double sumsq_a, double sumsq_b) {
    return std::clamp(dot / std::sqrt(sumsq_a * sumsq_b), -1.0, 1.0);
}

double to_degrees(double radians) {
    return radians * 180.0 / std::numbers::pi;
}

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;
};

// Population statistics via a two-pass deterministic reduction.
MeanStd mean_std(std::span<const double> values) {
    if (values.empty()) return {};
    const double mean = pairwise_sum(values) / static_cast<double>(values.size());
    const double var = pairwise_sum(0, values.size(), [&](std::uint64_t i) {
                           const double d = values[i] - mean;
                           return d * d;
                       }) /
                       static_cast<double>(values.size());
    return {mean, std::sqrt(std::max(var, 0.0))};
}

template <typename F>
double segments_pairwise(const Unit& unit, F&& per_segment) {
    if (unit.segments.size() == 1) return per_segment(unit.segments.front());
    std::vector<double> partial;
    partial.reserve(unit.segments.size());
    for (const auto& segment : unit.segments) partial.push_back(per_segment(segment));
    return pairwise_sum(partial);
}

}  // namespace

DeltaCheckpoint delta(const Checkpoint& model, const Checkpoint& anchor) {
    require_same_schema(model, anchor, "delta");
    DeltaCheckpoint out;
    out.anchor_digest = content_digest(anchor);
    out.dense = dense_difference(model, anchor);
    return out;
}

double unit_dot(const Dense& a, const Dense& b, const Unit& unit) {
    return segments_pairwise(unit, [&](const UnitSegment& s) {
        const std::vector<double>& va = a.values[s.tensor_index];
        const std::vector<double>& vb = b.values[s.tensor_index];
        return pairwise_sum(s.begin, s.end, [&](std::uint64_t i) { return va[i] * vb[i]; });
    });
}

double unit_sumsq(const Dense& a, const Unit& unit) {
    return segments_pairwise(unit, [&](const UnitSegment& s) {
        const std::vector<double>& va = a.values[s.tensor_index];
        return pairwise_sum(s.begin, s.end, [&](std::uint64_t i) { return va[i] * va[i]; });
    });
}

double unit_sumsq_diff(const Dense& a, const Dense& b, const Unit& unit) {
    return segments_pairwise(unit, [&](const UnitSegment& s) {
        const std::vector<double>& va = a.values[s.tensor_index];
        const std::vector<double>& vb = b.values[s.tensor_index];
        return pairwise_sum(s.begin, s.end, [&](std::uint64_t i) {
            const double d = va[i] - vb[i];
            return d * d;
        });
    });
}

double pairwise_angle_deg(const DeltaCheckpoint& a, const DeltaCheckpoint& b, const Unit& unit) {
    if (a.anchor_digest != b.anchor_digest) {
        throw SchemaError("pairwise_angle: deltas were taken against different anchors");
    }
    const double eps = epsilon_norm(unit.dim);
    const double sumsq_a = unit_sumsq(a.dense, unit);
    const double sumsq_b = unit_sumsq(b.dense, unit);
    if (std::sqrt(sumsq_a) <= eps || std::sqrt(sumsq_b) <= eps) {
        throw NumericError("pairwise_angle: degenerate unit '" + unit.key +
                           "' (delta norm at or below epsilon)");
    }
    const double cosine = clamped_cosine(unit_dot(a.dense, b.dense, unit), sumsq_a, sumsq_b);
    return to_degrees(std::acos(cosine));
}

GeometryReport geometry_report(std::span<const Checkpoint> ensemble, const Checkpoint& anchor,
                               const Granularity& granularity) {
    if (ensemble.size() < 2) {
        throw NumericError("geometry_report requires an ensemble of at least 2 checkpoints");
    }
    require_compatible_ensemble(ensemble, "geometry_report");
    require_same_schema(ensemble.front(), anchor, "geometry_report (anchor)");

    const std::size_t n_models = ensemble.size();
    std::vector<Dense> deltas(n_models);
    for (std::size_t m = 0; m < n_models; ++m) {
        deltas[m] = dense_difference(ensemble[m], anchor);
    }

    const std::vector<Unit> units = build_units(deltas.front(), granularity);

    GeometryReport report;
    report.model_count = n_models;
    report.granularity = std::string(granularity_kind_name(granularity.kind));
    report.units.resize(units.size());

    parallel_for(units.size(), [&](std::size_t u) {
        const Unit& unit = units[u];
        const double eps = epsilon_norm(unit.dim);
        const double sqrt_n = std::sqrt(static_cast<double>(unit.dim));

        std::vector<double> sumsqs(n_models);
        std::vector<double> norms(n_models);
        bool any_degenerate = false;
        for (std::size_t m = 0; m < n_models; ++m) {
            sumsqs[m] = unit_sumsq(deltas[m], unit);
            norms[m] = std::sqrt(sumsqs[m]);
            any_degenerate |= norms[m] <= eps;
        }

        std::vector<double> angles;
        angles.reserve(n_models * (n_models - 1) / 2);
        for (std::size_t i = 0; i < n_models; ++i) {
            for (std::size_t j = i + 1; j < n_models; ++j) {
                if (norms[i] <= eps || norms[j] <= eps) continue;
                const double dot = unit_dot(deltas[i], deltas[j], unit);
                angles.push_back(
                    to_degrees(std::acos(clamped_cosine(dot, sumsqs[i], sumsqs[j]))));
            }
        }

        std::vector<double> normalized(n_models);
        for (std::size_t m = 0; m < n_models; ++m) normalized[m] = norms[m] / sqrt_n;

        const MeanStd angle_stats = mean_std(angles);
        const MeanStd norm_stats = mean_std(normalized);

        UnitGeometry& row = report.units[u];
        row.unit = unit.key;
        row.klass = unit.klass;
        row.n = unit.dim;
        row.mean_angle_deg = angles.empty() ? std::numeric_limits<double>::quiet_NaN()
                                            : angle_stats.mean;
        row.std_angle_deg = angles.empty() ? std::numeric_limits<double>::quiet_NaN()
                                           : angle_stats.std;
        row.mean_norm_per_sqrt_n = norm_stats.mean;
        row.std_norm = norm_stats.std;
        row.pairs = static_cast<std::uint64_t>(n_models) * (n_models - 1) / 2;
        row.degenerate = any_degenerate;
    });
    return report;
}

Checkpoint pseudo_center(std::span<const Checkpoint> ensemble) {
    if (ensemble.empty()) {
        throw NumericError("pseudo_center requires a non-empty ensemble");
    }
    require_compatible_ensemble(ensemble, "pseudo_center");

    std::vector<std::size_t> order(ensemble.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<std::string> digests(ensemble.size());
    for (std::size_t i = 0; i < ensemble.size(); ++i) digests[i] = content_digest(ensemble[i]);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return digests[a] < digests[b]; });

    std::vector<Dense> dense(ensemble.size());
    for (std::size_t i = 0; i < ensemble.size(); ++i) dense[i] = to_dense(ensemble[order[i]]);

    const double inv_n = 1.0 / static_cast<double>(ensemble.size());
    Dense mean = dense.front();
    for (std::size_t t = 0; t < mean.tensor_count(); ++t) {
        std::vector<double>& out = mean.values[t];
        for (std::size_t e = 0; e < out.size(); ++e) {
            out[e] = pairwise_sum(0, ensemble.size(),
                                  [&](std::uint64_t m) { return dense[m].values[t][e]; }) *
                     inv_n;
        }
    }
    return from_dense(mean, ensemble.front());
}

DistanceReport distance_to(const Checkpoint& ckpt, const Checkpoint& center,
                           const Granularity& granularity) {
    require_same_schema(ckpt, center, "distance_to");
    const Dense a = to_dense(ckpt);
    const Dense b = to_dense(center);

    DistanceReport report;
    std::vector<double> per_tensor(a.tensor_count());
    for (std::size_t t = 0; t < a.tensor_count(); ++t) {
        per_tensor[t] = pairwise_sum(0, a.values[t].size(), [&](std::uint64_t i) {
            const double d = a.values[t][i] - b.values[t][i];
            return d * d;
        });
    }
    report.global = std::sqrt(pairwise_sum(per_tensor));

    for (const Unit& unit : build_units(a, granularity)) {
        report.units.push_back({unit.key, std::sqrt(unit_sumsq_diff(a, b, unit))});
    }
    return report;
}

bool PropertyReport::all_pass() const {
    return std::all_of(checks.begin(), checks.end(),
                       [](const PropertyCheck& c) { return c.pass; });
}

const PropertyCheck& PropertyReport::check(std::string_view property) const {
    for (const auto& c : checks) {
        if (c.property == property) return c;
    }
    throw NumericError("unknown property '" + std::string(property) + "'");
}

PropertyReport verify_shell_properties(std::span<const Checkpoint> ensemble,
                                       const Checkpoint& anchor, const Checkpoint& center,
                                       double tolerance, const Granularity& granularity) {
    if (ensemble.size() < 3) {
        throw NumericError("verify_shell_properties requires an ensemble of at least 3");
    }
    require_compatible_ensemble(ensemble, "verify_shell_properties");
    require_same_schema(ensemble.front(), anchor, "verify_shell_properties (anchor)");
    require_same_schema(ensemble.front(), center, "verify_shell_properties (center)");

    const std::size_t n_models = ensemble.size();
    std::vector<Dense> deltas(n_models);
    for (std::size_t m = 0; m < n_models; ++m) {
        deltas[m] = dense_difference(ensemble[m], anchor);
    }
    const Dense mu = dense_difference(center, anchor);
    const std::vector<Unit> units = build_units(mu, granularity);

    enum { kLemma = 0, kProp1 = 1, kProp2 = 2, kProp3 = 3 };
    struct UnitOutcome {
        double residual[4] = {0.0, 0.0, 0.0, 0.0};
        bool evaluated[4] = {false, false, false, false};
        bool degenerate[4] = {false, false, false, false};
    };
    std::vector<UnitOutcome> outcomes(units.size());

    parallel_for(units.size(), [&](std::size_t u) {
        const Unit& unit = units[u];
        UnitOutcome& outcome = outcomes[u];
        const double eps = epsilon_norm(unit.dim);

        const double mu_sq = unit_sumsq(mu, unit);
        const double mu_norm = std::sqrt(mu_sq);
        const bool mu_degenerate = mu_norm <= eps;

        std::vector<double> delta_norms(n_models);
        for (std::size_t m = 0; m < n_models; ++m) {
            delta_norms[m] = std::sqrt(unit_sumsq(deltas[m], unit));
        }

        // Lemma: w_i . mu == mu . mu, residual normalized by ||w_i|| ||mu||.
        for (std::size_t m = 0; m < n_models; ++m) {
            if (mu_degenerate || delta_norms[m] <= eps) {
                outcome.degenerate[kLemma] = true;
                continue;
            }
            const double dot = unit_dot(deltas[m], mu, unit);
            const double residual = std::fabs(dot - mu_sq) / (delta_norms[m] * mu_norm);
            outcome.residual[kLemma] = std::max(outcome.residual[kLemma], residual);
            outcome.evaluated[kLemma] = true;
        }

        // Centered vectors w_i - mu and their norms.
        std::vector<double> centered_norms(n_models);
        for (std::size_t m = 0; m < n_models; ++m) {
            centered_norms[m] = std::sqrt(unit_sumsq_diff(deltas[m], mu, unit));
        }

        // Prop 1: relative spread of ||w_i - mu||.
        const MeanStd spread = mean_std(centered_norms);
        if (spread.mean <= eps) {
            outcome.degenerate[kProp1] = true;
        } else {
            outcome.residual[kProp1] = spread.std / spread.mean;
            outcome.evaluated[kProp1] = true;
        }

        // Prop 2: (w0 - mu) perpendicular to (w_i - mu); w0's delta is the
        // zero vector, so (w0 - mu) is -mu.
        for (std::size_t m = 0; m < n_models; ++m) {
            if (mu_degenerate || centered_norms[m] <= eps) {
                outcome.degenerate[kProp2] = true;
                continue;
            }
            double dot = 0.0;
            // (-mu) . (w_m - mu) accumulated with the same segment schedule.
            dot = segments_pairwise(unit, [&](const UnitSegment& s) {
                const auto& vm = deltas[m].values[s.tensor_index];
                const auto& vmu = mu.values[s.tensor_index];
                return pairwise_sum(s.begin, s.end, [&](std::uint64_t i) {
                    return -vmu[i] * (vm[i] - vmu[i]);
                });
            });
            const double cosine = std::fabs(dot) / (mu_norm * centered_norms[m]);
            outcome.residual[kProp2] = std::max(outcome.residual[kProp2], cosine);
            outcome.evaluated[kProp2] = true;
        }

        // Prop 3: (w_i - mu) perpendicular to (w_j - mu).
        for (std::size_t i = 0; i < n_models; ++i) {
            for (std::size_t j = i + 1; j < n_models; ++j) {
                if (centered_norms[i] <= eps || centered_norms[j] <= eps) {
                    outcome.degenerate[kProp3] = true;
                    continue;
                }
                const double dot = segments_pairwise(unit, [&](const UnitSegment& s) {
                    const auto& vi = deltas[i].values[s.tensor_index];
                    const auto& vj = deltas[j].values[s.tensor_index];
                    const auto& vmu = mu.values[s.tensor_index];
                    return pairwise_sum(s.begin, s.end, [&](std::uint64_t e) {
                        return (vi[e] - vmu[e]) * (vj[e] - vmu[e]);
                    });
                });
                const double cosine = std::fabs(dot) / (centered_norms[i] * centered_norms[j]);
                outcome.residual[kProp3] = std::max(outcome.residual[kProp3], cosine);
                outcome.evaluated[kProp3] = true;
            }
        }
    });

    static const char* kNames[4] = {"lemma", "prop1_thin_shell", "prop2_anchor_orthogonality",
                                    "prop3_mutual_orthogonality"};
    PropertyReport report;
    for (int p = 0; p < 4; ++p) {
        PropertyCheck check;
        check.property = kNames[p];
        check.tolerance = tolerance;
        for (std::size_t u = 0; u < units.size(); ++u) {
            const UnitOutcome& outcome = outcomes[u];
            if (outcome.evaluated[p] && outcome.residual[p] >= check.max_residual) {
                check.max_residual = outcome.residual[p];
                check.worst_unit = units[u].key;
            }
            if (outcome.degenerate[p]) check.degenerate_units.push_back(units[u].key);
        }
        check.pass = check.max_residual <= tolerance;
        report.checks.push_back(std::move(check));
    }
    return report;
}

Checkpoint PlaneGrid::at(std::size_t row, std::size_t col) const {
    const double x = xs.at(col);
    const double y = ys.at(row);
    Dense point = origin;
    for (std::size_t t = 0; t < point.tensor_count(); ++t) {
        std::vector<double>& values = point.values[t];
        for (std::size_t i = 0; i < values.size(); ++i) {
            values[i] += x * e1[t][i] + y * e2[t][i];
        }
    }
    return from_dense(point, schema);
}

PlaneGrid plane_grid(const Checkpoint& w0, const Checkpoint& wA, const Checkpoint& wB,
                     std::size_t rows, std::size_t cols, double margin) {
    require_same_schema(w0, wA, "plane_grid (wA)");
    require_same_schema(w0, wB, "plane_grid (wB)");
    if (rows < 1 || cols < 1) {
        throw NumericError("plane_grid requires rows >= 1 and cols >= 1");
    }
    if (margin < 0.0) {
        throw NumericError("plane_grid margin must be non-negative");
    }

    PlaneGrid grid;
    grid.schema.tensors = w0.tensors;
    grid.origin = to_dense(w0);

    Dense a = dense_difference(wA, w0);
    Dense b = dense_difference(wB, w0);

    const Granularity global = Granularity::global();
    const std::vector<Unit> units = build_units(grid.origin, global);
    const Unit& all = units.front();
    const double eps = epsilon_norm(all.dim);

    grid.a_norm = std::sqrt(unit_sumsq(a, all));
    if (grid.a_norm <= eps) {
        throw NumericError("plane_grid: wA equals w0, no basis direction exists");
    }
    for (auto& values : a.values) {
        for (double& v : values) v /= grid.a_norm;
    }
    grid.e1 = a.values;

    const double b_on_e1 = unit_dot(b, a, all);
    for (std::size_t t = 0; t < b.values.size(); ++t) {
        for (std::size_t i = 0; i < b.values[t].size(); ++i) {
            b.values[t][i] -= b_on_e1 * a.values[t][i];
        }
    }
    grid.b_orth_norm = std::sqrt(unit_sumsq(b, all));
    if (grid.b_orth_norm <= eps) {
        throw NumericError(
            "plane_grid: wB is collinear with the w0-wA line, so the plane is undefined; "
            "sweep that line instead with pair interpolation (merge --method pair)");
    }
    for (auto& values : b.values) {
        for (double& v : values) v /= grid.b_orth_norm;
    }
    grid.e2 = b.values;
    grid.basis_dot = unit_dot(a, b, all);

    grid.p0 = {0.0, 0.0};
    grid.pa = {grid.a_norm, 0.0};
    grid.pb = {b_on_e1, grid.b_orth_norm};

    double xmin = std::min({0.0, grid.pa.x, grid.pb.x});
    double xmax = std::max({0.0, grid.pa.x, grid.pb.x});
    double ymin = std::min({0.0, grid.pb.y});
    double ymax = std::max({0.0, grid.pb.y});
    const double x_extent = xmax - xmin;
    const double y_extent = ymax - ymin;
    xmin -= margin * x_extent;
    xmax += margin * x_extent;
    ymin -= margin * y_extent;
    ymax += margin * y_extent;

    grid.xs.resize(cols);
    grid.ys.resize(rows);
    for (std::size_t c = 0; c < cols; ++c) {
        grid.xs[c] = cols == 1 ? xmin
                               : xmin + (xmax - xmin) * static_cast<double>(c) /
                                            static_cast<double>(cols - 1);
    }
    for (std::size_t r = 0; r < rows; ++r) {
        grid.ys[r] = rows == 1 ? ymin
                               : ymin + (ymax - ymin) * static_cast<double>(r) /
                                            static_cast<double>(rows - 1);
    }
    return grid;
}

Checkpoint perturb_from_center(const Checkpoint& center, const Granularity& granularity,
                               const std::map<std::string, double>& sigma, std::uint64_t seed) {
    Dense dense = to_dense(center);
    const std::vector<Unit> units = build_units(dense, granularity);

    for (const Unit& unit : units) {
        const auto it = sigma.find(unit.key);
        if (it == sigma.end()) {
            throw NumericError("perturb_from_center: no sigma for unit '" + unit.key + "'");
        }
        if (it->second < 0.0 || !std::isfinite(it->second)) {
            throw NumericError("perturb_from_center: sigma for unit '" + unit.key +
                               "' must be finite and non-negative");
        }
    }

    for (const Unit& unit : units) {
        const double s = sigma.at(unit.key);
        if (s == 0.0) continue;
        std::mt19937_64 rng(derive_seed(seed, unit.key));
        std::normal_distribution<double> gauss(0.0, 1.0);
        for (const UnitSegment& segment : unit.segments) {
            std::vector<double>& values = dense.values[segment.tensor_index];
            for (std::uint64_t i = segment.begin; i < segment.end; ++i) {
                values[i] += s * gauss(rng);
            }
        }
    }
    return from_dense(dense, center);
}

}  // namespace stockpot
