#include "stockpot/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>

#include "stockpot/errors.hpp"
#include "stockpot/geometry.hpp"
#include "stockpot/merge.hpp"
#include "stockpot/parallel.hpp"
#include "stockpot/reduction.hpp"
#include "stockpot/rng.hpp"

namespace stockpot {

namespace {

using ordered_json = nlohmann::ordered_json;

FillOrValues fill_or_values_from_json(const ordered_json& json, std::uint64_t dim,
                                      const std::string& what) {
    FillOrValues out;
    if (json.is_number()) {
        out.fill = json.get<double>();
        return out;
    }
    if (json.is_array()) {
        out.values = json.get<std::vector<double>>();
        if (out.values.size() != dim) {
            throw NumericError(what + ": expected " + std::to_string(dim) + " values, got " +
                               std::to_string(out.values.size()));
        }
        return out;
    }
    throw NumericError(what + ": expected a number or an array of numbers");
}

ordered_json fill_or_values_to_json(const FillOrValues& fov) {
    if (fov.values.empty()) return fov.fill;
    return fov.values;
}

// Values of one synthetic tensor: mu plus an optional offset.
std::vector<double> unit_base(const SyntheticUnit& unit, bool add_offset) {
    std::vector<double> values(unit.dim);
    for (std::uint64_t i = 0; i < unit.dim; ++i) {
        values[i] = unit.mu.at(i) + (add_offset ? unit.anchor_offset.at(i) : 0.0);
    }
    return values;
}

Checkpoint checkpoint_from_units(const SyntheticSpec& spec, bool add_offset,
                                 std::map<std::string, std::string> metadata) {
    Checkpoint ckpt;
    for (const auto& unit : spec.units) {
        ckpt.tensors.emplace(unit.name, TensorRecord::from_f64(DType::F64, {unit.dim},
                                                               unit_base(unit, add_offset)));
    }
    ckpt.metadata = std::move(metadata);
    return ckpt;
}

double offset_sumsq(const SyntheticUnit& unit) {
    return pairwise_sum(0, unit.dim, [&](std::uint64_t i) {
        const double o = unit.anchor_offset.at(i);
        return o * o;
    });
}

double to_degrees(double radians) {
    return radians * 180.0 / std::numbers::pi;
}

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;
};

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

}  // namespace

void SyntheticSpec::validate() const {
    if (units.empty()) {
        throw NumericError("synthetic spec has no units");
    }
    std::uint64_t total = 0;
    std::vector<std::string> names;
    for (const auto& unit : units) {
        if (unit.name.empty()) throw NumericError("synthetic unit with an empty name");
        if (unit.dim < 1) throw NumericError("unit '" + unit.name + "': dimension must be >= 1");
        if (!(unit.sigma >= 0.0) || !std::isfinite(unit.sigma)) {
            throw NumericError("unit '" + unit.name + "': sigma must be finite and >= 0");
        }
        if (!unit.mu.values.empty() && unit.mu.values.size() != unit.dim) {
            throw NumericError("unit '" + unit.name + "': mu length does not match dim");
        }
        if (!unit.anchor_offset.values.empty() && unit.anchor_offset.values.size() != unit.dim) {
            throw NumericError("unit '" + unit.name + "': anchor_offset length does not match dim");
        }
        names.push_back(unit.name);
        total += unit.dim;
    }
    std::sort(names.begin(), names.end());
    if (std::adjacent_find(names.begin(), names.end()) != names.end()) {
        throw NumericError("synthetic spec has duplicate unit names");
    }
    if (total < 1) {
        throw NumericError("synthetic spec has zero total dimension");
    }
}

std::uint64_t SyntheticSpec::total_dim() const {
    std::uint64_t total = 0;
    for (const auto& unit : units) total += unit.dim;
    return total;
}

SyntheticSpec SyntheticSpec::desk_default(std::uint64_t seed) {
    SyntheticSpec spec;
    spec.seed = seed;
    for (int k = 0; k < 3; ++k) {
        SyntheticUnit unit;
        unit.name = "unit" + std::to_string(k);
        unit.dim = 10000;
        unit.sigma = 0.01;
        unit.mu.fill = 0.05;
        // A constant fill of sigma gives ||offset|| = sigma * sqrt(n) =
        // sqrt(n sigma^2), the shell radius.
        unit.anchor_offset.fill = 0.01;
        spec.units.push_back(std::move(unit));
    }
    return spec;
}

SyntheticSpec SyntheticSpec::from_json(const ordered_json& json) {
    SyntheticSpec spec;
    try {
        spec.seed = json.value("seed", 0ull);
        if (!json.contains("units") || !json.at("units").is_array()) {
            throw NumericError("synthetic spec: missing 'units' array");
        }
        for (const auto& item : json.at("units")) {
            SyntheticUnit unit;
            unit.name = item.at("name").get<std::string>();
            unit.dim = item.at("dim").get<std::uint64_t>();
            unit.sigma = item.at("sigma").get<double>();
            if (item.contains("mu")) {
                unit.mu = fill_or_values_from_json(item.at("mu"), unit.dim,
                                                   "unit '" + unit.name + "' mu");
            }
            if (item.contains("anchor_offset")) {
                unit.anchor_offset = fill_or_values_from_json(
                    item.at("anchor_offset"), unit.dim, "unit '" + unit.name + "' anchor_offset");
            }
            spec.units.push_back(std::move(unit));
        }
    } catch (const nlohmann::json::exception& ex) {
        throw NumericError(std::string("invalid synthetic spec: ") + ex.what());
    }
    spec.validate();
    return spec;
}

ordered_json SyntheticSpec::to_json() const {
    ordered_json json;
    json["seed"] = seed;
    json["units"] = ordered_json::array();
    for (const auto& unit : units) {
        ordered_json u;
        u["name"] = unit.name;
        u["dim"] = unit.dim;
        u["sigma"] = unit.sigma;
        u["mu"] = fill_or_values_to_json(unit.mu);
        u["anchor_offset"] = fill_or_values_to_json(unit.anchor_offset);
        json["units"].push_back(std::move(u));
    }
    return json;
}

SampledEnsemble sample_ensemble(const SyntheticSpec& spec, std::size_t n_models) {
    spec.validate();
    if (n_models < 1) {
        throw NumericError("sample_ensemble requires N >= 1");
    }

    SampledEnsemble out;
    out.anchor = checkpoint_from_units(spec, true, {{"stockpot.synthetic", "anchor"}});
    out.center = checkpoint_from_units(spec, false, {{"stockpot.synthetic", "center"}});

    out.models.resize(n_models);
    parallel_for(n_models, [&](std::size_t m) {
        Checkpoint model;
        for (const auto& unit : spec.units) {
            std::vector<double> values = unit_base(unit, false);
            if (unit.sigma > 0.0) {
                std::mt19937_64 rng(derive_seed(spec.seed, "sample/" + unit.name, m));
                std::normal_distribution<double> gauss(0.0, 1.0);
                for (double& v : values) v += unit.sigma * gauss(rng);
            }
            model.tensors.emplace(unit.name,
                                  TensorRecord::from_f64(DType::F64, {unit.dim}, values));
        }
        model.metadata = std::map<std::string, std::string>{
            {"stockpot.synthetic", "model"}, {"stockpot.index", std::to_string(m)}};
        out.models[m] = std::move(model);
    });
    return out;
}

ConcentrationReport concentration_stats(const SyntheticSpec& spec, std::size_t samples) {
    if (samples < 2) {
        throw NumericError("concentration_stats requires at least 2 samples");
    }
    const SampledEnsemble ensemble = sample_ensemble(spec, samples);

    ConcentrationReport report;
    report.samples = samples;

    const Dense anchor_dense = to_dense(ensemble.anchor);
    std::vector<Dense> deltas(samples);
    for (std::size_t m = 0; m < samples; ++m) {
        Dense d = to_dense(ensemble.models[m]);
        for (std::size_t t = 0; t < d.tensor_count(); ++t) {
            for (std::size_t e = 0; e < d.values[t].size(); ++e) {
                d.values[t][e] -= anchor_dense.values[t][e];
            }
        }
        deltas[m] = std::move(d);
    }

    const std::vector<Unit> units = build_units(anchor_dense, Granularity::per_tensor());
    for (const Unit& unit : units) {
        // Units are per tensor and tensors are name-ascending, as are spec
        // units after checkpoint construction; find by name to be safe.
        const auto spec_it = std::find_if(spec.units.begin(), spec.units.end(),
                                          [&](const SyntheticUnit& s) { return s.name == unit.key; });
        const SyntheticUnit& spec_unit = *spec_it;

        const double n = static_cast<double>(spec_unit.dim);
        const double o_sq = offset_sumsq(spec_unit);
        const double s_sq = n * spec_unit.sigma * spec_unit.sigma;
        const double norm_sq = o_sq + s_sq;

        UnitConcentration row;
        row.unit = unit.key;
        row.n = spec_unit.dim;
        row.predicted_norm_mean = std::sqrt(norm_sq);
        row.predicted_norm_std =
            norm_sq > 0.0 ? std::sqrt(4.0 * spec_unit.sigma * spec_unit.sigma * o_sq +
                                      2.0 * n * std::pow(spec_unit.sigma, 4)) /
                                (2.0 * row.predicted_norm_mean)
                          : 0.0;
        const double cos_mean = norm_sq > 0.0 ? o_sq / norm_sq : 1.0;
        row.predicted_angle_mean_deg = to_degrees(std::acos(std::clamp(cos_mean, -1.0, 1.0)));
        const double cos_std =
            norm_sq > 0.0
                ? std::sqrt(2.0 * spec_unit.sigma * spec_unit.sigma * o_sq +
                            n * std::pow(spec_unit.sigma, 4)) /
                      norm_sq
                : 0.0;
        const double sin_mean = std::sqrt(std::max(1.0 - cos_mean * cos_mean, 0.0));
        row.predicted_angle_std_deg = sin_mean > 1e-12 ? to_degrees(cos_std / sin_mean) : 0.0;

        // Measurements on the sampled deltas.
        const double eps = epsilon_norm(unit.dim);
        std::vector<double> sumsqs(samples);
        std::vector<double> norms(samples);
        for (std::size_t m = 0; m < samples; ++m) {
            sumsqs[m] = unit_sumsq(deltas[m], unit);
            norms[m] = std::sqrt(sumsqs[m]);
        }
        std::vector<double> angles;
        angles.reserve(samples * (samples - 1) / 2);
        for (std::size_t i = 0; i < samples; ++i) {
            for (std::size_t j = i + 1; j < samples; ++j) {
                if (norms[i] <= eps || norms[j] <= eps) continue;
                const double cosine =
                    std::clamp(unit_dot(deltas[i], deltas[j], unit) /
                                   std::sqrt(sumsqs[i] * sumsqs[j]),
                               -1.0, 1.0);
                angles.push_back(to_degrees(std::acos(cosine)));
            }
        }

        const MeanStd norm_stats = mean_std(norms);
        const MeanStd angle_stats = mean_std(angles);
        row.measured_norm_mean = norm_stats.mean;
        row.measured_norm_std = norm_stats.std;
        row.measured_angle_mean_deg =
            angles.empty() ? std::numeric_limits<double>::quiet_NaN() : angle_stats.mean;
        row.measured_angle_std_deg =
            angles.empty() ? std::numeric_limits<double>::quiet_NaN() : angle_stats.std;
        row.norm_mean_rel_deviation =
            row.predicted_norm_mean > 0.0
                ? std::fabs(row.measured_norm_mean - row.predicted_norm_mean) /
                      row.predicted_norm_mean
                : std::fabs(row.measured_norm_mean);
        row.angle_mean_abs_deviation_deg =
            std::fabs(row.measured_angle_mean_deg - row.predicted_angle_mean_deg);
        report.units.push_back(std::move(row));
    }
    return report;
}

void TrajectoryParams::validate() const {
    if (epochs < 1) throw NumericError("trajectory params: epochs must be >= 1");
    if (!(eta > 0.0) || eta > 1.0) throw NumericError("trajectory params: eta must be in (0, 1]");
    if (sigmas.size() != epochs) {
        throw NumericError("trajectory params: need one sigma per epoch (" +
                           std::to_string(epochs) + "), got " + std::to_string(sigmas.size()));
    }
    for (std::size_t e = 0; e < sigmas.size(); ++e) {
        if (!(sigmas[e] >= 0.0) || !std::isfinite(sigmas[e])) {
            throw NumericError("trajectory params: sigmas must be finite and >= 0");
        }
        if (e > 0 && sigmas[e] > sigmas[e - 1]) {
            throw NumericError("trajectory params: sigma schedule must be non-increasing");
        }
    }
}

TrajectoryParams TrajectoryParams::from_json(const ordered_json& json) {
    TrajectoryParams params;
    try {
        params.epochs = json.at("epochs").get<std::size_t>();
        params.eta = json.at("eta").get<double>();
        params.rebranch = json.value("rebranch", false);
        if (json.contains("sigmas")) {
            params.sigmas = json.at("sigmas").get<std::vector<double>>();
        } else if (json.contains("sigma0")) {
            const double sigma0 = json.at("sigma0").get<double>();
            const double decay = json.value("decay", 1.0);
            if (decay < 0.0 || decay > 1.0) {
                throw NumericError("trajectory params: decay must be in [0, 1]");
            }
            double s = sigma0;
            for (std::size_t e = 0; e < params.epochs; ++e) {
                params.sigmas.push_back(s);
                s *= decay;
            }
        } else {
            throw NumericError("trajectory params: provide 'sigmas' or 'sigma0'");
        }
    } catch (const nlohmann::json::exception& ex) {
        throw NumericError(std::string("invalid trajectory params: ") + ex.what());
    }
    params.validate();
    return params;
}

ordered_json TrajectoryParams::to_json() const {
    ordered_json json;
    json["epochs"] = epochs;
    json["eta"] = eta;
    json["sigmas"] = sigmas;
    json["rebranch"] = rebranch;
    return json;
}

TrajectoryResult simulate_trajectories(const SyntheticSpec& spec, const TrajectoryParams& params,
                                       std::span<const std::uint64_t> seeds) {
    spec.validate();
    params.validate();
    if (seeds.empty()) {
        throw NumericError("simulate_trajectories requires at least 1 seed");
    }

    const Checkpoint anchor = checkpoint_from_units(spec, true, {{"stockpot.synthetic", "anchor"}});
    const Dense anchor_dense = to_dense(anchor);

    // Spec units aligned with the name-ascending dense tensor order.
    std::vector<const SyntheticUnit*> unit_by_tensor(anchor_dense.tensor_count());
    for (std::size_t t = 0; t < anchor_dense.tensor_count(); ++t) {
        for (const auto& unit : spec.units) {
            if (unit.name == anchor_dense.names[t]) unit_by_tensor[t] = &unit;
        }
    }

    // Current state per seed, plus the common or per-seed epoch start used
    // for the analytic center.
    std::vector<Dense> state(seeds.size(), anchor_dense);
    Dense mean_path = anchor_dense;  // noise-free start shared by all seeds

    TrajectoryResult result;
    result.per_seed.resize(seeds.size());

    auto mu_at = [&](std::size_t tensor_index, std::uint64_t e) {
        return unit_by_tensor[tensor_index]->mu.at(e);
    };

    for (std::size_t epoch = 0; epoch < params.epochs; ++epoch) {
        const double sigma_e = params.sigmas[epoch];

        // Center: the noise-free affine step from this epoch's start.
        for (std::size_t t = 0; t < mean_path.tensor_count(); ++t) {
            for (std::uint64_t e = 0; e < mean_path.values[t].size(); ++e) {
                mean_path.values[t][e] =
                    (1.0 - params.eta) * mean_path.values[t][e] + params.eta * mu_at(t, e);
            }
        }
        Checkpoint center = from_dense(mean_path, anchor);
        center.metadata = std::map<std::string, std::string>{
            {"stockpot.synthetic", "center"}, {"stockpot.epoch", std::to_string(epoch + 1)}};
        result.centers.push_back(std::move(center));

        // Per-seed stochastic step from the same dynamics.
        for (std::size_t s = 0; s < seeds.size(); ++s) {
            Dense& w = state[s];
            for (std::size_t t = 0; t < w.tensor_count(); ++t) {
                const SyntheticUnit& unit = *unit_by_tensor[t];
                std::mt19937_64 rng(derive_seed(splitmix64(spec.seed ^ seeds[s]),
                                                "trajectory/" + unit.name, epoch));
                std::normal_distribution<double> gauss(0.0, 1.0);
                for (std::uint64_t e = 0; e < w.values[t].size(); ++e) {
                    const double drifted =
                        (1.0 - params.eta) * w.values[t][e] + params.eta * mu_at(t, e);
                    w.values[t][e] = sigma_e > 0.0 ? drifted + sigma_e * gauss(rng) : drifted;
                }
            }
            Checkpoint snapshot = from_dense(w, anchor);
            snapshot.metadata = std::map<std::string, std::string>{
                {"stockpot.synthetic", "trajectory"},
                {"stockpot.seed", std::to_string(seeds[s])},
                {"stockpot.epoch", std::to_string(epoch + 1)}};
            result.per_seed[s].push_back(std::move(snapshot));
        }

        if (params.rebranch) {
            std::vector<Checkpoint> endpoints;
            endpoints.reserve(seeds.size());
            for (std::size_t s = 0; s < seeds.size(); ++s) {
                endpoints.push_back(result.per_seed[s][epoch]);
            }
            auto [merged, report] = stock_merge(anchor, endpoints, Granularity::per_tensor());
            const Dense merged_dense = to_dense(merged);
            for (auto& w : state) w = merged_dense;
            mean_path = merged_dense;
        }
    }
    return result;
}

BruteForceResult brute_force_optimal_t(const Checkpoint& anchor,
                                       std::span<const Checkpoint> models,
                                       const Checkpoint& true_center, double grid_step) {
    if (!(grid_step > 0.0) || grid_step > 0.5) {
        throw NumericError("brute_force_optimal_t: grid_step must be in (0, 0.5]");
    }
    if (models.empty()) {
        throw NumericError("brute_force_optimal_t requires at least 1 model");
    }
    const SchemaReport schema = validate_schema(models);
    if (!schema.compatible) {
        throw SchemaError("brute_force_optimal_t: model schemas differ at tensor '" +
                          schema.mismatches.front().tensor + "'");
    }
    if (!models.front().same_schema_as(anchor) || !models.front().same_schema_as(true_center)) {
        throw SchemaError("brute_force_optimal_t: anchor/center schema differs from the models");
    }

    const Checkpoint average = uniform_soup(models);
    const Dense avg = to_dense(average);
    const Dense base = to_dense(anchor);
    const Dense target = to_dense(true_center);

    std::vector<double> grid;
    for (std::uint64_t k = 0;; ++k) {
        const double t = static_cast<double>(k) * grid_step;
        if (t >= 1.0) break;
        grid.push_back(t);
    }
    grid.push_back(1.0);

    std::vector<double> distance_sq(grid.size());
    parallel_for(grid.size(), [&](std::size_t k) {
        const double t = grid[k];
        std::vector<double> per_tensor(avg.tensor_count());
        for (std::size_t tn = 0; tn < avg.tensor_count(); ++tn) {
            const auto& a = avg.values[tn];
            const auto& b = base.values[tn];
            const auto& c = target.values[tn];
            per_tensor[tn] = pairwise_sum(0, a.size(), [&](std::uint64_t i) {
                const double d = t * a[i] + (1.0 - t) * b[i] - c[i];
                return d * d;
            });
        }
        distance_sq[k] = pairwise_sum(per_tensor);
    });

    std::size_t best = 0;
    for (std::size_t k = 1; k < grid.size(); ++k) {
        if (distance_sq[k] < distance_sq[best]) best = k;
    }
    return {grid[best], std::sqrt(distance_sq[best])};
}

}  // namespace stockpot
