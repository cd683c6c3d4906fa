#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "stockpot/checkpoint.hpp"

namespace stockpot {

// A per-unit constant fill or an explicit value per element.
struct FillOrValues {
    double fill = 0.0;
    std::vector<double> values;  // empty means "use fill"

    double at(std::uint64_t i) const { return values.empty() ? fill : values[i]; }
};

// Ground-truth Gaussian ensemble description: per unit, the dimension, the
// true center mu, an isotropic per-unit sigma, and the offset placing the
// anchor w0 relative to mu. Everything downstream is a pure function of
// this plus the seed.
struct SyntheticUnit {
    std::string name;
    std::uint64_t dim = 0;
    double sigma = 0.0;
    FillOrValues mu;
    FillOrValues anchor_offset;
};

struct SyntheticSpec {
    std::uint64_t seed = 0;
    std::vector<SyntheticUnit> units;

    void validate() const;
    std::uint64_t total_dim() const;

    // 3 units of dimension 10^4, sigma 0.01, anchor offset with norm
    // sqrt(n sigma^2): large enough for concentration, small enough for
    // sub-second sampling.
    static SyntheticSpec desk_default(std::uint64_t seed = 0);

    static SyntheticSpec from_json(const nlohmann::ordered_json& json);
    nlohmann::ordered_json to_json() const;
};

struct SampledEnsemble {
    std::vector<Checkpoint> models;
    Checkpoint anchor;  // mu + anchor_offset
    Checkpoint center;  // mu
};

// Samples w_i ~ N(mu, sigma^2 I) per unit. Deterministic for a fixed seed;
// each (model, unit) pair draws from its own derived stream, so model i's
// values do not depend on how many models are requested.
SampledEnsemble sample_ensemble(const SyntheticSpec& spec, std::size_t n_models);

struct UnitConcentration {
    std::string unit;
    std::uint64_t n = 0;
    double predicted_norm_mean = 0.0;
    double measured_norm_mean = 0.0;
    double predicted_norm_std = 0.0;
    double measured_norm_std = 0.0;
    double predicted_angle_mean_deg = 0.0;
    double measured_angle_mean_deg = 0.0;
    double predicted_angle_std_deg = 0.0;
    double measured_angle_std_deg = 0.0;
    double norm_mean_rel_deviation = 0.0;
    double angle_mean_abs_deviation_deg = 0.0;
};

struct ConcentrationReport {
    std::size_t samples = 0;
    std::vector<UnitConcentration> units;
};

// Closed-form predictions against Monte Carlo measurements, both on deltas
// against the anchor: the predicted mean delta norm is
// sqrt(||mu - w0||^2 + n sigma^2) and the predicted pairwise delta cosine
// is ||mu - w0||^2 / (||mu - w0||^2 + n sigma^2).
ConcentrationReport concentration_stats(const SyntheticSpec& spec, std::size_t samples);

struct TrajectoryParams {
    std::size_t epochs = 1;
    double eta = 1.0;                 // contraction gain per epoch, in (0, 1]
    std::vector<double> sigmas;       // per-epoch noise scale, non-increasing
    bool rebranch = false;            // restart each epoch from the merged weight

    void validate() const;
    static TrajectoryParams from_json(const nlohmann::ordered_json& json);
    nlohmann::ordered_json to_json() const;
};

struct TrajectoryResult {
    std::vector<std::vector<Checkpoint>> per_seed;  // [seed][epoch] endpoints
    std::vector<Checkpoint> centers;                // [epoch] true process center
};

// Ornstein-Uhlenbeck-style contraction toward mu with decaying noise:
//   w <- (1 - eta) w + eta mu + sigma_e xi,  xi ~ N(0, I) per unit.
// The per-epoch center applies the same noise-free step to the epoch's
// start. With rebranch, all seeds restart each epoch from the closed-form
// merge of the previous epoch's endpoints (anchored at w0, per-tensor).
TrajectoryResult simulate_trajectories(const SyntheticSpec& spec, const TrajectoryParams& params,
                                       std::span<const std::uint64_t> seeds);

struct BruteForceResult {
    double t_star = 0.0;
    double distance = 0.0;
};

// Exhaustive grid oracle: evaluates the distance of
// t * avg(models) + (1 - t) * anchor from the true center at every t in
// [0, 1] at grid_step resolution and returns the minimizer. Kept brute
// force on purpose; it independently checks the closed-form ratio.
BruteForceResult brute_force_optimal_t(const Checkpoint& anchor,
                                       std::span<const Checkpoint> models,
                                       const Checkpoint& true_center, double grid_step);

}  // namespace stockpot
