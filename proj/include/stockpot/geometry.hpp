#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "stockpot/checkpoint.hpp"
#include "stockpot/granularity.hpp"

namespace stockpot {

// Fine-tuning deltas w - w0 against an anchor checkpoint, in f64. All
// angles and norms in the toolkit are computed on these, never on raw
// weights: the anchor is the origin of the geometry.
struct DeltaCheckpoint {
    std::string anchor_digest;
    Dense dense;
};

DeltaCheckpoint delta(const Checkpoint& model, const Checkpoint& anchor);

// Scale-aware zero test: vectors with norm at or below this have no
// defined direction.
inline double epsilon_norm(std::uint64_t dim) {
    return 1e-12 * std::sqrt(static_cast<double>(dim));
}

// Deterministic reductions restricted to one unit. Segment sums are
// combined pairwise in segment order.
double unit_dot(const Dense& a, const Dense& b, const Unit& unit);
double unit_sumsq(const Dense& a, const Unit& unit);
double unit_sumsq_diff(const Dense& a, const Dense& b, const Unit& unit);

// Angle in degrees between two deltas restricted to a unit; the cosine is
// clamped to [-1, 1] before arccos. Throws NumericError when either norm
// is at or below epsilon_norm.
double pairwise_angle_deg(const DeltaCheckpoint& a, const DeltaCheckpoint& b, const Unit& unit);

struct UnitGeometry {
    std::string unit;
    std::string klass;
    std::uint64_t n = 0;
    double mean_angle_deg = 0.0;
    double std_angle_deg = 0.0;
    double mean_norm_per_sqrt_n = 0.0;
    double std_norm = 0.0;
    std::uint64_t pairs = 0;  // nominal N(N-1)/2
    bool degenerate = false;  // some delta in the unit has no direction
};

struct GeometryReport {
    std::uint64_t model_count = 0;
    std::string granularity;
    std::vector<UnitGeometry> units;
};

// Per-unit mean/std of pairwise delta angles and of normalized delta norms
// ||w - w0|| / sqrt(n) across the ensemble. Pairs involving a degenerate
// delta are excluded from the statistics and the unit is flagged.
GeometryReport geometry_report(std::span<const Checkpoint> ensemble, const Checkpoint& anchor,
                               const Granularity& granularity);

// Elementwise arithmetic mean in f64. Inputs are ordered by content digest
// before the reduction, so the output bytes are invariant under any
// permutation of the ensemble.
Checkpoint pseudo_center(std::span<const Checkpoint> ensemble);

struct UnitDistance {
    std::string unit;
    double distance = 0.0;
};

struct DistanceReport {
    double global = 0.0;
    std::vector<UnitDistance> units;
};

DistanceReport distance_to(const Checkpoint& ckpt, const Checkpoint& center,
                           const Granularity& granularity);

struct PropertyCheck {
    std::string property;
    double max_residual = 0.0;
    std::string worst_unit;
    double tolerance = 0.0;
    bool pass = true;
    std::vector<std::string> degenerate_units;
};

struct PropertyReport {
    std::vector<PropertyCheck> checks;

    bool all_pass() const;
    const PropertyCheck& check(std::string_view property) const;
};

// Verifies, on deltas and per unit, the concentration identities the mean
// of a thin-shell ensemble must satisfy around a given center:
//   lemma:       w_i . mu == mu . mu      (residual normalized by norms)
//   prop1:       ||w_i - mu|| constant    (relative std of distances)
//   prop2:       (w0 - mu) perpendicular to (w_i - mu)
//   prop3:       (w_i - mu) perpendicular to (w_j - mu)
// Degenerate vectors are reported per property, never raised.
PropertyReport verify_shell_properties(std::span<const Checkpoint> ensemble,
                                       const Checkpoint& anchor, const Checkpoint& center,
                                       double tolerance, const Granularity& granularity);

struct PlanePoint {
    double x = 0.0;
    double y = 0.0;
};

// 2-D slice of weight space through three checkpoints, with an orthonormal
// basis from Gram-Schmidt on the full flattened deltas. Grid checkpoints
// are materialized lazily via at().
struct PlaneGrid {
    Checkpoint schema;
    Dense origin;
    std::vector<std::vector<double>> e1;
    std::vector<std::vector<double>> e2;
    double a_norm = 0.0;       // ||wA - w0||
    double b_orth_norm = 0.0;  // || (wB - w0) orthogonal to e1 ||
    double basis_dot = 0.0;    // e1 . e2 residual, diagnostics only
    PlanePoint p0, pa, pb;     // projected coordinates of w0, wA, wB
    std::vector<double> xs;    // column coordinates
    std::vector<double> ys;    // row coordinates

    std::size_t rows() const { return ys.size(); }
    std::size_t cols() const { return xs.size(); }
    Checkpoint at(std::size_t row, std::size_t col) const;
};

// The grid spans the bounding box of the three projected points, expanded
// on each side by margin x (box extent). Throws NumericError when wA == w0
// or when wB is collinear with the w0-wA line.
PlaneGrid plane_grid(const Checkpoint& w0, const Checkpoint& wA, const Checkpoint& wB,
                     std::size_t rows, std::size_t cols, double margin);

// Adds i.i.d. zero-mean Gaussian noise with the unit's sigma to every
// element. sigma must cover every unit key; deterministic for a fixed seed.
Checkpoint perturb_from_center(const Checkpoint& center, const Granularity& granularity,
                               const std::map<std::string, double>& sigma, std::uint64_t seed);

}  // namespace stockpot
