#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "helpers.hpp"
#include "stockpot/errors.hpp"
#include "stockpot/geometry.hpp"
#include "stockpot/merge.hpp"
#include "stockpot/synthetic.hpp"

using namespace stockpot;
using stockpot::testing::make_checkpoint;
using stockpot::testing::scalar_checkpoint;

namespace {

Unit single_unit(const Dense& schema) {
    return build_units(schema, Granularity::global()).front();
}

DeltaCheckpoint delta_of(const std::vector<double>& values, const Checkpoint& anchor,
                         const std::string& name = "v") {
    return delta(make_checkpoint({{name, values}}), anchor);
}

}  // namespace

TEST_CASE("delta basics") {
    const Checkpoint anchor = scalar_checkpoint({{"a", 3.0}});
    SUBCASE("anchor against itself is exactly zero") {
        const DeltaCheckpoint d = delta(anchor, anchor);
        CHECK(d.dense.values[0] == std::vector<double>{0.0});
        CHECK(d.anchor_digest == content_digest(anchor));
    }
    SUBCASE("scalar difference") {
        const DeltaCheckpoint d = delta(scalar_checkpoint({{"a", 5.0}}), anchor);
        CHECK(d.dense.values[0] == std::vector<double>{2.0});
    }
    SUBCASE("schema mismatch") {
        CHECK_THROWS_AS(delta(scalar_checkpoint({{"b", 1.0}}), anchor), SchemaError);
    }
    SUBCASE("sample minus anchor-at-zero equals the sample") {
        SyntheticSpec spec;
        spec.seed = 5;
        spec.units.push_back({"u", 64, 0.1, {}, {}});
        const SampledEnsemble ensemble = sample_ensemble(spec, 1);
        const DeltaCheckpoint d = delta(ensemble.models[0], ensemble.anchor);
        // mu = 0 and offset = 0, so the delta is the sample itself.
        CHECK(d.dense.values[0] == ensemble.models[0].tensors.at("u").to_f64());
    }
}

TEST_CASE("pairwise angles on hand vectors") {
    const Checkpoint anchor = make_checkpoint({{"v", {0.0, 0.0}}});
    const Unit unit = single_unit(to_dense(anchor));

    CHECK(pairwise_angle_deg(delta_of({3.0, 0.0}, anchor), delta_of({3.0, 3.0}, anchor), unit) ==
          doctest::Approx(45.0).epsilon(1e-12));
    CHECK(pairwise_angle_deg(delta_of({2.0, 1.0}, anchor), delta_of({2.0, 1.0}, anchor), unit) ==
          doctest::Approx(0.0).epsilon(1e-12));
    CHECK(pairwise_angle_deg(delta_of({1.0, 0.0}, anchor), delta_of({0.0, 1.0}, anchor), unit) ==
          doctest::Approx(90.0).epsilon(1e-12));
    CHECK(pairwise_angle_deg(delta_of({1.0, 0.0}, anchor), delta_of({-2.0, 0.0}, anchor), unit) ==
          doctest::Approx(180.0).epsilon(1e-12));

    SUBCASE("degenerate delta raises") {
        CHECK_THROWS_AS(
            pairwise_angle_deg(delta_of({0.0, 0.0}, anchor), delta_of({1.0, 0.0}, anchor), unit),
            NumericError);
    }
    SUBCASE("angle is symmetric") {
        const DeltaCheckpoint a = delta_of({0.3, -1.2}, anchor);
        const DeltaCheckpoint b = delta_of({2.7, 0.4}, anchor);
        CHECK(pairwise_angle_deg(a, b, unit) == pairwise_angle_deg(b, a, unit));
    }
    SUBCASE("power-of-two scaling leaves the angle bit-identical") {
        const DeltaCheckpoint a = delta_of({0.3, -1.2}, anchor);
        const DeltaCheckpoint b = delta_of({2.7, 0.4}, anchor);
        for (const double scale : {0.25, 2.0, 1024.0}) {
            const DeltaCheckpoint sa = delta_of({0.3 * scale, -1.2 * scale}, anchor);
            const DeltaCheckpoint sb = delta_of({2.7 * scale, 0.4 * scale}, anchor);
            CHECK(pairwise_angle_deg(sa, sb, unit) == pairwise_angle_deg(a, b, unit));
        }
    }
    SUBCASE("arbitrary positive scaling preserves the angle numerically") {
        std::mt19937_64 rng(41);
        std::normal_distribution<double> gauss(0.0, 1.0);
        for (int trial = 0; trial < 50; ++trial) {
            std::vector<double> va{gauss(rng), gauss(rng)};
            std::vector<double> vb{gauss(rng), gauss(rng)};
            const double scale = std::exp(gauss(rng));
            std::vector<double> vas{va[0] * scale, va[1] * scale};
            std::vector<double> vbs{vb[0] * scale, vb[1] * scale};
            const double base =
                pairwise_angle_deg(delta_of(va, anchor), delta_of(vb, anchor), unit);
            const double scaled =
                pairwise_angle_deg(delta_of(vas, anchor), delta_of(vbs, anchor), unit);
            CHECK(std::fabs(base - scaled) < 1e-10);
        }
    }
}

TEST_CASE("geometry_report on a pair of identical models") {
    const Checkpoint anchor = make_checkpoint({{"w", {0.0, 0.0, 0.0}}});
    const Checkpoint model = make_checkpoint({{"w", {1.0, 2.0, 3.0}}});
    const std::vector<Checkpoint> ensemble{model, model};
    const GeometryReport report = geometry_report(ensemble, anchor, Granularity::per_tensor());
    REQUIRE(report.units.size() == 1);
    CHECK(report.units[0].mean_angle_deg == doctest::Approx(0.0));
    CHECK(report.units[0].std_angle_deg == doctest::Approx(0.0));
    CHECK(report.units[0].pairs == 1);
    CHECK_FALSE(report.units[0].degenerate);
    CHECK(report.units[0].klass == "bias");
}

TEST_CASE("geometry_report flags degenerate units instead of dropping them") {
    const Checkpoint anchor = make_checkpoint({{"dead", {1.0, 2.0}}, {"live", {0.0, 0.0}}});
    const std::vector<Checkpoint> ensemble{
        make_checkpoint({{"dead", {1.0, 2.0}}, {"live", {1.0, 0.0}}}),
        make_checkpoint({{"dead", {1.0, 2.0}}, {"live", {0.5, 0.5}}})};
    const GeometryReport report = geometry_report(ensemble, anchor, Granularity::per_tensor());
    REQUIRE(report.units.size() == 2);
    CHECK(report.units[0].unit == "dead");
    CHECK(report.units[0].degenerate);
    CHECK(std::isnan(report.units[0].mean_angle_deg));
    CHECK(report.units[0].pairs == 1);  // nominal count stays N(N-1)/2
    CHECK_FALSE(report.units[1].degenerate);
}

TEST_CASE("geometry_report rejects tiny ensembles and bad schemas") {
    const Checkpoint anchor = scalar_checkpoint({{"a", 0.0}});
    const std::vector<Checkpoint> single{scalar_checkpoint({{"a", 1.0}})};
    CHECK_THROWS_AS(geometry_report(single, anchor, Granularity::per_tensor()), NumericError);
    const std::vector<Checkpoint> mixed{scalar_checkpoint({{"a", 1.0}}),
                                        scalar_checkpoint({{"b", 1.0}})};
    CHECK_THROWS_AS(geometry_report(mixed, anchor, Granularity::per_tensor()), SchemaError);
}

TEST_CASE("centered Gaussian deltas show 90-degree concentration") {
    SyntheticSpec spec;
    spec.seed = 101;
    spec.units.push_back({"u", 10000, 0.01, {}, {}});  // anchor on the center
    const SampledEnsemble ensemble = sample_ensemble(spec, 20);
    const GeometryReport report =
        geometry_report(ensemble.models, ensemble.anchor, Granularity::per_tensor());
    REQUIRE(report.units.size() == 1);
    CHECK(std::fabs(report.units[0].mean_angle_deg - 90.0) < 1.0);
    CHECK(report.units[0].std_angle_deg < 1.0);
    CHECK(report.units[0].pairs == 190);
}

TEST_CASE("offset Gaussian deltas show the 60-degree concentration") {
    // ||mu - w0||^2 = n sigma^2 makes the expected pairwise cosine 1/2.
    SyntheticSpec spec;
    spec.seed = 102;
    SyntheticUnit unit;
    unit.name = "u";
    unit.dim = 10000;
    unit.sigma = 0.01;
    unit.anchor_offset.fill = 0.01;
    spec.units.push_back(unit);
    const SampledEnsemble ensemble = sample_ensemble(spec, 20);
    const GeometryReport report =
        geometry_report(ensemble.models, ensemble.anchor, Granularity::per_tensor());
    CHECK(std::fabs(report.units[0].mean_angle_deg - 60.0) < 1.5);
}

TEST_CASE("pseudo_center basics") {
    SUBCASE("single model is returned unchanged") {
        const Checkpoint model = make_checkpoint({{"w", {1.0, 2.0}}});
        const std::vector<Checkpoint> ensemble{model};
        CHECK(pseudo_center(ensemble).tensors.at("w").to_f64() == std::vector<double>{1.0, 2.0});
    }
    SUBCASE("scalar mean") {
        const std::vector<Checkpoint> ensemble{scalar_checkpoint({{"a", 2.0}}),
                                               scalar_checkpoint({{"a", 4.0}})};
        CHECK(pseudo_center(ensemble).tensors.at("a").to_f64() == std::vector<double>{3.0});
    }
    SUBCASE("output bytes are permutation invariant") {
        std::mt19937_64 rng(55);
        std::normal_distribution<double> gauss(0.0, 1.0);
        std::vector<Checkpoint> models;
        for (int m = 0; m < 5; ++m) {
            std::vector<double> values(311);
            for (double& v : values) v = gauss(rng);
            models.push_back(make_checkpoint({{"w", values}}));
        }
        const auto bytes = serialize_checkpoint(pseudo_center(models));
        std::vector<Checkpoint> shuffled{models[3], models[0], models[4], models[2], models[1]};
        CHECK(serialize_checkpoint(pseudo_center(shuffled)) == bytes);
    }
    SUBCASE("law of large numbers against the known center") {
        SyntheticSpec spec;
        spec.seed = 103;
        SyntheticUnit unit;
        unit.name = "u";
        unit.dim = 300;
        unit.sigma = 0.5;
        unit.mu.fill = 1.0;
        spec.units.push_back(unit);
        const std::size_t samples = 10000;
        const SampledEnsemble ensemble = sample_ensemble(spec, samples);
        const Checkpoint center = pseudo_center(ensemble.models);
        const std::vector<double> mean = center.tensors.at("u").to_f64();
        const double bound = 3.0 * 0.5 / std::sqrt(static_cast<double>(samples));
        std::size_t within = 0;
        for (const double v : mean) {
            within += std::fabs(v - 1.0) <= bound ? 1 : 0;
        }
        CHECK(static_cast<double>(within) / static_cast<double>(mean.size()) >= 0.99);
    }
}

TEST_CASE("distance_to") {
    SUBCASE("distance to itself is zero") {
        const Checkpoint c = make_checkpoint({{"w", {1.0, 2.0}}});
        CHECK(distance_to(c, c, Granularity::per_tensor()).global == 0.0);
    }
    SUBCASE("3-4-5 triangle across two scalars") {
        const Checkpoint a = scalar_checkpoint({{"a", 1.0}, {"b", 2.0}});
        const Checkpoint b = scalar_checkpoint({{"a", 4.0}, {"b", 6.0}});
        const DistanceReport report = distance_to(a, b, Granularity::per_tensor());
        CHECK(report.global == doctest::Approx(5.0).epsilon(1e-15));
        CHECK(report.units.size() == 2);
        CHECK(report.units[0].distance == doctest::Approx(3.0));
        CHECK(report.units[1].distance == doctest::Approx(4.0));
    }
    SUBCASE("triangle inequality on random checkpoints") {
        std::mt19937_64 rng(77);
        std::normal_distribution<double> gauss(0.0, 2.0);
        std::uniform_int_distribution<int> dim(1, 8);
        for (int trial = 0; trial < 50; ++trial) {
            const int n = dim(rng);
            const auto draw = [&] {
                std::vector<double> values(n);
                for (double& v : values) v = gauss(rng);
                return make_checkpoint({{"w", values}});
            };
            const Checkpoint a = draw();
            const Checkpoint b = draw();
            const Checkpoint c = draw();
            const Granularity g = Granularity::per_tensor();
            const double ac = distance_to(a, c, g).global;
            const double ab = distance_to(a, b, g).global;
            const double bc = distance_to(b, c, g).global;
            CHECK(ac <= ab + bc + 1e-9);
        }
    }
}

TEST_CASE("per-tensor squared distances recompose into the global distance") {
    std::mt19937_64 rng(59);
    std::normal_distribution<double> gauss(0.0, 1.5);
    const auto draw = [&] {
        Checkpoint ckpt;
        for (const char* name : {"a", "bb", "ccc"}) {
            std::vector<double> values(257);
            for (double& v : values) v = gauss(rng);
            ckpt.tensors.emplace(name, TensorRecord::from_f64(DType::F64, {257}, values));
        }
        return ckpt;
    };
    const Checkpoint x = draw();
    const Checkpoint y = draw();
    const DistanceReport report = distance_to(x, y, Granularity::per_tensor());
    double sumsq = 0.0;
    for (const auto& row : report.units) sumsq += row.distance * row.distance;
    CHECK(report.global == doctest::Approx(std::sqrt(sumsq)).epsilon(1e-13));

    const DistanceReport global_units = distance_to(x, y, Granularity::global());
    REQUIRE(global_units.units.size() == 1);
    CHECK(global_units.units[0].distance == global_units.global);
}

TEST_CASE("subset averages approach the pseudo-center by the sqrt law") {
    const SyntheticSpec spec = SyntheticSpec::desk_default(104);
    const std::size_t total = 16;
    const SampledEnsemble ensemble = sample_ensemble(spec, total);
    const Checkpoint mu_hat = pseudo_center(ensemble.models);
    const Granularity g = Granularity::per_tensor();

    double single_sum = 0.0;
    for (const auto& model : ensemble.models) {
        single_sum += distance_to(model, mu_hat, g).global;
    }
    const double single = single_sum / static_cast<double>(total);

    for (const std::size_t n : {2ul, 4ul}) {
        double dist_sum = 0.0;
        std::size_t groups = 0;
        for (std::size_t begin = 0; begin + n <= total; begin += n) {
            const std::vector<Checkpoint> group(ensemble.models.begin() + begin,
                                                ensemble.models.begin() + begin + n);
            dist_sum += distance_to(pseudo_center(group), mu_hat, g).global;
            ++groups;
        }
        const double measured = dist_sum / static_cast<double>(groups) / single;
        const double nn = static_cast<double>(n);
        const double tt = static_cast<double>(total);
        const double predicted = std::sqrt((1.0 / nn - 1.0 / tt) / (1.0 - 1.0 / tt));
        CHECK(std::fabs(measured - predicted) / predicted < 0.05);
    }
}

TEST_CASE("verify_shell_properties") {
    const Granularity g = Granularity::per_tensor();

    SUBCASE("synthetic ensemble with true center passes at tol 0.05") {
        const SyntheticSpec spec = SyntheticSpec::desk_default(105);
        const SampledEnsemble ensemble = sample_ensemble(spec, 20);
        const PropertyReport report =
            verify_shell_properties(ensemble.models, ensemble.anchor, ensemble.center, 0.05, g);
        CHECK(report.all_pass());
        for (const auto& check : report.checks) {
            CHECK(check.degenerate_units.empty());
        }
    }
    SUBCASE("identical checkpoints are flagged degenerate, not failed") {
        const Checkpoint model = make_checkpoint({{"w", {1.0, 2.0, 3.0}}});
        const std::vector<Checkpoint> ensemble{model, model, model};
        const PropertyReport report = verify_shell_properties(ensemble, model, model, 0.05, g);
        CHECK(report.all_pass());
        CHECK_FALSE(report.check("lemma").degenerate_units.empty());
        CHECK_FALSE(report.check("prop1_thin_shell").degenerate_units.empty());
    }
    SUBCASE("a member replaced by a distant anchor breaks the thin shell") {
        // Anchor at twice the shell radius; the replaced member then sits
        // at distance 2r from the center while the rest sit at r.
        SyntheticSpec spec = SyntheticSpec::desk_default(106);
        for (auto& unit : spec.units) unit.anchor_offset.fill = 0.02;
        SampledEnsemble ensemble = sample_ensemble(spec, 20);
        const PropertyReport clean =
            verify_shell_properties(ensemble.models, ensemble.anchor, ensemble.center, 0.05, g);
        CHECK(clean.all_pass());

        ensemble.models[0] = ensemble.anchor;
        const PropertyReport corrupted =
            verify_shell_properties(ensemble.models, ensemble.anchor, ensemble.center, 0.05, g);
        CHECK_FALSE(corrupted.check("prop1_thin_shell").pass);
        CHECK(corrupted.check("prop1_thin_shell").max_residual > 0.05);
    }
    SUBCASE("requires at least three models") {
        const Checkpoint model = make_checkpoint({{"w", {1.0}}});
        const std::vector<Checkpoint> ensemble{model, model};
        CHECK_THROWS_AS(verify_shell_properties(ensemble, model, model, 0.05, g), NumericError);
    }
}

TEST_CASE("plane_grid") {
    std::mt19937_64 rng(91);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const auto draw = [&](double shift) {
        std::vector<double> values(40);
        for (double& v : values) v = gauss(rng) + shift;
        return make_checkpoint({{"w", values}});
    };
    const Checkpoint w0 = draw(0.0);
    const Checkpoint wa = draw(1.0);
    const Checkpoint wb = draw(-0.5);

    SUBCASE("basis is orthonormal and projections land as expected") {
        const PlaneGrid grid = plane_grid(w0, wa, wb, 3, 4, 0.0);
        CHECK(std::fabs(grid.basis_dot) < 1e-10);
        CHECK(grid.pa.y == 0.0);
        CHECK(grid.pa.x ==
              doctest::Approx(distance_to(wa, w0, Granularity::global()).global).epsilon(1e-12));
        CHECK(grid.pb.y == doctest::Approx(grid.b_orth_norm));
        CHECK(grid.rows() == 3);
        CHECK(grid.cols() == 4);
    }
    SUBCASE("the origin grid corner reproduces w0 exactly") {
        const PlaneGrid grid = plane_grid(w0, wa, wb, 2, 2, 0.0);
        std::size_t row = 0, col = 0;
        bool found = false;
        for (std::size_t r = 0; r < grid.rows(); ++r) {
            for (std::size_t c = 0; c < grid.cols(); ++c) {
                if (grid.xs[c] == 0.0 && grid.ys[r] == 0.0) {
                    row = r;
                    col = c;
                    found = true;
                }
            }
        }
        REQUIRE(found);
        CHECK(stockpot::testing::same_bytes(grid.at(row, col), w0));
    }
    SUBCASE("wA reconstructs from its grid coordinates") {
        const PlaneGrid grid = plane_grid(w0, wa, wb, 2, 2, 0.0);
        Dense point = grid.origin;
        for (std::size_t i = 0; i < point.values[0].size(); ++i) {
            point.values[0][i] += grid.pa.x * grid.e1[0][i] + grid.pa.y * grid.e2[0][i];
        }
        const std::vector<double> original = wa.tensors.at("w").to_f64();
        for (std::size_t i = 0; i < original.size(); ++i) {
            CHECK(point.values[0][i] == doctest::Approx(original[i]).epsilon(1e-12));
        }
    }
    SUBCASE("wA equal to w0 is an error") {
        CHECK_THROWS_AS(plane_grid(w0, w0, wb, 2, 2, 0.0), NumericError);
    }
    SUBCASE("collinear wB points at the 1-D sweep") {
        const Checkpoint mid = interpolate_pair(wa, w0, 0.5);
        CHECK_THROWS_WITH_AS(plane_grid(w0, wa, mid, 2, 2, 0.0), doctest::Contains("pair"),
                             NumericError);
    }
}

TEST_CASE("perturb_from_center") {
    const Granularity g = Granularity::per_tensor();
    SUBCASE("zero sigma returns the center bit-exactly") {
        const Checkpoint center = make_checkpoint({{"w", {1.0, -2.0, 3.0}}}, DType::F32);
        const Checkpoint out = perturb_from_center(center, g, {{"w", 0.0}}, 7);
        CHECK(stockpot::testing::same_bytes(out, center));
    }
    SUBCASE("same seed gives identical output, different seeds differ") {
        const Checkpoint center = make_checkpoint({{"w", std::vector<double>(64, 0.5)}});
        const Checkpoint a = perturb_from_center(center, g, {{"w", 0.1}}, 3);
        const Checkpoint b = perturb_from_center(center, g, {{"w", 0.1}}, 3);
        const Checkpoint c = perturb_from_center(center, g, {{"w", 0.1}}, 4);
        CHECK(stockpot::testing::same_bytes(a, b));
        CHECK_FALSE(stockpot::testing::same_bytes(a, c));
    }
    SUBCASE("missing or negative sigma raises") {
        const Checkpoint center = make_checkpoint({{"w", {0.0}}});
        CHECK_THROWS_AS(perturb_from_center(center, g, {}, 1), NumericError);
        CHECK_THROWS_AS(perturb_from_center(center, g, {{"w", -0.1}}, 1), NumericError);
    }
    SUBCASE("global distance concentrates at sqrt(sum n_k sigma_k^2)") {
        const std::size_t dim = 100000;
        const Checkpoint center = make_checkpoint({{"w", std::vector<double>(dim, 0.0)}});
        const double sigma = 0.5;
        const Checkpoint out = perturb_from_center(center, g, {{"w", sigma}}, 11);
        const double expected = sigma * std::sqrt(static_cast<double>(dim));
        const double measured = distance_to(out, center, g).global;
        CHECK(std::fabs(measured - expected) / expected < 0.02);
    }
}

TEST_CASE("granularity unit construction") {
    Checkpoint ckpt;
    ckpt.tensors.emplace("conv", TensorRecord::from_f64(DType::F64, {4, 3},
                                                        std::vector<double>(12, 1.0)));
    ckpt.tensors.emplace("bias", TensorRecord::from_f64(DType::F64, {5},
                                                        std::vector<double>(5, 2.0)));
    ckpt.tensors.emplace("scale", TensorRecord::from_f64(DType::F64, {},
                                                         std::vector<double>{3.0}));
    const Dense dense = to_dense(ckpt);

    SUBCASE("global is one unit covering everything") {
        const auto units = build_units(dense, Granularity::global());
        REQUIRE(units.size() == 1);
        CHECK(units[0].dim == 18);
        CHECK(units[0].klass == "other");
    }
    SUBCASE("per-tensor classifies by rank") {
        const auto units = build_units(dense, Granularity::per_tensor());
        REQUIRE(units.size() == 3);
        CHECK(units[0].key == "bias");
        CHECK(units[0].klass == "bias");
        CHECK(units[1].key == "conv");
        CHECK(units[1].klass == "weight");
        CHECK(units[2].key == "scale");
        CHECK(units[2].klass == "other");
    }
    SUBCASE("per-filter slices the leading dimension of rank-2 tensors") {
        const auto units = build_units(dense, Granularity::per_filter());
        REQUIRE(units.size() == 2 + 4);
        std::size_t filters = 0;
        for (const auto& unit : units) {
            if (unit.key.rfind("conv[", 0) == 0) {
                ++filters;
                CHECK(unit.dim == 3);
            }
        }
        CHECK(filters == 4);
    }
    SUBCASE("blocks group mapped tensors and keep singletons") {
        Granularity g = Granularity::per_block({{"conv", "body"}, {"bias", "body"}});
        const auto units = build_units(dense, g);
        REQUIRE(units.size() == 2);
        CHECK(units[0].key == "body");
        CHECK(units[0].dim == 17);
        CHECK(units[0].segments.size() == 2);
        CHECK(units[1].key == "scale");
    }
}
