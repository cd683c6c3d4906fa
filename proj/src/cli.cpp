#include "stockpot/cli.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "stockpot/digest.hpp"
#include "stockpot/errors.hpp"
#include "stockpot/geometry.hpp"
#include "stockpot/merge.hpp"
#include "stockpot/reports.hpp"
#include "stockpot/synthetic.hpp"
#include "stockpot/tensor_store.hpp"
#include "stockpot/version.hpp"

namespace stockpot::cli {

namespace {

using ordered_json = nlohmann::ordered_json;

// Flag combinations CLI11 cannot express (conditional requirements);
// these exit with the usage code.
class UsageError : public Error {
  public:
    using Error::Error;
};

std::vector<Checkpoint> load_all(const std::vector<std::string>& paths) {
    std::vector<Checkpoint> out;
    out.reserve(paths.size());
    for (const auto& path : paths) out.push_back(load_checkpoint(path));
    return out;
}

ordered_json load_json_file(const std::string& path) {
    std::ifstream file(path);
    if (!file) {
        throw IoError("cannot open '" + path + "' for reading");
    }
    try {
        return ordered_json::parse(file);
    } catch (const nlohmann::json::exception& ex) {
        throw ParseError(path + ": " + ex.what());
    }
}

struct GranularityFlags {
    std::string kind = "tensor";
    std::string block_map_path;

    Granularity resolve() const {
        Granularity g;
        g.kind = granularity_kind_from_name(kind);
        if (g.kind == GranularityKind::PerBlock) {
            if (block_map_path.empty()) {
                throw UsageError("granularity 'block' requires --block-map <json>");
            }
            const ordered_json map = load_json_file(block_map_path);
            if (!map.is_object()) {
                throw ParseError(block_map_path + ": block map must be a JSON object");
            }
            for (const auto& [tensor, label] : map.items()) {
                if (!label.is_string()) {
                    throw ParseError(block_map_path + ": label for '" + tensor +
                                     "' must be a string");
                }
                g.block_map.emplace(tensor, label.get<std::string>());
            }
        } else if (!block_map_path.empty()) {
            throw UsageError("--block-map is only meaningful with --granularity block");
        }
        return g;
    }
};

void add_granularity_flags(CLI::App* cmd, GranularityFlags& flags) {
    cmd->add_option("--granularity", flags.kind, "Merge unit: global|tensor|filter|block")
        ->check(CLI::IsMember({"global", "tensor", "filter", "block"}));
    cmd->add_option("--block-map", flags.block_map_path,
                    "JSON object mapping tensor names to block labels");
}

// Metadata stamped onto derived checkpoints. Input digests are recorded
// sorted so outputs stay byte-identical under input permutations.
void stamp(Checkpoint& ckpt, const std::string& method,
           std::vector<std::string> input_digests,
           const std::vector<std::pair<std::string, std::string>>& params = {}) {
    std::sort(input_digests.begin(), input_digests.end());
    std::map<std::string, std::string> meta;
    meta["stockpot.method"] = method;
    meta["stockpot.version"] = kVersion;
    std::string inputs;
    for (std::size_t i = 0; i < input_digests.size(); ++i) {
        if (i > 0) inputs += ",";
        inputs += input_digests[i];
    }
    meta["stockpot.inputs"] = inputs;
    for (const auto& [key, value] : params) meta["stockpot." + key] = value;
    ckpt.metadata = std::move(meta);
}

std::vector<std::string> digests_of(std::span<const Checkpoint> ckpts) {
    std::vector<std::string> out;
    out.reserve(ckpts.size());
    for (const auto& c : ckpts) out.push_back(content_digest(c));
    return out;
}

std::string fmt_double(double value) {
    char buffer[40];
    std::snprintf(buffer, sizeof(buffer), "%.6g", value);
    return buffer;
}

// ---------------------------------------------------------------- inspect

struct InspectOptions {
    std::vector<std::string> files;
    std::string out;
};

int run_inspect(const InspectOptions& opt) {
    const std::vector<Checkpoint> ckpts = load_all(opt.files);
    ordered_json report;
    report["files"] = ordered_json::array();
    for (std::size_t i = 0; i < ckpts.size(); ++i) {
        const Checkpoint& ckpt = ckpts[i];
        std::uint64_t bytes = 0;
        std::uint64_t non_finite = 0;
        for (const auto& [name, record] : ckpt.tensors) {
            bytes += record.data.size();
            for (const double v : record.to_f64()) {
                non_finite += std::isfinite(v) ? 0 : 1;
            }
        }
        ordered_json f;
        f["path"] = opt.files[i];
        f["digest"] = content_digest(ckpt);
        f["tensor_count"] = ckpt.tensors.size();
        f["total_elements"] = ckpt.total_elements();
        f["data_bytes"] = bytes;
        f["non_finite_values"] = non_finite;
        ordered_json tensors = ordered_json::array();
        for (const auto& [name, record] : ckpt.tensors) {
            ordered_json t;
            t["name"] = name;
            t["dtype"] = std::string(dtype_name(record.dtype));
            t["shape"] = record.shape;
            tensors.push_back(std::move(t));
        }
        f["tensors"] = std::move(tensors);
        if (ckpt.metadata.has_value()) {
            f["metadata"] = *ckpt.metadata;
        }
        report["files"].push_back(std::move(f));

        std::cout << opt.files[i] << ": " << ckpt.tensors.size() << " tensors, "
                  << ckpt.total_elements() << " elements, " << bytes << " data bytes\n";
        std::cout << "  digest " << report["files"].back()["digest"].get<std::string>() << "\n";
        for (const auto& [name, record] : ckpt.tensors) {
            std::cout << "  " << name << "  " << dtype_name(record.dtype) << "  [";
            for (std::size_t d = 0; d < record.shape.size(); ++d) {
                if (d > 0) std::cout << ",";
                std::cout << record.shape[d];
            }
            std::cout << "]\n";
        }
        if (non_finite > 0) {
            std::cout << "  warning: " << non_finite << " non-finite values\n";
        }
    }
    if (ckpts.size() > 1) {
        const SchemaReport schema = validate_schema(ckpts);
        report["schema"] = to_json(schema);
        std::cout << "schema: " << (schema.compatible ? "compatible" : "INCOMPATIBLE") << "\n";
        for (const auto& miss : schema.mismatches) {
            std::cout << "  mismatch at '" << miss.tensor << "' (" << miss.field << ")\n";
        }
    }
    if (!opt.out.empty()) write_json_file(opt.out, report);
    return 0;
}

// ---------------------------------------------------------------- geometry

struct GeometryOptions {
    std::vector<std::string> models;
    std::string anchor;
    std::string out;
    bool csv = false;
    GranularityFlags granularity;
};

int run_geometry(const GeometryOptions& opt) {
    const std::vector<Checkpoint> models = load_all(opt.models);
    const Checkpoint anchor = load_checkpoint(opt.anchor);
    const GeometryReport report = geometry_report(models, anchor, opt.granularity.resolve());
    std::cout << "geometry over " << report.model_count << " models, " << report.units.size()
              << " units (" << report.granularity << ")\n";
    for (const auto& row : report.units) {
        std::cout << "  " << row.unit << ": angle " << fmt_double(row.mean_angle_deg) << " deg (std "
                  << fmt_double(row.std_angle_deg) << "), norm/sqrt(n) "
                  << fmt_double(row.mean_norm_per_sqrt_n) << (row.degenerate ? " [degenerate]" : "")
                  << "\n";
    }
    if (!opt.out.empty()) {
        if (opt.csv) {
            write_text_file(opt.out, to_csv(report));
        } else {
            write_json_file(opt.out, to_json(report));
        }
    }
    return 0;
}

// ---------------------------------------------------------------- center

struct CenterOptions {
    std::vector<std::string> models;
    std::string out;
};

int run_center(const CenterOptions& opt) {
    const std::vector<Checkpoint> models = load_all(opt.models);
    Checkpoint center = pseudo_center(models);
    stamp(center, "uniform", digests_of(models));
    save_checkpoint(center, opt.out);
    std::cout << "wrote pseudo-center of " << models.size() << " models to " << opt.out << "\n";
    return 0;
}

// ---------------------------------------------------------------- distance

struct DistanceOptions {
    std::string model;
    std::string center;
    std::string out;
    bool csv = false;
    GranularityFlags granularity;
};

int run_distance(const DistanceOptions& opt) {
    const Checkpoint model = load_checkpoint(opt.model);
    const Checkpoint center = load_checkpoint(opt.center);
    const DistanceReport report = distance_to(model, center, opt.granularity.resolve());
    std::cout << "global distance " << fmt_double(report.global) << " over "
              << report.units.size() << " units\n";
    if (!opt.out.empty()) {
        if (opt.csv) {
            write_text_file(opt.out, to_csv(report));
        } else {
            write_json_file(opt.out, to_json(report));
        }
    }
    return 0;
}

// ---------------------------------------------------------------- verify

struct VerifyOptions {
    std::vector<std::string> models;
    std::string anchor;
    std::string center;
    std::string out;
    bool csv = false;
    double tol = 0.05;
    GranularityFlags granularity;
};

int run_verify(const VerifyOptions& opt) {
    const std::vector<Checkpoint> models = load_all(opt.models);
    const Checkpoint anchor = load_checkpoint(opt.anchor);
    const Checkpoint center = load_checkpoint(opt.center);
    const PropertyReport report =
        verify_shell_properties(models, anchor, center, opt.tol, opt.granularity.resolve());
    for (const auto& check : report.checks) {
        std::cout << (check.pass ? "[pass] " : "[FAIL] ") << check.property << ": max residual "
                  << fmt_double(check.max_residual) << " (tol " << fmt_double(check.tolerance)
                  << ")";
        if (!check.worst_unit.empty()) std::cout << " at unit '" << check.worst_unit << "'";
        if (!check.degenerate_units.empty()) {
            std::cout << ", " << check.degenerate_units.size() << " degenerate unit(s)";
        }
        std::cout << "\n";
    }
    if (!opt.out.empty()) {
        if (opt.csv) {
            write_text_file(opt.out, to_csv(report));
        } else {
            write_json_file(opt.out, to_json(report));
        }
    }
    return report.all_pass() ? 0 : 3;
}

// ---------------------------------------------------------------- merge

struct MergeOptions {
    std::string method;
    std::vector<std::string> models;
    std::string anchor;
    std::string out;
    double alpha = 1.0;
    double t = 0.5;
    bool alpha_set = false;
    bool t_set = false;
    bool allow_extrapolation = false;
    bool csv = false;
    std::string score_distance_to;
    std::string score_cmd;
    GranularityFlags granularity;
};

double run_score_command(const std::string& command, const Checkpoint& ckpt) {
    const auto tmp = std::filesystem::temp_directory_path() /
                     ("stockpot_score_" + content_digest(ckpt).substr(0, 16) + ".st");
    save_checkpoint(ckpt, tmp);
    const std::string full = command + " " + tmp.string();
    FILE* pipe = popen(full.c_str(), "r");
    if (pipe == nullptr) {
        std::filesystem::remove(tmp);
        throw Error("failed to launch scorer command: " + full);
    }
    std::string output;
    char buffer[256];
    while (fgets(buffer, sizeof(buffer), pipe) != nullptr) output += buffer;
    const int status = pclose(pipe);
    std::filesystem::remove(tmp);
    if (status != 0) {
        throw Error("scorer command exited with status " + std::to_string(status));
    }
    try {
        return std::stod(output);
    } catch (const std::exception&) {
        throw Error("scorer command printed no number: '" + output + "'");
    }
}

int run_merge(const MergeOptions& opt) {
    const std::vector<Checkpoint> models = load_all(opt.models);

    if (opt.method == "stock") {
        if (opt.anchor.empty()) throw UsageError("merge --method stock requires --anchor");
        const Checkpoint anchor = load_checkpoint(opt.anchor);
        auto [merged, report] = stock_merge(anchor, models, opt.granularity.resolve());
        for (const auto& warning : report.warnings) {
            std::cerr << "warning: " << warning << "\n";
        }
        std::vector<std::string> digests = digests_of(models);
        digests.push_back(content_digest(anchor));
        stamp(merged, "stock", std::move(digests),
              {{"granularity", opt.granularity.kind}});
        save_checkpoint(merged, opt.out);
        const std::filesystem::path report_path =
            opt.out + (opt.csv ? ".ratios.csv" : ".ratios.json");
        if (opt.csv) {
            write_text_file(report_path, to_csv(report));
        } else {
            write_json_file(report_path, to_json(report));
        }
        double t_min = 1.0, t_max = 0.0;
        for (const auto& row : report.units) {
            t_min = std::min(t_min, row.t);
            t_max = std::max(t_max, row.t);
        }
        std::cout << "stock merge of " << models.size() << " models over "
                  << report.units.size() << " units, t in [" << fmt_double(t_min) << ", "
                  << fmt_double(t_max) << "]\n";
        std::cout << "wrote " << opt.out << " and " << report_path.string() << "\n";
        return 0;
    }

    if (opt.method == "uniform") {
        Checkpoint merged = uniform_soup(models);
        stamp(merged, "uniform", digests_of(models));
        save_checkpoint(merged, opt.out);
        std::cout << "uniform soup of " << models.size() << " models -> " << opt.out << "\n";
        return 0;
    }

    if (opt.method == "wise") {
        if (opt.anchor.empty()) throw UsageError("merge --method wise requires --anchor");
        if (!opt.alpha_set) throw UsageError("merge --method wise requires --alpha");
        if (models.size() != 1) {
            throw UsageError("merge --method wise takes exactly one fine-tuned model");
        }
        const Checkpoint anchor = load_checkpoint(opt.anchor);
        Checkpoint merged = wise_ft(anchor, models.front(), opt.alpha, opt.allow_extrapolation);
        // Endpoints are exact copies of an input; stamping would break that.
        if (opt.alpha != 0.0 && opt.alpha != 1.0) {
            stamp(merged, "wise",
                  {content_digest(models.front()), content_digest(anchor)},
                  {{"alpha", fmt_double(opt.alpha)}});
        }
        save_checkpoint(merged, opt.out);
        std::cout << "wise interpolation (alpha " << fmt_double(opt.alpha) << ") -> " << opt.out
                  << "\n";
        return 0;
    }

    if (opt.method == "pair") {
        if (!opt.t_set) throw UsageError("merge --method pair requires --t");
        if (models.size() != 2) {
            throw UsageError("merge --method pair takes exactly two checkpoints");
        }
        Checkpoint merged =
            interpolate_pair(models[0], models[1], opt.t, opt.allow_extrapolation);
        if (opt.t != 0.0 && opt.t != 1.0) {
            stamp(merged, "pair", digests_of(models), {{"t", fmt_double(opt.t)}});
        }
        save_checkpoint(merged, opt.out);
        std::cout << "pair interpolation (t " << fmt_double(opt.t) << ") -> " << opt.out << "\n";
        return 0;
    }

    if (opt.method == "greedy") {
        std::function<double(const Checkpoint&)> scorer;
        if (!opt.score_distance_to.empty()) {
            auto reference = std::make_shared<Checkpoint>(load_checkpoint(opt.score_distance_to));
            scorer = [reference](const Checkpoint& ckpt) {
                return -distance_to(ckpt, *reference, Granularity::global()).global;
            };
        } else if (!opt.score_cmd.empty()) {
            const std::string command = opt.score_cmd;
            scorer = [command](const Checkpoint& ckpt) {
                return run_score_command(command, ckpt);
            };
        } else {
            throw UsageError(
                "merge --method greedy requires --score-distance-to or --score-cmd");
        }
        auto [merged, trace] = greedy_soup(models, scorer);
        stamp(merged, "greedy", digests_of(models));
        save_checkpoint(merged, opt.out);
        const std::filesystem::path trace_path = opt.out + ".trace.json";
        write_json_file(trace_path, to_json(trace));
        std::cout << "greedy soup kept " << trace.selected.size() << " of " << models.size()
                  << " models (final score " << fmt_double(trace.final_score) << ")\n";
        std::cout << "wrote " << opt.out << " and " << trace_path.string() << "\n";
        return 0;
    }

    throw UsageError("unknown merge method '" + opt.method + "'");
}

// ---------------------------------------------------------------- periodic

struct PeriodicOptions {
    std::string anchor;
    std::string manifest;
    std::string out;
    std::string save_periods;
    bool csv = false;
    GranularityFlags granularity;
};

int run_periodic(const PeriodicOptions& opt) {
    const ordered_json manifest = load_json_file(opt.manifest);
    if (!manifest.contains("trajectories") || !manifest.at("trajectories").is_array()) {
        throw ParseError(opt.manifest + ": missing 'trajectories' array");
    }
    const auto base = std::filesystem::path(opt.manifest).parent_path();
    std::vector<std::vector<Checkpoint>> trajectories;
    for (const auto& row : manifest.at("trajectories")) {
        std::vector<Checkpoint> trajectory;
        for (const auto& file : row) {
            trajectory.push_back(load_checkpoint(base / file.get<std::string>()));
        }
        trajectories.push_back(std::move(trajectory));
    }
    const Checkpoint anchor = load_checkpoint(opt.anchor);

    PeriodicResult result =
        periodic_merge_replay(anchor, trajectories, opt.granularity.resolve());

    std::vector<std::string> digests{content_digest(anchor)};
    for (const auto& trajectory : trajectories) {
        digests.push_back(content_digest(trajectory.back()));
    }
    stamp(result.final, "periodic", std::move(digests),
          {{"granularity", opt.granularity.kind},
           {"periods", std::to_string(result.period_merges.size())}});
    save_checkpoint(result.final, opt.out);

    RatioReport combined;
    for (const auto& report : result.period_reports) {
        combined.units.insert(combined.units.end(), report.units.begin(), report.units.end());
        combined.warnings.insert(combined.warnings.end(), report.warnings.begin(),
                                 report.warnings.end());
    }
    const std::filesystem::path report_path =
        opt.out + (opt.csv ? ".ratios.csv" : ".ratios.json");
    if (opt.csv) {
        write_text_file(report_path, to_csv(combined));
    } else {
        write_json_file(report_path, to_json(combined));
    }

    if (!opt.save_periods.empty()) {
        std::filesystem::create_directories(opt.save_periods);
        for (std::size_t p = 0; p < result.period_merges.size(); ++p) {
            char name[64];
            std::snprintf(name, sizeof(name), "merged_period_%03zu.st", p + 1);
            save_checkpoint(result.period_merges[p],
                            std::filesystem::path(opt.save_periods) / name);
        }
    }
    std::cout << "periodic replay over " << result.period_merges.size() << " periods, "
              << trajectories.size() << " trajectories -> " << opt.out << "\n";
    return 0;
}

// ---------------------------------------------------------------- plane

struct PlaneOptions {
    std::string anchor;
    std::string model_a;
    std::string model_b;
    std::string out_dir;
    std::size_t rows = 9;
    std::size_t cols = 9;
    double margin = 0.2;
};

int run_plane(const PlaneOptions& opt) {
    const Checkpoint w0 = load_checkpoint(opt.anchor);
    const Checkpoint wa = load_checkpoint(opt.model_a);
    const Checkpoint wb = load_checkpoint(opt.model_b);
    const PlaneGrid grid = plane_grid(w0, wa, wb, opt.rows, opt.cols, opt.margin);

    std::filesystem::create_directories(opt.out_dir);
    ordered_json manifest;
    manifest["basis"] = {{"a_norm", grid.a_norm},
                         {"b_orth_norm", grid.b_orth_norm},
                         {"e1_dot_e2", grid.basis_dot}};
    manifest["points"] = {{"w0", {grid.p0.x, grid.p0.y}},
                          {"wA", {grid.pa.x, grid.pa.y}},
                          {"wB", {grid.pb.x, grid.pb.y}}};
    manifest["xs"] = grid.xs;
    manifest["ys"] = grid.ys;
    manifest["files"] = ordered_json::array();

    for (std::size_t r = 0; r < grid.rows(); ++r) {
        for (std::size_t c = 0; c < grid.cols(); ++c) {
            char name[64];
            std::snprintf(name, sizeof(name), "point_r%03zu_c%03zu.st", r, c);
            const Checkpoint point = grid.at(r, c);
            save_checkpoint(point, std::filesystem::path(opt.out_dir) / name);
            ordered_json entry;
            entry["file"] = name;
            entry["row"] = r;
            entry["col"] = c;
            entry["x"] = grid.xs[c];
            entry["y"] = grid.ys[r];
            manifest["files"].push_back(std::move(entry));
        }
    }
    write_json_file(std::filesystem::path(opt.out_dir) / "manifest.json", manifest);
    std::cout << "wrote " << grid.rows() * grid.cols() << " grid checkpoints to " << opt.out_dir
              << " (basis " << fmt_double(grid.a_norm) << " x " << fmt_double(grid.b_orth_norm)
              << ")\n";
    return 0;
}

// ---------------------------------------------------------------- perturb

struct PerturbOptions {
    std::string center;
    std::string out;
    std::string geometry_report;
    double sigma = -1.0;
    std::uint64_t seed = 0;
    GranularityFlags granularity;
};

int run_perturb(const PerturbOptions& opt) {
    const Checkpoint center = load_checkpoint(opt.center);
    const Granularity granularity = opt.granularity.resolve();

    std::map<std::string, double> sigma;
    if (!opt.geometry_report.empty()) {
        // A geometry report computed with the center as anchor: the mean
        // normalized delta norm per unit is the shell radius / sqrt(n),
        // exactly the per-coordinate sigma of the matching Gaussian.
        const ordered_json report = load_json_file(opt.geometry_report);
        if (!report.contains("units")) {
            throw ParseError(opt.geometry_report + ": not a geometry report (no 'units')");
        }
        for (const auto& row : report.at("units")) {
            sigma[row.at("unit").get<std::string>()] =
                row.at("mean_norm_per_sqrt_n").get<double>();
        }
    } else if (opt.sigma >= 0.0) {
        const Dense dense = to_dense(center);
        for (const Unit& unit : build_units(dense, granularity)) {
            sigma[unit.key] = opt.sigma;
        }
    } else {
        throw UsageError("perturb requires --sigma or --geometry");
    }

    Checkpoint perturbed = perturb_from_center(center, granularity, sigma, opt.seed);
    stamp(perturbed, "perturb", {content_digest(center)},
          {{"seed", std::to_string(opt.seed)}});
    save_checkpoint(perturbed, opt.out);
    std::cout << "perturbed center -> " << opt.out << " (seed " << opt.seed << ")\n";
    return 0;
}

// ---------------------------------------------------------------- synth

struct SynthSampleOptions {
    std::string spec_path;
    std::string out_dir;
    std::size_t count = 2;
    std::uint64_t seed = 0;
    bool seed_set = false;
};

SyntheticSpec resolve_spec(const std::string& path, bool seed_set, std::uint64_t seed) {
    SyntheticSpec spec =
        path.empty() ? SyntheticSpec::desk_default() : SyntheticSpec::from_json(load_json_file(path));
    if (seed_set) spec.seed = seed;
    return spec;
}

int run_synth_sample(const SynthSampleOptions& opt) {
    const SyntheticSpec spec = resolve_spec(opt.spec_path, opt.seed_set, opt.seed);
    const SampledEnsemble ensemble = sample_ensemble(spec, opt.count);

    std::filesystem::create_directories(opt.out_dir);
    const std::filesystem::path dir(opt.out_dir);
    ordered_json manifest;
    manifest["spec"] = spec.to_json();
    manifest["anchor"] = "anchor.st";
    manifest["center"] = "center.st";
    manifest["models"] = ordered_json::array();
    save_checkpoint(ensemble.anchor, dir / "anchor.st");
    save_checkpoint(ensemble.center, dir / "center.st");
    for (std::size_t m = 0; m < ensemble.models.size(); ++m) {
        char name[64];
        std::snprintf(name, sizeof(name), "model_%03zu.st", m);
        save_checkpoint(ensemble.models[m], dir / name);
        manifest["models"].push_back(name);
    }
    write_json_file(dir / "manifest.json", manifest);
    std::cout << "sampled " << ensemble.models.size() << " models (seed " << spec.seed
              << ") into " << opt.out_dir << "\n";
    return 0;
}

struct SynthTrajectoryOptions {
    std::string spec_path;
    std::string params_path;
    std::string out_dir;
    std::vector<std::uint64_t> seeds;
    std::uint64_t seed = 0;
    bool seed_set = false;
};

int run_synth_trajectory(const SynthTrajectoryOptions& opt) {
    const SyntheticSpec spec = resolve_spec(opt.spec_path, opt.seed_set, opt.seed);
    if (opt.params_path.empty()) {
        throw UsageError("synth trajectory requires --params <json>");
    }
    const TrajectoryParams params = TrajectoryParams::from_json(load_json_file(opt.params_path));
    if (opt.seeds.empty()) {
        throw UsageError("synth trajectory requires --seeds");
    }
    const TrajectoryResult result = simulate_trajectories(spec, params, opt.seeds);

    std::filesystem::create_directories(opt.out_dir);
    const std::filesystem::path dir(opt.out_dir);
    const Checkpoint anchor =
        sample_ensemble(spec, 1).anchor;  // anchor depends only on the spec
    save_checkpoint(anchor, dir / "anchor.st");

    ordered_json manifest;
    manifest["spec"] = spec.to_json();
    manifest["params"] = params.to_json();
    manifest["anchor"] = "anchor.st";
    manifest["trajectories"] = ordered_json::array();
    manifest["centers"] = ordered_json::array();

    for (std::size_t s = 0; s < result.per_seed.size(); ++s) {
        ordered_json row = ordered_json::array();
        for (std::size_t e = 0; e < result.per_seed[s].size(); ++e) {
            char name[64];
            std::snprintf(name, sizeof(name), "seed%03zu_epoch%03zu.st", s, e + 1);
            save_checkpoint(result.per_seed[s][e], dir / name);
            row.push_back(name);
        }
        manifest["trajectories"].push_back(std::move(row));
    }
    for (std::size_t e = 0; e < result.centers.size(); ++e) {
        char name[64];
        std::snprintf(name, sizeof(name), "center_epoch%03zu.st", e + 1);
        save_checkpoint(result.centers[e], dir / name);
        manifest["centers"].push_back(name);
    }
    write_json_file(dir / "manifest.json", manifest);
    std::cout << "simulated " << result.per_seed.size() << " trajectories over "
              << result.centers.size() << " epochs into " << opt.out_dir << "\n";
    return 0;
}

struct SynthValidateOptions {
    std::string spec_path;
    std::string out;
    std::size_t samples = 20;
    double tol = 0.02;
    double angle_tol_deg = 1.5;
    bool csv = false;
    std::uint64_t seed = 0;
    bool seed_set = false;
};

int run_synth_validate(const SynthValidateOptions& opt) {
    const SyntheticSpec spec = resolve_spec(opt.spec_path, opt.seed_set, opt.seed);
    const ConcentrationReport report = concentration_stats(spec, opt.samples);

    bool ok = true;
    for (const auto& row : report.units) {
        const bool norm_ok = row.norm_mean_rel_deviation <= opt.tol;
        const bool angle_ok = std::isnan(row.angle_mean_abs_deviation_deg) ||
                              row.angle_mean_abs_deviation_deg <= opt.angle_tol_deg;
        ok = ok && norm_ok && angle_ok;
        std::cout << (norm_ok && angle_ok ? "[pass] " : "[FAIL] ") << row.unit << ": norm "
                  << fmt_double(row.measured_norm_mean) << " vs predicted "
                  << fmt_double(row.predicted_norm_mean) << " (rel dev "
                  << fmt_double(row.norm_mean_rel_deviation) << "), angle "
                  << fmt_double(row.measured_angle_mean_deg) << " vs "
                  << fmt_double(row.predicted_angle_mean_deg) << " deg\n";
    }
    if (!opt.out.empty()) {
        if (opt.csv) {
            write_text_file(opt.out, to_csv(report));
        } else {
            write_json_file(opt.out, to_json(report));
        }
    }
    return ok ? 0 : 3;
}

}  // namespace

int run(const std::vector<std::string>& args) {
    CLI::App app{"stockpot: checkpoint geometry and anchored weight merging"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    InspectOptions inspect_opt;
    CLI::App* inspect = app.add_subcommand("inspect", "Summarize checkpoint files");
    inspect->add_option("files", inspect_opt.files, "Checkpoint files")->required();
    inspect->add_option("--out", inspect_opt.out, "Write a JSON report");

    GeometryOptions geometry_opt;
    CLI::App* geometry =
        app.add_subcommand("geometry", "Per-unit angle/norm statistics of an ensemble");
    geometry->add_option("models", geometry_opt.models, "Fine-tuned checkpoints")
        ->required()
        ->expected(2, -1);
    geometry->add_option("--anchor", geometry_opt.anchor, "Pre-trained anchor checkpoint")
        ->required();
    geometry->add_option("--out", geometry_opt.out, "Report path");
    geometry->add_flag("--csv", geometry_opt.csv, "Write CSV instead of JSON");
    add_granularity_flags(geometry, geometry_opt.granularity);

    CenterOptions center_opt;
    CLI::App* center = app.add_subcommand("center", "Pseudo-center (elementwise mean)");
    center->add_option("models", center_opt.models, "Checkpoints")->required();
    center->add_option("--out", center_opt.out, "Output checkpoint")->required();

    DistanceOptions distance_opt;
    CLI::App* distance = app.add_subcommand("distance", "Euclidean distance to a center");
    distance->add_option("model", distance_opt.model, "Checkpoint")->required();
    distance->add_option("--center", distance_opt.center, "Center checkpoint")->required();
    distance->add_option("--out", distance_opt.out, "Report path");
    distance->add_flag("--csv", distance_opt.csv, "Write CSV instead of JSON");
    add_granularity_flags(distance, distance_opt.granularity);

    VerifyOptions verify_opt;
    CLI::App* verify =
        app.add_subcommand("verify", "Check the thin-shell identities of an ensemble");
    verify->add_option("models", verify_opt.models, "Fine-tuned checkpoints")
        ->required()
        ->expected(3, -1);
    verify->add_option("--anchor", verify_opt.anchor, "Anchor checkpoint")->required();
    verify->add_option("--center", verify_opt.center, "Center checkpoint")->required();
    verify->add_option("--tol", verify_opt.tol, "Residual tolerance")
        ->check(CLI::PositiveNumber);
    verify->add_option("--out", verify_opt.out, "Report path");
    verify->add_flag("--csv", verify_opt.csv, "Write CSV instead of JSON");
    add_granularity_flags(verify, verify_opt.granularity);

    MergeOptions merge_opt;
    CLI::App* merge = app.add_subcommand("merge", "Merge checkpoints");
    merge->add_option("models", merge_opt.models, "Input checkpoints")->required();
    merge->add_option("--method", merge_opt.method, "stock|uniform|wise|greedy|pair")
        ->required()
        ->check(CLI::IsMember({"stock", "uniform", "wise", "greedy", "pair"}));
    merge->add_option("--anchor", merge_opt.anchor, "Anchor checkpoint (stock, wise)");
    merge->add_option("--out", merge_opt.out, "Output checkpoint")->required();
    merge->add_option("--alpha", merge_opt.alpha, "WiSE interpolation coefficient")
        ->check(CLI::Range(-10.0, 10.0));
    merge->add_option("--t", merge_opt.t, "Pair interpolation coefficient")
        ->check(CLI::Range(-10.0, 10.0));
    merge->add_flag("--allow-extrapolation", merge_opt.allow_extrapolation,
                    "Permit alpha or t outside [0, 1]");
    merge->add_flag("--csv", merge_opt.csv, "Write the ratio report as CSV");
    merge->add_option("--score-distance-to", merge_opt.score_distance_to,
                      "Greedy scorer: negative distance to this checkpoint");
    merge->add_option("--score-cmd", merge_opt.score_cmd,
                      "Greedy scorer: external command receiving a checkpoint path");
    add_granularity_flags(merge, merge_opt.granularity);

    PeriodicOptions periodic_opt;
    CLI::App* periodic =
        app.add_subcommand("periodic", "Replay periodic merging over recorded trajectories");
    periodic->add_option("manifest", periodic_opt.manifest,
                         "JSON manifest with a 'trajectories' array of file lists")
        ->required();
    periodic->add_option("--anchor", periodic_opt.anchor, "Anchor checkpoint")->required();
    periodic->add_option("--out", periodic_opt.out, "Final merged checkpoint")->required();
    periodic->add_option("--save-periods", periodic_opt.save_periods,
                         "Directory for per-period merges");
    periodic->add_flag("--csv", periodic_opt.csv, "Write the ratio report as CSV");
    add_granularity_flags(periodic, periodic_opt.granularity);

    PlaneOptions plane_opt;
    CLI::App* plane = app.add_subcommand("plane", "Emit a 2-D weight-plane grid");
    plane->add_option("wA", plane_opt.model_a, "First spanning checkpoint")->required();
    plane->add_option("wB", plane_opt.model_b, "Second spanning checkpoint")->required();
    plane->add_option("--anchor", plane_opt.anchor, "Origin checkpoint w0")->required();
    plane->add_option("--rows", plane_opt.rows, "Grid rows")->check(CLI::PositiveNumber);
    plane->add_option("--cols", plane_opt.cols, "Grid columns")->check(CLI::PositiveNumber);
    plane->add_option("--margin", plane_opt.margin,
                      "Bounding-box expansion per side, as a fraction of the extent")
        ->check(CLI::NonNegativeNumber);
    plane->add_option("--out-dir", plane_opt.out_dir, "Output directory")->required();

    PerturbOptions perturb_opt;
    CLI::App* perturb = app.add_subcommand("perturb", "Add per-unit Gaussian noise to a center");
    perturb->add_option("--center", perturb_opt.center, "Center checkpoint")->required();
    perturb->add_option("--out", perturb_opt.out, "Output checkpoint")->required();
    perturb->add_option("--sigma", perturb_opt.sigma, "Uniform sigma for every unit");
    perturb->add_option("--geometry", perturb_opt.geometry_report,
                        "Geometry report (anchored at the center) supplying per-unit sigma");
    perturb->add_option("--seed", perturb_opt.seed, "RNG seed");
    add_granularity_flags(perturb, perturb_opt.granularity);

    CLI::App* synth = app.add_subcommand("synth", "Synthetic Gaussian ensembles and oracles");
    synth->require_subcommand(1);

    SynthSampleOptions sample_opt;
    CLI::App* sample = synth->add_subcommand("sample", "Sample a synthetic ensemble");
    sample->add_option("--spec", sample_opt.spec_path, "Synthetic spec JSON (desk default if omitted)");
    sample->add_option("-n,--n", sample_opt.count, "Number of models")->check(CLI::PositiveNumber);
    sample->add_option("--out-dir", sample_opt.out_dir, "Output directory")->required();
    sample->add_option("--seed", sample_opt.seed, "Override the spec seed");

    SynthTrajectoryOptions trajectory_opt;
    CLI::App* trajectory =
        synth->add_subcommand("trajectory", "Simulate fine-tuning trajectories");
    trajectory->add_option("--spec", trajectory_opt.spec_path, "Synthetic spec JSON");
    trajectory->add_option("--params", trajectory_opt.params_path, "Trajectory params JSON")
        ->required();
    trajectory->add_option("--seeds", trajectory_opt.seeds, "Trajectory seeds")
        ->required()
        ->delimiter(',');
    trajectory->add_option("--out-dir", trajectory_opt.out_dir, "Output directory")->required();
    trajectory->add_option("--seed", trajectory_opt.seed, "Override the spec seed");

    SynthValidateOptions validate_opt;
    CLI::App* validate =
        synth->add_subcommand("validate", "Predicted vs measured concentration statistics");
    validate->add_option("--spec", validate_opt.spec_path, "Synthetic spec JSON");
    validate->add_option("--samples", validate_opt.samples, "Monte Carlo sample count")
        ->check(CLI::Range(2, 1000000));
    validate->add_option("--tol", validate_opt.tol, "Relative tolerance on the mean norm")
        ->check(CLI::PositiveNumber);
    validate->add_option("--angle-tol", validate_opt.angle_tol_deg,
                         "Absolute tolerance on the mean angle (degrees)")
        ->check(CLI::PositiveNumber);
    validate->add_option("--out", validate_opt.out, "Report path");
    validate->add_flag("--csv", validate_opt.csv, "Write CSV instead of JSON");
    validate->add_option("--seed", validate_opt.seed, "Override the spec seed");

    std::vector<const char*> argv;
    argv.reserve(args.size() + 1);
    argv.push_back("stockpot");
    for (const auto& arg : args) argv.push_back(arg.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*inspect) return run_inspect(inspect_opt);
        if (*geometry) return run_geometry(geometry_opt);
        if (*center) return run_center(center_opt);
        if (*distance) return run_distance(distance_opt);
        if (*verify) return run_verify(verify_opt);
        if (*merge) {
            merge_opt.alpha_set = merge->count("--alpha") > 0;
            merge_opt.t_set = merge->count("--t") > 0;
            return run_merge(merge_opt);
        }
        if (*periodic) return run_periodic(periodic_opt);
        if (*plane) return run_plane(plane_opt);
        if (*perturb) return run_perturb(perturb_opt);
        if (*synth) {
            if (*sample) {
                sample_opt.seed_set = sample->count("--seed") > 0;
                return run_synth_sample(sample_opt);
            }
            if (*trajectory) {
                trajectory_opt.seed_set = trajectory->count("--seed") > 0;
                return run_synth_trajectory(trajectory_opt);
            }
            if (*validate) {
                validate_opt.seed_set = validate->count("--seed") > 0;
                return run_synth_validate(validate_opt);
            }
        }
    } catch (const UsageError& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 1;
    } catch (const NumericError& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 3;
    } catch (const Error& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        // Parse, schema, and I/O problems share the format exit code;
        // anything else is a numeric failure.
        if (dynamic_cast<const ParseError*>(&ex) != nullptr ||
            dynamic_cast<const SchemaError*>(&ex) != nullptr ||
            dynamic_cast<const IoError*>(&ex) != nullptr) {
            return 2;
        }
        return 3;
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 2;
    }
    return 1;
}

}  // namespace stockpot::cli
