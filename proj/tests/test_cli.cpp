#include <doctest.h>

#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

#include "helpers.hpp"
#include "stockpot/cli.hpp"
#include "stockpot/tensor_store.hpp"

using namespace stockpot;
using stockpot::testing::TempDir;
using stockpot::testing::make_checkpoint;

namespace {

int run(const std::vector<std::string>& args) {
    return stockpot::cli::run(args);
}

std::vector<std::byte> read_bytes(const std::filesystem::path& path) {
    std::ifstream file(path, std::ios::binary);
    REQUIRE(file);
    std::vector<char> data((std::istreambuf_iterator<char>(file)),
                           std::istreambuf_iterator<char>());
    std::vector<std::byte> out(data.size());
    std::memcpy(out.data(), data.data(), data.size());
    return out;
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream file(path);
    REQUIRE(file);
    std::stringstream buffer;
    buffer << file.rdbuf();
    return buffer.str();
}

}  // namespace

TEST_CASE("cli usage errors exit 1") {
    CHECK(run({}) == 1);
    CHECK(run({"unknown-subcommand"}) == 1);
    CHECK(run({"merge", "--method", "nonsense", "--out", "x.st", "a.st"}) == 1);
    CHECK(run({"--help"}) == 0);
}

TEST_CASE("cli schema and io errors exit 2") {
    TempDir dir("cli_err");
    CHECK(run({"inspect", (dir.path() / "missing.st").string()}) == 2);

    save_checkpoint(make_checkpoint({{"a", {1.0}}}), dir.file("a.st"));
    save_checkpoint(make_checkpoint({{"b", {1.0}}}), dir.file("b.st"));
    CHECK(run({"merge", "--method", "uniform", "--out", dir.file("o.st").string(),
               dir.file("a.st").string(), dir.file("b.st").string()}) == 2);

    // A corrupt container file.
    std::ofstream bad(dir.file("bad.st"), std::ios::binary);
    bad << "garbage";
    bad.close();
    CHECK(run({"inspect", dir.file("bad.st").string()}) == 2);
}

TEST_CASE("synth sample feeds the whole pipeline") {
    TempDir dir("cli_flow");
    const std::string out_dir = (dir.path() / "ens").string();
    REQUIRE(run({"synth", "sample", "-n", "6", "--seed", "19", "--out-dir", out_dir}) == 0);
    REQUIRE(std::filesystem::exists(dir.path() / "ens" / "model_005.st"));
    REQUIRE(std::filesystem::exists(dir.path() / "ens" / "anchor.st"));
    REQUIRE(std::filesystem::exists(dir.path() / "ens" / "center.st"));

    const std::string anchor = (dir.path() / "ens" / "anchor.st").string();
    const std::string center = (dir.path() / "ens" / "center.st").string();
    std::vector<std::string> models;
    for (int m = 0; m < 6; ++m) {
        char name[32];
        std::snprintf(name, sizeof(name), "model_%03d.st", m);
        models.push_back((dir.path() / "ens" / name).string());
    }

    SUBCASE("report artifacts are byte-identical across reruns") {
        const std::string first = dir.file("geo1.json").string();
        const std::string second = dir.file("geo2.json").string();
        std::vector<std::string> args{"geometry", "--anchor", anchor, "--out", first};
        args.insert(args.end(), models.begin(), models.end());
        CHECK(run(args) == 0);
        args[4] = second;
        CHECK(run(args) == 0);
        CHECK(read_bytes(first) == read_bytes(second));
    }
    SUBCASE("inspect summarizes and reports") {
        const std::string report = dir.file("inspect.json").string();
        CHECK(run({"inspect", models[0], models[1], "--out", report}) == 0);
        CHECK(read_text(report).find("\"compatible\": true") != std::string::npos);
    }
    SUBCASE("geometry, center, distance, verify") {
        const std::string geo = dir.file("geometry.json").string();
        std::vector<std::string> args{"geometry", "--anchor", anchor, "--out", geo};
        args.insert(args.end(), models.begin(), models.end());
        CHECK(run(args) == 0);
        CHECK(read_text(geo).find("mean_angle_deg") != std::string::npos);

        const std::string mu_hat = dir.file("mu_hat.st").string();
        std::vector<std::string> center_args{"center", "--out", mu_hat};
        center_args.insert(center_args.end(), models.begin(), models.end());
        CHECK(run(center_args) == 0);

        CHECK(run({"distance", models[0], "--center", mu_hat, "--out",
                   dir.file("dist.csv").string(), "--csv"}) == 0);
        CHECK(read_text(dir.file("dist.csv")).find("(global)") != std::string::npos);

        std::vector<std::string> verify_args{"verify", "--anchor", anchor, "--center",
                                             center,   "--tol",    "0.05"};
        verify_args.insert(verify_args.end(), models.begin(), models.end());
        CHECK(run(verify_args) == 0);

        // An absurd tolerance turns the same report into a failure.
        std::vector<std::string> strict{"verify", "--anchor", anchor, "--center",
                                        center,   "--tol",    "1e-9"};
        strict.insert(strict.end(), models.begin(), models.end());
        CHECK(run(strict) == 3);
    }
    SUBCASE("stock merge writes the checkpoint and the ratio report") {
        const std::string merged = dir.file("merged.st").string();
        CHECK(run({"merge", "--method", "stock", "--anchor", anchor, "--out", merged, models[0],
                   models[1]}) == 0);
        CHECK(std::filesystem::exists(merged));
        const std::string ratios = read_text(merged + ".ratios.json");
        CHECK(ratios.find("cos_theta") != std::string::npos);

        // Deterministic artifacts: a second run writes identical bytes.
        const std::string merged2 = dir.file("merged2.st").string();
        CHECK(run({"merge", "--method", "stock", "--anchor", anchor, "--out", merged2, models[0],
                   models[1]}) == 0);
        CHECK(read_bytes(merged) == read_bytes(merged2));
        // And input order does not matter.
        const std::string merged3 = dir.file("merged3.st").string();
        CHECK(run({"merge", "--method", "stock", "--anchor", anchor, "--out", merged3, models[1],
                   models[0]}) == 0);
        CHECK(read_bytes(merged) == read_bytes(merged3));
    }
    SUBCASE("thread cap does not change artifacts") {
        const std::string one = dir.file("t1.st").string();
        const std::string many = dir.file("t8.st").string();
        setenv("STOCKPOT_THREADS", "1", 1);
        CHECK(run({"merge", "--method", "stock", "--anchor", anchor, "--out", one, models[0],
                   models[1], models[2]}) == 0);
        setenv("STOCKPOT_THREADS", "8", 1);
        CHECK(run({"merge", "--method", "stock", "--anchor", anchor, "--out", many, models[0],
                   models[1], models[2]}) == 0);
        unsetenv("STOCKPOT_THREADS");
        CHECK(read_bytes(one) == read_bytes(many));
    }
    SUBCASE("wise alpha 0 is byte-identical to the canonical anchor") {
        const std::string out = dir.file("wise0.st").string();
        CHECK(run({"merge", "--method", "wise", "--alpha", "0", "--anchor", anchor, "--out", out,
                   models[0]}) == 0);
        const Checkpoint loaded = load_checkpoint(anchor);
        CHECK(read_bytes(out) == serialize_checkpoint(loaded));
    }
    SUBCASE("greedy merge with the distance scorer") {
        const std::string out = dir.file("greedy.st").string();
        std::vector<std::string> args{"merge", "--method", "greedy", "--score-distance-to",
                                      center,  "--out",    out};
        args.insert(args.end(), models.begin(), models.end());
        CHECK(run(args) == 0);
        CHECK(std::filesystem::exists(out));
        CHECK(read_text(out + ".trace.json").find("accepted") != std::string::npos);
    }
    SUBCASE("pair interpolation validates t") {
        const std::string out = dir.file("pair.st").string();
        CHECK(run({"merge", "--method", "pair", "--t", "0.5", "--out", out, models[0],
                   models[1]}) == 0);
        CHECK(run({"merge", "--method", "pair", "--t", "1.5", "--out", out, models[0],
                   models[1]}) == 3);
        CHECK(run({"merge", "--method", "pair", "--t", "1.5", "--allow-extrapolation", "--out",
                   out, models[0], models[1]}) == 0);
    }
    SUBCASE("perturb with sigma zero reproduces the center values") {
        const std::string out = dir.file("perturbed.st").string();
        CHECK(run({"perturb", "--center", center, "--sigma", "0", "--seed", "5", "--out", out}) ==
              0);
        const Checkpoint a = load_checkpoint(out);
        const Checkpoint b = load_checkpoint(center);
        for (const auto& [name, record] : b.tensors) {
            CHECK(a.tensors.at(name).data == record.data);
        }
    }
    SUBCASE("plane grid emits a manifest and checkpoints") {
        const std::string plane_dir = (dir.path() / "plane").string();
        CHECK(run({"plane", models[0], models[1], "--anchor", anchor, "--rows", "2", "--cols",
                   "3", "--margin", "0", "--out-dir", plane_dir}) == 0);
        CHECK(std::filesystem::exists(dir.path() / "plane" / "manifest.json"));
        CHECK(std::filesystem::exists(dir.path() / "plane" / "point_r001_c002.st"));
        const std::string manifest = read_text(dir.path() / "plane" / "manifest.json");
        CHECK(manifest.find("e1_dot_e2") != std::string::npos);
    }
}

TEST_CASE("synth validate gates on the concentration bands") {
    TempDir dir("cli_validate");
    CHECK(run({"synth", "validate", "--samples", "12", "--seed", "3", "--out",
               dir.file("conc.json").string()}) == 0);
    CHECK(read_text(dir.file("conc.json")).find("predicted_norm_mean") != std::string::npos);
    // An impossible tolerance flips the exit code to the numeric failure.
    CHECK(run({"synth", "validate", "--samples", "12", "--seed", "3", "--tol", "1e-12"}) == 3);
}

TEST_CASE("synth trajectory manifest feeds periodic replay") {
    TempDir dir("cli_periodic");
    const std::string params = dir.file("params.json").string();
    {
        std::ofstream out(params);
        out << R"({"epochs": 3, "eta": 0.4, "sigma0": 0.01, "decay": 0.8, "rebranch": true})";
    }
    const std::string traj_dir = (dir.path() / "traj").string();
    CHECK(run({"synth", "trajectory", "--params", params, "--seeds", "1,2", "--seed", "11",
               "--out-dir", traj_dir}) == 0);
    REQUIRE(std::filesystem::exists(dir.path() / "traj" / "manifest.json"));
    REQUIRE(std::filesystem::exists(dir.path() / "traj" / "seed001_epoch003.st"));

    const std::string final_out = dir.file("final.st").string();
    CHECK(run({"periodic", (dir.path() / "traj" / "manifest.json").string(), "--anchor",
               (dir.path() / "traj" / "anchor.st").string(), "--out", final_out}) == 0);
    CHECK(std::filesystem::exists(final_out));
    const std::string ratios = read_text(final_out + ".ratios.json");
    CHECK(ratios.find("\"period\": 3") != std::string::npos);
}
