#include <doctest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <string>

namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
    fs::path p = fs::temp_directory_path() / ("sbridge_cli_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

int run_cli(const std::string& args, const fs::path& log) {
    const std::string cmd =
        std::string(SBRIDGE_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    REQUIRE(status != -1);
    REQUIRE(WIFEXITED(status));
    return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    REQUIRE(in.good());
    return std::string(std::istreambuf_iterator<char>(in), {});
}

nlohmann::json tiny_generator() {
    return {{"system", "lotka_volterra"},
            {"theta", {1.0, 0.4, 0.1, 0.4}},
            {"init", {{"kind", "box"}, {"lo", {5.0, 4.0}}, {"hi", {5.1, 4.1}}}},
            {"n_times", 3},
            {"particles_per_time", 6},
            {"spacing", 1.0},
            {"gamma_gen", 0.01},
            {"dt", 0.01},
            {"seed", 0}};
}

nlohmann::json tiny_config(const std::string& out) {
    return {{"version", 1},
            {"name", "tiny"},
            {"dataset", {{"generator", tiny_generator()}}},
            {"method", "irr"},
            {"irr",
             {{"iterations", 1},
              {"gamma", 0.1},
              {"dt", 0.05},
              {"family", "lotka_volterra"},
              {"solver", {{"ipml_iters", 2}, {"max_inducing", 32}}},
              {"fit", {{"lr", 0.05}, {"epochs", 5}}}}},
            {"metrics", {"emd", "mmd_sq"}},
            {"anchor_mode", "one-time-anchor"},
            {"out", out},
            {"seeds", {0}}};
}

void write_json(const fs::path& p, const nlohmann::json& j) {
    std::ofstream f(p);
    f << j.dump(2);
}

}  // namespace

TEST_CASE("generate writes one csv per snapshot, reproducibly") {
    auto dir = fresh_dir("gen");
    write_json(dir / "spec.json", tiny_generator());
    CHECK(run_cli("generate --spec " + (dir / "spec.json").string() + " --out " +
                      (dir / "a").string(),
                  dir / "log1.txt") == 0);
    CHECK(fs::exists(dir / "a" / "dataset.json"));
    for (int i = 0; i < 3; ++i)
        CHECK(fs::exists(dir / "a" / ("snapshot_" + std::to_string(i) + ".csv")));
    CHECK(!fs::exists(dir / "a" / "snapshot_3.csv"));

    CHECK(run_cli("generate --spec " + (dir / "spec.json").string() + " --out " +
                      (dir / "b").string(),
                  dir / "log2.txt") == 0);
    for (const char* name : {"dataset.json", "snapshot_0.csv", "snapshot_2.csv"})
        CHECK(slurp(dir / "a" / name) == slurp(dir / "b" / name));

    CHECK(run_cli("generate --spec " + (dir / "spec.json").string() + " --out " +
                      (dir / "c").string() + " --seed 5",
                  dir / "log3.txt") == 0);
    CHECK(slurp(dir / "a" / "snapshot_0.csv") != slurp(dir / "c" / "snapshot_0.csv"));

    CHECK(run_cli("generate --spec " + (dir / "spec.json").string() + " --out " +
                      (dir / "d").string() + " --bundled",
                  dir / "log4.txt") == 0);
    CHECK(fs::exists(dir / "d" / "dataset_bundle.json"));
}

TEST_CASE("malformed or invalid specs exit with code 2") {
    auto dir = fresh_dir("genbad");
    std::ofstream(dir / "broken.json") << "{not json";
    CHECK(run_cli("generate --spec " + (dir / "broken.json").string() + " --out " +
                      (dir / "x").string(),
                  dir / "log1.txt") == 2);

    auto j = tiny_generator();
    j["system"] = "unknown_system";
    write_json(dir / "badsys.json", j);
    CHECK(run_cli("generate --spec " + (dir / "badsys.json").string() + " --out " +
                      (dir / "y").string(),
                  dir / "log2.txt") == 2);

    CHECK(run_cli("generate --spec " + (dir / "missing.json").string() + " --out " +
                      (dir / "z").string(),
                  dir / "log3.txt") == 2);

    // missing required flag is a usage error
    CHECK(run_cli("generate --out " + (dir / "w").string(), dir / "log4.txt") == 2);
}

TEST_CASE("run produces deterministic metrics and per-seed artifacts") {
    auto dir = fresh_dir("run");
    write_json(dir / "cfg.json", tiny_config((dir / "out1").string()));
    CHECK(run_cli("run --config " + (dir / "cfg.json").string(), dir / "log1.txt") == 0);

    CHECK(fs::exists(dir / "out1" / "metrics.csv"));
    CHECK(fs::exists(dir / "out1" / "seed_0" / "history.jsonl"));
    CHECK(fs::exists(dir / "out1" / "seed_0" / "trajectories.csv"));
    CHECK(fs::exists(dir / "out1" / "seed_0" / "data" / "dataset.json"));

    const std::string metrics = slurp(dir / "out1" / "metrics.csv");
    // 3 times -> 1 validation time, 1 seed -> header + 1 row
    CHECK(std::count(metrics.begin(), metrics.end(), '\n') == 2);
    CHECK(metrics.find("0,irr,one-time-anchor,1,") != std::string::npos);
    // history: k = 0 and k = 1
    const std::string hist = slurp(dir / "out1" / "seed_0" / "history.jsonl");
    CHECK(std::count(hist.begin(), hist.end(), '\n') == 2);

    CHECK(run_cli("run --config " + (dir / "cfg.json").string() + " --out " +
                      (dir / "out2").string(),
                  dir / "log2.txt") == 0);
    CHECK(slurp(dir / "out2" / "metrics.csv") == metrics);

    CHECK(run_cli("run --config " + (dir / "cfg.json").string() + " --out " +
                      (dir / "out3").string() + " --seed 4",
                  dir / "log3.txt") == 0);
    const std::string m3 = slurp(dir / "out3" / "metrics.csv");
    CHECK(m3.find("\n4,irr,") != std::string::npos);
    CHECK(m3 != metrics);
}

TEST_CASE("unknown config keys and bad schema versions exit with code 2") {
    auto dir = fresh_dir("runbad");
    auto j = tiny_config((dir / "out").string());
    j["surprise"] = 1;
    write_json(dir / "unknown.json", j);
    CHECK(run_cli("run --config " + (dir / "unknown.json").string(), dir / "log1.txt") == 2);

    j = tiny_config((dir / "out").string());
    j["version"] = 2;
    write_json(dir / "badver.json", j);
    CHECK(run_cli("run --config " + (dir / "badver.json").string(), dir / "log2.txt") == 2);

    j = tiny_config((dir / "out").string());
    j["irr"].erase("family");
    write_json(dir / "nofam.json", j);
    CHECK(run_cli("run --config " + (dir / "nofam.json").string(), dir / "log3.txt") == 2);

    CHECK(run_cli("run --config " + (dir / "missing.json").string(), dir / "log4.txt") == 2);
}

TEST_CASE("report aggregates a results directory and draws the quick look") {
    auto dir = fresh_dir("report");
    write_json(dir / "cfg.json", tiny_config((dir / "out").string()));
    REQUIRE(run_cli("run --config " + (dir / "cfg.json").string(), dir / "log1.txt") == 0);
    CHECK(run_cli("report " + (dir / "out").string(), dir / "log2.txt") == 0);

    const std::string summary = slurp(dir / "out" / "summary.csv");
    CHECK(summary.starts_with(
        "method,anchor_mode,val_time,n_seeds,emd_mean,emd_std,mmd_sq_mean,mmd_sq_std\n"));
    CHECK(std::count(summary.begin(), summary.end(), '\n') == 2);  // one group
    CHECK(summary.find("irr,one-time-anchor,1,1,") != std::string::npos);
    // single seed: stds are exactly 0
    CHECK(summary.find(",0,") != std::string::npos);

    const std::string svg = slurp(dir / "out" / "quicklook.svg");
    CHECK(svg.starts_with("<svg"));
    CHECK(svg.find("<circle") != std::string::npos);
    CHECK(svg.find("<polyline") != std::string::npos);

    auto empty = fresh_dir("reportempty");
    CHECK(run_cli("report " + empty.string(), dir / "log3.txt") == 2);
}
