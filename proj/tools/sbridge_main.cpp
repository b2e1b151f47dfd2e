#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "sbridge/datagen.hpp"
#include "sbridge/experiment.hpp"
#include "sbridge/io.hpp"

namespace fs = std::filesystem;
using namespace sbridge;

namespace {

// exit codes: 0 ok, 2 configuration or IO error, 3 numerical failure

int cmd_generate(const fs::path& spec_file, const fs::path& out, bool bundled, bool seed_set,
                 std::uint64_t seed) {
    std::ifstream in(spec_file);
    if (!in) throw std::invalid_argument("cannot open spec: " + spec_file.string());
    datagen::GeneratorSpec spec = experiment::parse_generator_spec(nlohmann::json::parse(in));
    if (seed_set) spec.seed = seed;
    datagen::GeneratedData gen = datagen::generate(spec);
    if (bundled) {
        fs::create_directories(out);
        io::save_dataset_bundled(gen.data, out / "dataset_bundle.json");
    } else {
        io::save_dataset(gen.data, out);
    }
    std::cout << "wrote " << gen.data.snapshots.size() << " snapshots to " << out.string()
              << '\n';
    return 0;
}

int cmd_run(const fs::path& config_file, bool seed_set, std::uint64_t seed, const fs::path& out,
            int threads) {
    experiment::ExperimentConfig cfg = experiment::load_experiment_config(config_file);
    if (seed_set) cfg.seeds = {seed};
    if (!out.empty()) cfg.out_dir = out;
    if (cfg.out_dir.empty())
        throw std::invalid_argument("no output directory: set \"out\" in the config or pass --out");
    experiment::ExperimentResult res = experiment::run_experiment(cfg, threads);
    std::cout << "ran " << res.per_seed.size() << " seed(s), " << res.rows.size()
              << " metric rows -> " << (cfg.out_dir / "metrics.csv").string() << '\n';
    return 0;
}

int cmd_report(const fs::path& results_dir) {
    experiment::write_report(results_dir);
    std::ifstream summary(results_dir / "summary.csv");
    if (!summary) throw std::invalid_argument("report produced no summary.csv");
    std::cout << summary.rdbuf();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Trajectory inference from destructive cross-sectional snapshots"};
    app.require_subcommand(1);

    std::string gen_spec, gen_out;
    bool gen_bundled = false;
    std::uint64_t gen_seed = 0;
    auto* gen = app.add_subcommand("generate", "Simulate a synthetic benchmark dataset");
    gen->add_option("--spec", gen_spec, "generator spec JSON file")->required();
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--seed", gen_seed, "override the spec seed");
    gen->add_flag("--bundled", gen_bundled, "write a single bundled JSON file");

    std::string run_config, run_out;
    std::uint64_t run_seed = 0;
    int run_threads = 1;
    auto* run = app.add_subcommand("run", "Run an experiment config end to end");
    run->add_option("--config", run_config, "experiment config JSON file")->required();
    run->add_option("--seed", run_seed, "run only this seed");
    run->add_option("--out", run_out, "override the output directory");
    run->add_option("--threads", run_threads, "seeds to run concurrently")
        ->check(CLI::PositiveNumber);

    std::string report_dir;
    auto* report = app.add_subcommand("report", "Aggregate a results directory");
    report->add_option("results", report_dir, "results directory with metrics.csv")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed())
            return cmd_generate(gen_spec, gen_out, gen_bundled, gen->count("--seed") > 0,
                                gen_seed);
        if (run->parsed())
            return cmd_run(run_config, run->count("--seed") > 0, run_seed, run_out, run_threads);
        return cmd_report(report_dir);
    } catch (const experiment::SeedFailure& e) {
        std::cerr << "error: " << e.what() << '\n';
        return e.numerical() ? 3 : 2;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::logic_error& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::runtime_error& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}
