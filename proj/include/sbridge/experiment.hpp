#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "sbridge/datagen.hpp"
#include "sbridge/io.hpp"
#include "sbridge/refine.hpp"

namespace sbridge::experiment {

struct DatasetSource {
    bool from_files = false;
    std::filesystem::path files;       // dataset directory when from_files
    datagen::GeneratorSpec generator;  // otherwise; its seed is overridden per run seed
    bool drop_last = false;            // drop the final snapshot (restores an odd count)
};

struct ExperimentConfig {
    int version = 1;
    std::string name;
    DatasetSource dataset;
    std::string method = "irr";  // "vanilla" (one plain bridge solve) or "irr"
    refine::IRRConfig irr;
    bool want_emd = true;
    bool want_mmd = true;
    std::string anchor_mode = "one-time-anchor";  // or "all-anchors"
    std::filesystem::path out_dir;                // empty: in-memory results only
    std::vector<std::uint64_t> seeds = {0};
};

// Strict JSON parsing: unknown keys at any level and schema version
// mismatches are std::invalid_argument.
datagen::GeneratorSpec parse_generator_spec(const nlohmann::json& j);
ExperimentConfig parse_experiment_config(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& file);

// Any per-seed error, wrapped with the seed and stage; numerical() separates
// simulation/fit divergence from configuration and IO problems.
class SeedFailure : public std::runtime_error {
  public:
    SeedFailure(std::uint64_t seed, bool numerical, const std::string& what)
        : std::runtime_error(what), seed_(seed), numerical_(numerical) {}
    std::uint64_t seed() const noexcept { return seed_; }
    bool numerical() const noexcept { return numerical_; }

  private:
    std::uint64_t seed_;
    bool numerical_;
};

struct SeedResult {
    std::uint64_t seed = 0;
    std::vector<io::MetricRow> rows;  // one per validation time
    std::vector<refine::RefinementState> history;
};

struct ExperimentResult {
    std::vector<SeedResult> per_seed;  // in config seed order
    std::vector<io::MetricRow> rows;   // merged, seed-major
};

// Per seed: generate or load the dataset, split train/validation, run the
// (possibly degenerate) refinement loop on the training snapshots, impute
// trajectories from the final drifts, and score the imputed state clouds
// against each validation snapshot at the nearest discrete step. When
// out_dir is set, writes seed_<s>/{history.jsonl, trajectories.csv, data/}
// and the merged metrics.csv; metric bytes are reproducible run to run.
// Seeds execute `threads` at a time.
ExperimentResult run_experiment(const ExperimentConfig& cfg, int threads = 1);

// Aggregates results_dir/metrics.csv into summary.csv (mean and population
// standard deviation per method, anchor mode and validation time) and draws
// quicklook.svg from the first seed's trajectory dump over its snapshots.
void write_report(const std::filesystem::path& results_dir);

}  // namespace sbridge::experiment
