#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "sbridge/families.hpp"
#include "sbridge/refine.hpp"
#include "sbridge/types.hpp"

namespace sbridge::io {

// Shortest decimal string that parses back to exactly v.
std::string fmt_double(double v);

// Dataset directory layout: dataset.json holding {"d", "gamma", "times"}
// plus snapshot_<i>.csv per snapshot with header x_0,...,x_{d-1}.
void save_dataset(const SnapshotDataset& data, const std::filesystem::path& dir);
// dt is a simulation choice, not a property of the files, so loading takes it
// explicitly.
SnapshotDataset load_dataset(const std::filesystem::path& dir, double dt);

// Single-file variant: the header object plus a "snapshots" array of
// per-time point arrays.
void save_dataset_bundled(const SnapshotDataset& data, const std::filesystem::path& file);
SnapshotDataset load_dataset_bundled(const std::filesystem::path& file, double dt);

// CSV with columns traj_id,anchor_time_index,step,time,x_0,...,x_{d-1};
// one row per state of every trajectory.
void save_trajectories_csv(const std::vector<Trajectory>& trajs,
                           const std::filesystem::path& file);

nlohmann::json param_to_json(const ParamVector& theta);
ParamVector param_from_json(const nlohmann::json& j);

// One refinement record per line: k, theta, loss, kl, wall_seconds.
void save_history_jsonl(const std::vector<refine::RefinementState>& history,
                        const std::filesystem::path& file);
std::vector<refine::RefinementState> load_history_jsonl(const std::filesystem::path& file);

struct MetricRow {
    std::uint64_t seed = 0;
    std::string method;
    std::string anchor_mode;
    double val_time = 0.0;
    double emd = 0.0;
    double mmd_sq = 0.0;
};

inline constexpr const char* kMetricsHeader = "seed,method,anchor_mode,val_time,emd,mmd_sq";

void save_metrics_csv(const std::vector<MetricRow>& rows, const std::filesystem::path& file);
// Throws std::invalid_argument when the header deviates from kMetricsHeader.
std::vector<MetricRow> load_metrics_csv(const std::filesystem::path& file);

}  // namespace sbridge::io
