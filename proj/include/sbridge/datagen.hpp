#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "sbridge/families.hpp"
#include "sbridge/rng.hpp"
#include "sbridge/types.hpp"

namespace sbridge::datagen {

// Initial state distribution for generated particles: either an axis-aligned
// uniform box or a uniform disk (2-D only).
struct InitialDistribution {
    enum class Kind { box, disk };

    Kind kind = Kind::box;
    Vec lo, hi;         // box bounds, one entry per dimension
    Vec center;         // disk center (2-D)
    double radius = 0;  // disk radius

    static InitialDistribution Box(Vec lo, Vec hi);
    static InitialDistribution Disk(Vec center, double radius);

    int dim() const;
    // One draw; consumes dim() uniforms (box) or 2 uniforms (disk).
    Vec sample_one(rng::Stream& rs) const;
};

// Synthetic benchmark description: the true drift family and parameters, the
// initial distribution, the observation schedule, and the generator noise.
//
// Two particle layouts:
//   pooled = false: n_times * particles_per_time independent trajectories,
//     block p -> snapshot p / particles_per_time.
//   pooled = true: pool_size independent trajectories assigned round-robin
//     p -> snapshot p % n_times, so snapshot counts differ by at most 1.
struct GeneratorSpec {
    Family system = Family::lotka_volterra;
    ParamVector theta_true;
    InitialDistribution init;
    int n_times = 10;
    int particles_per_time = 50;
    bool pooled = false;
    int pool_size = 0;
    double spacing = 1.0;   // gap between consecutive observation times
    double gamma_gen = 0.01;
    double dt = 0.01;
    std::uint64_t seed = 0;
};

struct GeneratedData {
    SnapshotDataset data;
    // Full-span sample paths, one per particle, never fed to inference.
    // anchor_time_index / anchor_particle / anchor_row identify where each
    // particle's single destructive observation landed.
    std::vector<Trajectory> true_paths;
};

// Simulates every particle over the whole span [0, (n_times-1)*spacing] with
// Euler-Maruyama at (dt, gamma_gen) and exposes each particle only at its
// assigned observation time. Bit-identical for a fixed seed. Divergence of
// the true system propagates as SimulationDiverged.
GeneratedData generate(const GeneratorSpec& spec);

// Keeps the 1-based odd-indexed snapshots (first, third, ...) for training
// and the even-indexed ones for validation; grids are re-derived with the
// same dt. Requires an odd number of snapshots >= 3 so both endpoints stay
// in the training set; throws std::invalid_argument otherwise.
std::pair<SnapshotDataset, SnapshotDataset> split_train_val(const SnapshotDataset& data);

}  // namespace sbridge::datagen
