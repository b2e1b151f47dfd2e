#pragma once

#include <memory>
#include <vector>

#include "sbridge/regression.hpp"
#include "sbridge/rng.hpp"
#include "sbridge/types.hpp"

namespace sbridge {

struct SolverConfig {
    int ipml_iters = 10;
    RegressorConfig regressor;
    // cap on regression rows per half-bridge fit; excess rows are uniformly
    // subsampled
    int max_fit_points = 20000;
    // floor on simulated paths per direction; snapshots with fewer points are
    // replicated round-robin, so tiny snapshots still produce enough
    // increments to average the diffusion noise out of the drift fits
    int min_sim_paths = 64;
};

// One-to-one assignment of endpoints to targets, greedy on globally sorted
// pairwise distances; after min(n_e, n_t) pairs are fixed, leftover endpoints
// take their nearest target with reuse. Returns one target index per
// endpoint row.
std::vector<int> greedy_match(const Mat& endpoints, const Mat& targets);

struct PairDrifts {
    std::shared_ptr<const DriftField> forward;   // absolute time on [t_a, t_b]
    std::shared_ptr<const DriftField> backward;  // reversed time s = t_b - t
};

// Iterative proportional maximum-likelihood half-bridge scheme between two
// snapshots. Starting from forward := ref_drift, each iteration
//   (a) simulates the forward SDE from snap_a over [t_a, t_b],
//   (b) re-anchors endpoints to snap_b by greedy matching and fits the
//       backward drift by regression on the time-reversed increments,
//   (c) simulates the backward SDE from snap_b,
//   (d) re-anchors to snap_a and fits the forward drift on the forward
//       increments.
// Both fits regress residuals against the reference and the returned fields
// evaluate reference plus correction, so where data is scarce the learned
// drift falls back to ref_drift rather than to zero. The returned fields
// share ownership of ref_drift.
// Stream discipline: iteration it of the pair key uses key.child(it), with
// fixed sub-tags for simulation, subsampling and regression, so any pair can
// be re-solved in isolation bit-identically.
PairDrifts forward_backward_sb(const Snapshot& snap_a, const Snapshot& snap_b, double t_a,
                               double t_b, std::shared_ptr<const DriftField> ref_drift,
                               double gamma, double dt, const SolverConfig& cfg,
                               const rng::Key& key);

// Reference overload: the returned fields point into ref_drift, which must
// outlive them.
inline PairDrifts forward_backward_sb(const Snapshot& snap_a, const Snapshot& snap_b, double t_a,
                                      double t_b, const DriftField& ref_drift, double gamma,
                                      double dt, const SolverConfig& cfg, const rng::Key& key) {
    return forward_backward_sb(snap_a, snap_b, t_a, t_b, borrow(ref_drift), gamma, dt, cfg, key);
}

struct MultiMarginalDrifts {
    std::shared_ptr<PiecewiseDrift> forward;
    std::shared_ptr<PiecewiseDrift> backward;
};

// Solves every consecutive snapshot pair independently (pair i under
// key.child(i)) and assembles the piecewise drifts. Lifetime rules match
// forward_backward_sb.
MultiMarginalDrifts multi_marginal_sb(const SnapshotDataset& data,
                                      std::shared_ptr<const DriftField> ref_drift,
                                      const SolverConfig& cfg, const rng::Key& key);

inline MultiMarginalDrifts multi_marginal_sb(const SnapshotDataset& data,
                                             const DriftField& ref_drift, const SolverConfig& cfg,
                                             const rng::Key& key) {
    return multi_marginal_sb(data, borrow(ref_drift), cfg, key);
}

}  // namespace sbridge
