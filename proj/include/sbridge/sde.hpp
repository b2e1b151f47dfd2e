#pragma once

#include <vector>

#include "sbridge/rng.hpp"
#include "sbridge/types.hpp"

namespace sbridge {

// Euler-Maruyama: states[j+1] = states[j] + drift(states[j], t_j)*dt + sqrt(gamma*dt)*xi_j.
// Throws SimulationDiverged if any coordinate exceeds kDivergenceBound.
Trajectory simulate_forward(const DriftField& drift, const Vec& x0, double t_start, int steps,
                            double dt, double gamma, rng::Stream& rs);

// Same recursion stepped in reversed time: starting from x_end at t_end,
// y_{j+1} = y_j - drift_back(y_j, rev_t0 + j*dt)*dt + sqrt(gamma*dt)*xi_j,
// where the backward drift is evaluated at reversed-time coordinates
// (rev_t0 = 0 means time-to-t_end). States are returned re-ordered into
// increasing physical time, so states[steps] = x_end.
Trajectory simulate_backward(const DriftField& drift_back, const Vec& x_end, double t_end,
                             int steps, double dt, double gamma, rng::Stream& rs,
                             double rev_t0 = 0.0);

// Ensemble variants: one path per row of X0/Xend. paths[j] is the n x d
// state matrix after j steps (in simulation order, i.e. decreasing physical
// time for the backward variant). Row p uses stream key.child(p), drawing d
// normals per step, so results are bit-identical to the single-path
// functions run per row.
std::vector<Mat> simulate_forward_ensemble(const DriftField& drift, const Mat& X0, double t_start,
                                           int steps, double dt, double gamma, const rng::Key& key);
std::vector<Mat> simulate_backward_ensemble(const DriftField& drift_back, const Mat& Xend,
                                            double t_end, int steps, double dt, double gamma,
                                            const rng::Key& key, double rev_t0 = 0.0);

// Full-span path through one observation: backward over segments
// obs_index-1, ..., 0 and forward over segments obs_index, ..., I-2,
// switching segment drift by the per-segment step counts of the grid.
// Overshot boundary states are kept. The observation appears bit-identically
// at its grid time. Noise: backward part uses traj_key.child(0), forward
// part traj_key.child(1).
Trajectory concat_full_trajectory(const PiecewiseDrift& forward, const PiecewiseDrift& backward,
                                  const Vec& obs, int obs_index, const TimeGrid& grid,
                                  double gamma, const rng::Key& traj_key);

// Batched concat for all rows of obs anchored at the same index; row p uses
// traj_key.child(p), matching per-row calls to concat_full_trajectory bit
// for bit.
std::vector<Trajectory> concat_full_trajectories(const PiecewiseDrift& forward,
                                                 const PiecewiseDrift& backward, const Mat& obs,
                                                 int obs_index, const TimeGrid& grid, double gamma,
                                                 const rng::Key& key);

// log N(x_next; x_prev + drift_val*dt, gamma*dt*I). gamma = 0 is invalid.
double gaussian_step_loglik(const Vec& x_next, const Vec& x_prev, const Vec& drift_val, double dt,
                            double gamma);

// Sum of gaussian_step_loglik over consecutive states of the trajectory,
// with the drift evaluated at the left state and time.
double path_loglik(const Trajectory& traj, const DriftField& drift, double gamma);

// Discrete pathwise KL rate estimate: mean over trajectories of
// sum_j ||drift_q(x_j,t_j) - drift_p(x_j,t_j)||^2 * dt / (2*gamma),
// valid when the trajectories are samples from the drift_q path measure.
double empirical_kl(const std::vector<Trajectory>& trajs, const DriftField& drift_q,
                    const DriftField& drift_p, double gamma);

}  // namespace sbridge
