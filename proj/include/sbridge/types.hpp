#pragma once

#include <Eigen/Dense>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace sbridge {

using Mat = Eigen::MatrixXd;  // rows are particles/states, columns are dimensions
using Vec = Eigen::VectorXd;

// Any state coordinate beyond this magnitude aborts a simulation; stiff
// misestimated drifts otherwise overflow to NaN silently.
inline constexpr double kDivergenceBound = 1e12;

// Thrown when a simulated state leaves the finite range; carries the step at
// which it happened.
class SimulationDiverged : public std::runtime_error {
  public:
    SimulationDiverged(int step, const std::string& what)
        : std::runtime_error(what), step_(step) {}
    int step() const noexcept { return step_; }

  private:
    int step_;
};

// Thrown when a linear solve inside a regression fails to produce finite
// coefficients.
class NumericalSolveError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Thrown when an optimizer hits a non-finite loss; carries the epoch.
class DivergedFit : public std::runtime_error {
  public:
    DivergedFit(int epoch, const std::string& what)
        : std::runtime_error(what), epoch_(epoch) {}
    int epoch() const noexcept { return epoch_; }

  private:
    int epoch_;
};

// Observation times t_0 < ... < t_{I-1} plus the simulation step dt.
// Segment i spans [times[i], times[i+1]] and is discretized with
// L_i = smallest integer such that times[i] + L_i*dt >= times[i+1]
// steps; the final step of a segment may overshoot the boundary.
class TimeGrid {
  public:
    // require_zero_start: full datasets must start at 0; validation subsets
    // (every second time) legitimately do not.
    TimeGrid(std::vector<double> times, double dt, bool require_zero_start = true);

    const std::vector<double>& times() const noexcept { return times_; }
    double time(int i) const { return times_.at(static_cast<std::size_t>(i)); }
    double dt() const noexcept { return dt_; }
    int n_times() const noexcept { return static_cast<int>(times_.size()); }
    int n_segments() const noexcept { return n_times() - 1; }
    // Steps in segment i (between times[i] and times[i+1]).
    int segment_steps(int i) const { return seg_steps_.at(static_cast<std::size_t>(i)); }
    // Total steps over segments [0, i); steps_before(n_segments()) covers the whole grid.
    int steps_before(int i) const { return cum_steps_.at(static_cast<std::size_t>(i)); }
    int total_steps() const { return cum_steps_.back(); }
    double span() const { return times_.back() - times_.front(); }

  private:
    std::vector<double> times_;
    double dt_;
    std::vector<int> seg_steps_;
    std::vector<int> cum_steps_;  // prefix sums, size n_times()
};

// One destructive cross-sectional observation: N_i particles measured at a
// single grid time, never seen again.
struct Snapshot {
    int time_index = 0;  // 0-based index into the grid times
    Mat points;          // N_i x d

    int count() const noexcept { return static_cast<int>(points.rows()); }
    int dim() const noexcept { return static_cast<int>(points.cols()); }
};

struct SnapshotDataset {
    TimeGrid grid;
    std::vector<Snapshot> snapshots;  // exactly one per grid time, in order
    double gamma = 0.0;               // volatility of the model SDE

    int dim() const { return snapshots.empty() ? 0 : snapshots.front().dim(); }
    // Throws std::invalid_argument on any structural violation.
    void validate() const;
};

// A uniformly dt-sampled path. Row j of states is the state at
// start_time + j*dt. The anchored observation appears bit-identically at
// row anchor_row.
struct Trajectory {
    double start_time = 0.0;
    double dt = 0.0;
    Mat states;                  // (steps+1) x d
    int anchor_time_index = -1;  // grid time index of the anchoring observation
    int anchor_particle = -1;    // row of the anchoring observation in its snapshot
    int anchor_row = 0;          // row of states holding that observation

    int length() const noexcept { return static_cast<int>(states.rows()); }
    int steps() const noexcept { return length() - 1; }
    int dim() const noexcept { return static_cast<int>(states.cols()); }
    double time_at(int j) const noexcept { return start_time + j * dt; }
};

// Evaluable velocity field (state, time) -> velocity. Evaluation is batched:
// X holds one state per row, all at the same time t. Implementations are
// immutable after construction and safe to share across threads.
class DriftField {
  public:
    virtual ~DriftField() = default;
    virtual int dim() const = 0;
    virtual Mat eval(const Mat& X, double t) const = 0;

    Vec eval_at(const Vec& x, double t) const {
        Mat row = x.transpose();
        return eval(row, t).row(0).transpose();
    }
};

class ZeroDrift final : public DriftField {
  public:
    explicit ZeroDrift(int d) : d_(d) {}
    int dim() const override { return d_; }
    Mat eval(const Mat& X, double) const override { return Mat::Zero(X.rows(), d_); }

  private:
    int d_;
};

class ConstantDrift final : public DriftField {
  public:
    explicit ConstantDrift(Vec c) : c_(std::move(c)) {}
    int dim() const override { return static_cast<int>(c_.size()); }
    Mat eval(const Mat& X, double) const override {
        return c_.transpose().replicate(X.rows(), 1);
    }

  private:
    Vec c_;
};

// One learned drift per grid segment, glued over [t_0, t_{I-1}].
//
// Time conventions:
//  - forward: eval(X, t) takes absolute time; segment i owns the half-open
//    interval [times[i], times[i+1]), the last segment is closed.
//  - backward: eval(X, u) takes global reversed time u = t_{I-1} - t, and
//    segment fields themselves expect local reversed time s = times[i+1] - t
//    (s = 0 at the segment's right edge). Dispatch intervals in u are
//    half-open from u = 0 (which belongs to the last pair), mirroring the
//    forward rule.
// Times outside the grid clamp to the nearest edge.
class PiecewiseDrift final : public DriftField {
  public:
    enum class Direction { forward, backward };

    PiecewiseDrift(Direction dir, TimeGrid grid,
                   std::vector<std::shared_ptr<const DriftField>> segments);

    int dim() const override;
    Mat eval(const Mat& X, double t) const override;

    Direction direction() const noexcept { return dir_; }
    const TimeGrid& grid() const noexcept { return grid_; }
    int n_segments() const noexcept { return static_cast<int>(segments_.size()); }
    const DriftField& segment(int i) const { return *segments_.at(static_cast<std::size_t>(i)); }
    std::shared_ptr<const DriftField> segment_ptr(int i) const {
        return segments_.at(static_cast<std::size_t>(i));
    }

  private:
    Direction dir_;
    TimeGrid grid_;
    std::vector<std::shared_ptr<const DriftField>> segments_;
};

// Wraps a field reference without taking ownership; the referent must
// outlive the wrapper. Used to pass stack-allocated references where a
// shared_ptr is expected.
inline std::shared_ptr<const DriftField> borrow(const DriftField& f) {
    return {std::shared_ptr<const DriftField>{}, &f};
}

}  // namespace sbridge
