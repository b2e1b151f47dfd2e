#include "sbridge/sde.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <tuple>

namespace sbridge {

namespace {

bool state_ok(double v) { return std::isfinite(v) && std::abs(v) <= kDivergenceBound; }

void check_row(const Mat& X, int row, int step) {
    for (int c = 0; c < X.cols(); ++c) {
        if (!state_ok(X(row, c))) {
            std::ostringstream os;
            os << "simulation diverged at step " << step << " (|state| > 1e12 or non-finite)";
            throw SimulationDiverged(step, os.str());
        }
    }
}

void check_all(const Mat& X, int step) {
    if (X.allFinite() && (X.array().abs() <= kDivergenceBound).all()) return;
    for (int r = 0; r < X.rows(); ++r) check_row(X, r, step);
}

void fill_normals(Mat& noise, std::vector<rng::Stream>& streams) {
    for (int p = 0; p < noise.rows(); ++p)
        for (int c = 0; c < noise.cols(); ++c) noise(p, c) = streams[static_cast<std::size_t>(p)].normal();
}

std::vector<rng::Stream> row_streams(const rng::Key& key, int n) {
    std::vector<rng::Stream> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int p = 0; p < n; ++p) out.emplace_back(key.child(static_cast<std::uint64_t>(p)));
    return out;
}

}  // namespace

TimeGrid::TimeGrid(std::vector<double> times, double dt, bool require_zero_start)
    : times_(std::move(times)), dt_(dt) {
    // a single-time grid has no segments but is a legal container (e.g. the
    // held-out half of a train/val split); simulation requires >= 2 times
    if (times_.empty()) throw std::invalid_argument("time grid needs at least one time");
    if (!(dt_ > 0.0) || !std::isfinite(dt_)) throw std::invalid_argument("dt must be positive and finite");
    for (double t : times_)
        if (!std::isfinite(t)) throw std::invalid_argument("time grid entries must be finite");
    if (require_zero_start && times_.front() != 0.0)
        throw std::invalid_argument("time grid must start at 0");
    for (std::size_t i = 0; i + 1 < times_.size(); ++i)
        if (!(times_[i] < times_[i + 1]))
            throw std::invalid_argument("time grid must be strictly increasing");

    cum_steps_.push_back(0);
    for (std::size_t i = 0; i + 1 < times_.size(); ++i) {
        const double gap = times_[i + 1] - times_[i];
        // smallest L with times[i] + L*dt >= times[i+1]; start near gap/dt and
        // settle with exact comparisons so float error cannot shift L
        int L = std::max(1, static_cast<int>(std::floor(gap / dt_)));
        while (times_[i] + L * dt_ < times_[i + 1]) ++L;
        while (L > 1 && times_[i] + (L - 1) * dt_ >= times_[i + 1]) --L;
        seg_steps_.push_back(L);
        cum_steps_.push_back(cum_steps_.back() + L);
    }
}

void SnapshotDataset::validate() const {
    if (static_cast<int>(snapshots.size()) != grid.n_times())
        throw std::invalid_argument("need exactly one snapshot per grid time");
    if (!(gamma > 0.0) || !std::isfinite(gamma))
        throw std::invalid_argument("gamma must be positive and finite");
    const int d = dim();
    for (int i = 0; i < grid.n_times(); ++i) {
        const Snapshot& s = snapshots[static_cast<std::size_t>(i)];
        if (s.time_index != i) throw std::invalid_argument("snapshots must be in grid order");
        if (s.count() == 0) throw std::invalid_argument("empty snapshot");
        if (s.dim() != d) throw std::invalid_argument("snapshots disagree on dimension");
        if (!s.points.allFinite()) throw std::invalid_argument("non-finite snapshot entries");
    }
}

PiecewiseDrift::PiecewiseDrift(Direction dir, TimeGrid grid,
                               std::vector<std::shared_ptr<const DriftField>> segments)
    : dir_(dir), grid_(std::move(grid)), segments_(std::move(segments)) {
    if (static_cast<int>(segments_.size()) != grid_.n_segments())
        throw std::invalid_argument("need one drift per grid segment");
    for (const auto& s : segments_)
        if (!s) throw std::invalid_argument("null segment drift");
}

int PiecewiseDrift::dim() const { return segments_.front()->dim(); }

Mat PiecewiseDrift::eval(const Mat& X, double t) const {
    const auto& ts = grid_.times();
    const int nseg = n_segments();
    if (dir_ == Direction::forward) {
        const double tc = std::clamp(t, ts.front(), ts.back());
        // last segment i with times[i] <= tc; half-open intervals, last closed
        int i = static_cast<int>(std::upper_bound(ts.begin(), ts.end(), tc) - ts.begin()) - 1;
        i = std::clamp(i, 0, nseg - 1);
        return segments_[static_cast<std::size_t>(i)]->eval(X, tc);
    }
    // backward: u is global reversed time; reversed boundaries are
    // rev_j = t_last - times[I-1-j], increasing in j
    const double span = grid_.span();
    const double u = std::clamp(t, 0.0, span);
    const int I = grid_.n_times();
    int k = 0;  // last reversed boundary index with rev_k <= u
    for (int j = I - 1; j >= 0; --j) {
        if (ts.back() - ts[static_cast<std::size_t>(I - 1 - j)] <= u) {
            k = j;
            break;
        }
    }
    k = std::min(k, I - 2);
    const int i = I - 2 - k;  // segment owning [rev_k, rev_{k+1})
    const double s_local = u - (ts.back() - ts[static_cast<std::size_t>(i + 1)]);
    return segments_[static_cast<std::size_t>(i)]->eval(X, s_local);
}

Trajectory simulate_forward(const DriftField& drift, const Vec& x0, double t_start, int steps,
                            double dt, double gamma, rng::Stream& rs) {
    if (steps < 0) throw std::invalid_argument("steps must be >= 0");
    if (!(dt > 0.0)) throw std::invalid_argument("dt must be positive");
    if (gamma < 0.0) throw std::invalid_argument("gamma must be >= 0");
    const int d = static_cast<int>(x0.size());
    Trajectory tr;
    tr.start_time = t_start;
    tr.dt = dt;
    tr.states = Mat(steps + 1, d);
    tr.states.row(0) = x0.transpose();
    const double sigma = std::sqrt(gamma * dt);
    Mat x = x0.transpose();
    for (int j = 0; j < steps; ++j) {
        Mat b = drift.eval(x, t_start + j * dt);
        for (int c = 0; c < d; ++c) x(0, c) += b(0, c) * dt + sigma * rs.normal();
        check_row(x, 0, j + 1);
        tr.states.row(j + 1) = x.row(0);
    }
    return tr;
}

Trajectory simulate_backward(const DriftField& drift_back, const Vec& x_end, double t_end,
                             int steps, double dt, double gamma, rng::Stream& rs, double rev_t0) {
    if (steps < 0) throw std::invalid_argument("steps must be >= 0");
    if (!(dt > 0.0)) throw std::invalid_argument("dt must be positive");
    if (gamma < 0.0) throw std::invalid_argument("gamma must be >= 0");
    const int d = static_cast<int>(x_end.size());
    Trajectory tr;
    tr.start_time = t_end - steps * dt;
    tr.dt = dt;
    tr.states = Mat(steps + 1, d);
    tr.states.row(steps) = x_end.transpose();
    const double sigma = std::sqrt(gamma * dt);
    Mat y = x_end.transpose();
    for (int j = 0; j < steps; ++j) {
        Mat b = drift_back.eval(y, rev_t0 + j * dt);
        for (int c = 0; c < d; ++c) y(0, c) += -b(0, c) * dt + sigma * rs.normal();
        check_row(y, 0, j + 1);
        tr.states.row(steps - 1 - j) = y.row(0);
    }
    return tr;
}

std::vector<Mat> simulate_forward_ensemble(const DriftField& drift, const Mat& X0, double t_start,
                                           int steps, double dt, double gamma,
                                           const rng::Key& key) {
    const int n = static_cast<int>(X0.rows());
    const int d = static_cast<int>(X0.cols());
    auto streams = row_streams(key, n);
    std::vector<Mat> paths;
    paths.reserve(static_cast<std::size_t>(steps) + 1);
    paths.push_back(X0);
    const double sigma = std::sqrt(gamma * dt);
    Mat x = X0, noise(n, d);
    for (int j = 0; j < steps; ++j) {
        Mat b = drift.eval(x, t_start + j * dt);
        fill_normals(noise, streams);
        x += b * dt + sigma * noise;
        check_all(x, j + 1);
        paths.push_back(x);
    }
    return paths;
}

std::vector<Mat> simulate_backward_ensemble(const DriftField& drift_back, const Mat& Xend,
                                            double t_end, int steps, double dt, double gamma,
                                            const rng::Key& key, double rev_t0) {
    (void)t_end;
    const int n = static_cast<int>(Xend.rows());
    const int d = static_cast<int>(Xend.cols());
    auto streams = row_streams(key, n);
    std::vector<Mat> paths;
    paths.reserve(static_cast<std::size_t>(steps) + 1);
    paths.push_back(Xend);
    const double sigma = std::sqrt(gamma * dt);
    Mat y = Xend, noise(n, d);
    for (int j = 0; j < steps; ++j) {
        Mat b = drift_back.eval(y, rev_t0 + j * dt);
        fill_normals(noise, streams);
        y += -b * dt + sigma * noise;
        check_all(y, j + 1);
        paths.push_back(y);
    }
    return paths;
}

namespace {

// Shared implementation of the concatenated sampler; obs rows anchored at
// obs_index, one rng key per row (backward sweep draws from row_key.child(0),
// forward from row_key.child(1)). Segment switching is by step count, not by
// time lookup, so overshot boundary states use the next segment's drift only
// after the full L_i steps of the current one.
std::vector<Trajectory> concat_impl(const PiecewiseDrift& forward, const PiecewiseDrift& backward,
                                    const Mat& obs, int obs_index, const TimeGrid& grid,
                                    double gamma, const std::vector<rng::Key>& row_keys) {
    if (obs_index < 0 || obs_index >= grid.n_times())
        throw std::invalid_argument("anchor index outside the grid");
    if (forward.n_segments() != grid.n_segments() || backward.n_segments() != grid.n_segments())
        throw std::invalid_argument("piecewise drifts do not tile the grid");

    const int n = static_cast<int>(obs.rows());
    const int d = static_cast<int>(obs.cols());
    const double dt = grid.dt();
    const double t_anchor = grid.time(obs_index);
    const int back_steps = grid.steps_before(obs_index);
    const int fwd_steps = grid.total_steps() - back_steps;
    const double sigma = std::sqrt(gamma * dt);

    std::vector<Trajectory> out(static_cast<std::size_t>(n));
    std::vector<Mat*> states(static_cast<std::size_t>(n));
    for (int p = 0; p < n; ++p) {
        Trajectory& tr = out[static_cast<std::size_t>(p)];
        tr.start_time = t_anchor - back_steps * dt;
        tr.dt = dt;
        tr.states = Mat(back_steps + fwd_steps + 1, d);
        tr.anchor_time_index = obs_index;
        tr.anchor_particle = p;
        tr.anchor_row = back_steps;
        tr.states.row(back_steps) = obs.row(p);
        states[static_cast<std::size_t>(p)] = &tr.states;
    }

    Mat noise(n, d);

    // backward sweep over segments obs_index-1, ..., 0
    {
        std::vector<rng::Stream> streams;
        streams.reserve(static_cast<std::size_t>(n));
        for (int p = 0; p < n; ++p) streams.emplace_back(row_keys[static_cast<std::size_t>(p)].child(0));
        Mat y = obs;
        double t_cur = t_anchor;
        int row = back_steps;
        int step_count = 0;
        for (int seg = obs_index - 1; seg >= 0; --seg) {
            const DriftField& B = backward.segment(seg);
            const double seg_end = grid.time(seg + 1);
            for (int s = 0; s < grid.segment_steps(seg); ++s) {
                Mat b = B.eval(y, seg_end - t_cur);
                fill_normals(noise, streams);
                y += -b * dt + sigma * noise;
                check_all(y, ++step_count);
                t_cur -= dt;
                --row;
                for (int p = 0; p < n; ++p) states[static_cast<std::size_t>(p)]->row(row) = y.row(p);
            }
        }
    }

    // forward sweep over segments obs_index, ..., I-2
    {
        std::vector<rng::Stream> streams;
        streams.reserve(static_cast<std::size_t>(n));
        for (int p = 0; p < n; ++p) streams.emplace_back(row_keys[static_cast<std::size_t>(p)].child(1));
        Mat x = obs;
        double t_cur = t_anchor;
        int row = back_steps;
        int step_count = 0;
        for (int seg = obs_index; seg < grid.n_segments(); ++seg) {
            const DriftField& F = forward.segment(seg);
            for (int s = 0; s < grid.segment_steps(seg); ++s) {
                Mat b = F.eval(x, t_cur);
                fill_normals(noise, streams);
                x += b * dt + sigma * noise;
                check_all(x, ++step_count);
                t_cur += dt;
                ++row;
                for (int p = 0; p < n; ++p) states[static_cast<std::size_t>(p)]->row(row) = x.row(p);
            }
        }
    }

    return out;
}

}  // namespace

Trajectory concat_full_trajectory(const PiecewiseDrift& forward, const PiecewiseDrift& backward,
                                  const Vec& obs, int obs_index, const TimeGrid& grid,
                                  double gamma, const rng::Key& traj_key) {
    Mat one = obs.transpose();
    auto trajs = concat_impl(forward, backward, one, obs_index, grid, gamma, {traj_key});
    return trajs.front();
}

std::vector<Trajectory> concat_full_trajectories(const PiecewiseDrift& forward,
                                                 const PiecewiseDrift& backward, const Mat& obs,
                                                 int obs_index, const TimeGrid& grid, double gamma,
                                                 const rng::Key& key) {
    std::vector<rng::Key> row_keys;
    row_keys.reserve(static_cast<std::size_t>(obs.rows()));
    for (int p = 0; p < obs.rows(); ++p) row_keys.push_back(key.child(static_cast<std::uint64_t>(p)));
    return concat_impl(forward, backward, obs, obs_index, grid, gamma, row_keys);
}

double gaussian_step_loglik(const Vec& x_next, const Vec& x_prev, const Vec& drift_val, double dt,
                            double gamma) {
    if (!(dt > 0.0)) throw std::invalid_argument("dt must be positive");
    if (!(gamma > 0.0)) throw std::invalid_argument("gamma must be positive (density undefined at 0)");
    const int d = static_cast<int>(x_next.size());
    const double var = gamma * dt;
    const Vec r = x_next - x_prev - drift_val * dt;
    return -0.5 * d * std::log(2.0 * std::numbers::pi * var) - r.squaredNorm() / (2.0 * var);
}

double path_loglik(const Trajectory& traj, const DriftField& drift, double gamma) {
    if (traj.length() < 2) throw std::invalid_argument("trajectory needs at least two states");
    double total = 0.0;
    for (int j = 0; j + 1 < traj.length(); ++j) {
        Mat row = traj.states.row(j);
        Mat b = drift.eval(row, traj.time_at(j));
        total += gaussian_step_loglik(traj.states.row(j + 1).transpose(),
                                      traj.states.row(j).transpose(), b.row(0).transpose(),
                                      traj.dt, gamma);
    }
    return total;
}

double empirical_kl(const std::vector<Trajectory>& trajs, const DriftField& drift_q,
                    const DriftField& drift_p, double gamma) {
    if (trajs.empty()) throw std::invalid_argument("need at least one trajectory");
    if (!(gamma > 0.0)) throw std::invalid_argument("gamma must be positive");

    // trajectories sharing (start_time, dt, length) are evaluated together,
    // one batched drift call per step
    std::vector<std::size_t> order(trajs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const Trajectory &A = trajs[a], &B = trajs[b];
        const auto ka = std::make_tuple(A.start_time, A.dt, A.length());
        const auto kb = std::make_tuple(B.start_time, B.dt, B.length());
        return ka < kb;
    });

    double acc = 0.0;
    std::size_t lo = 0;
    while (lo < order.size()) {
        std::size_t hi = lo;
        const Trajectory& head = trajs[order[lo]];
        while (hi < order.size()) {
            const Trajectory& t = trajs[order[hi]];
            if (t.start_time != head.start_time || t.dt != head.dt || t.length() != head.length())
                break;
            ++hi;
        }
        const int nb = static_cast<int>(hi - lo);
        Mat X(nb, head.dim());
        Vec sums = Vec::Zero(nb);
        for (int j = 0; j + 1 < head.length(); ++j) {
            for (int r = 0; r < nb; ++r) X.row(r) = trajs[order[lo + static_cast<std::size_t>(r)]].states.row(j);
            const double t = head.time_at(j);
            sums += (drift_q.eval(X, t) - drift_p.eval(X, t)).rowwise().squaredNorm();
        }
        acc += sums.sum() * head.dt / (2.0 * gamma);
        lo = hi;
    }
    return acc / static_cast<double>(trajs.size());
}

}  // namespace sbridge
