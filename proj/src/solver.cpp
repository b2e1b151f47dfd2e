#include "sbridge/solver.hpp"

#include <algorithm>
#include <numeric>

#include "sbridge/sde.hpp"

namespace sbridge {

namespace {

// per-iteration stream tags
constexpr std::uint64_t kSimForward = 0, kSubsampleBackward = 1, kRegressBackward = 2,
                        kSimBackward = 3, kSubsampleForward = 4, kRegressForward = 5;

std::vector<int> subsample_rows(int n, int cap, rng::Stream& rs) {
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    if (n <= cap) return idx;
    for (int i = 0; i < cap; ++i) {
        const int j = i + static_cast<int>(rs.next_u64() % static_cast<std::uint64_t>(n - i));
        std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
    }
    idx.resize(static_cast<std::size_t>(cap));
    return idx;
}

struct FitData {
    Mat X;
    Vec t;
    Mat Y;
};

FitData take_rows(const Mat& X, const Vec& t, const Mat& Y, const std::vector<int>& rows) {
    FitData out;
    out.X = Mat(static_cast<Eigen::Index>(rows.size()), X.cols());
    out.t = Vec(static_cast<Eigen::Index>(rows.size()));
    out.Y = Mat(static_cast<Eigen::Index>(rows.size()), Y.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        out.X.row(static_cast<Eigen::Index>(r)) = X.row(rows[r]);
        out.t(static_cast<Eigen::Index>(r)) = t(rows[r]);
        out.Y.row(static_cast<Eigen::Index>(r)) = Y.row(rows[r]);
    }
    return out;
}

// Round-robin replication of simulation start points up to min_rows, so a
// snapshot with very few particles still yields an ensemble whose increment
// noise averages out of the regression.
Mat replicate_rows(const Mat& pts, int min_rows) {
    const int n = static_cast<int>(pts.rows());
    if (n >= min_rows) return pts;
    const int reps = (min_rows + n - 1) / n;
    Mat out(static_cast<Eigen::Index>(n) * reps, pts.cols());
    for (int r = 0; r < reps; ++r) out.middleRows(static_cast<Eigen::Index>(r) * n, n) = pts;
    return out;
}

// Learned drift = reference + fitted correction. The regression shrinks its
// output toward a zero prior mean, so fitting corrections rather than raw
// increment rates makes scarce or noisy data fall back to the reference
// instead of flattening the field toward zero; a reference that already
// solves the bridge is then a near-fixed point of the alternation. Backward
// fields take local reversed time s and the reference sits at physical time
// t_b - s.
class ResidualDrift final : public DriftField {
  public:
    ResidualDrift(std::shared_ptr<const DriftField> ref, std::shared_ptr<const DriftField> corr,
                  bool reversed, double t_b)
        : ref_(std::move(ref)), corr_(std::move(corr)), reversed_(reversed), t_b_(t_b) {}

    int dim() const override { return corr_->dim(); }
    Mat eval(const Mat& X, double t) const override {
        return ref_->eval(X, reversed_ ? t_b_ - t : t) + corr_->eval(X, t);
    }

  private:
    std::shared_ptr<const DriftField> ref_;
    std::shared_ptr<const DriftField> corr_;
    bool reversed_;
    double t_b_;
};

}  // namespace

std::vector<int> greedy_match(const Mat& endpoints, const Mat& targets) {
    if (endpoints.cols() != targets.cols())
        throw std::invalid_argument("endpoints and targets disagree on dimension");
    const int ne = static_cast<int>(endpoints.rows());
    const int nt = static_cast<int>(targets.rows());
    if (ne < 1 || nt < 1) throw std::invalid_argument("empty match inputs");

    Mat D = pairwise_sqdist(endpoints, targets);
    std::vector<std::pair<int, int>> pairs;
    pairs.reserve(static_cast<std::size_t>(ne) * static_cast<std::size_t>(nt));
    for (int i = 0; i < ne; ++i)
        for (int j = 0; j < nt; ++j) pairs.emplace_back(i, j);
    std::stable_sort(pairs.begin(), pairs.end(),
                     [&](const auto& p, const auto& q) { return D(p.first, p.second) < D(q.first, q.second); });

    std::vector<int> match(static_cast<std::size_t>(ne), -1);
    std::vector<char> target_used(static_cast<std::size_t>(nt), 0);
    int assigned = 0;
    const int quota = std::min(ne, nt);
    for (const auto& [i, j] : pairs) {
        if (assigned == quota) break;
        if (match[static_cast<std::size_t>(i)] >= 0 || target_used[static_cast<std::size_t>(j)]) continue;
        match[static_cast<std::size_t>(i)] = j;
        target_used[static_cast<std::size_t>(j)] = 1;
        ++assigned;
    }
    // leftover endpoints (ne > nt): nearest target, reuse allowed
    for (int i = 0; i < ne; ++i) {
        if (match[static_cast<std::size_t>(i)] >= 0) continue;
        int best = 0;
        for (int j = 1; j < nt; ++j)
            if (D(i, j) < D(i, best)) best = j;
        match[static_cast<std::size_t>(i)] = best;
    }
    return match;
}

PairDrifts forward_backward_sb(const Snapshot& snap_a, const Snapshot& snap_b, double t_a,
                               double t_b, std::shared_ptr<const DriftField> ref_drift,
                               double gamma, double dt, const SolverConfig& cfg,
                               const rng::Key& key) {
    if (!ref_drift) throw std::invalid_argument("null reference drift");
    if (snap_a.count() < 1 || snap_b.count() < 1) throw std::invalid_argument("empty snapshot");
    if (snap_a.dim() != snap_b.dim()) throw std::invalid_argument("snapshots disagree on dimension");
    if (!(t_a < t_b)) throw std::invalid_argument("need t_a < t_b");
    if (cfg.ipml_iters < 1) throw std::invalid_argument("need at least one iteration");

    // same step-count rule as TimeGrid segments
    const int L = TimeGrid({t_a, t_b}, dt, false).segment_steps(0);
    const int d = snap_a.dim();
    const double span = t_b - t_a;
    const DriftField& ref = *ref_drift;

    const Mat starts_a = replicate_rows(snap_a.points, cfg.min_sim_paths);
    const Mat starts_b = replicate_rows(snap_b.points, cfg.min_sim_paths);
    const int npa = static_cast<int>(starts_a.rows());
    const int npb = static_cast<int>(starts_b.rows());

    // Increment rates are drift observations corrupted by the diffusion,
    // variance gamma/dt per coordinate; that enters the fit as observation
    // noise on top of the configured conditioning ridge. Without it the
    // regression interpolates the noise and the alternation amplifies it.
    RegressorConfig rcfg = cfg.regressor;
    rcfg.ridge = cfg.regressor.ridge + gamma / dt;

    std::shared_ptr<const DriftField> fwd = ref_drift;
    std::shared_ptr<const DriftField> bwd;

    for (int it = 0; it < cfg.ipml_iters; ++it) {
        const rng::Key kit = key.child(static_cast<std::uint64_t>(it));

        // (a) forward simulation from snap_a
        auto paths = simulate_forward_ensemble(*fwd, starts_a, t_a, L, dt, gamma,
                                               kit.child(kSimForward));

        // (b) re-anchor endpoints to snap_b, fit backward drift on reversed increments
        {
            auto match = greedy_match(paths[static_cast<std::size_t>(L)], snap_b.points);
            const Mat pre = paths[static_cast<std::size_t>(L)];
            Mat anchored(npa, d);
            for (int i = 0; i < npa; ++i) anchored.row(i) = snap_b.points.row(match[static_cast<std::size_t>(i)]);
            paths[static_cast<std::size_t>(L)] = anchored;

            // row (m, i): input z_m = paths[L-m] row i at reversed time m*dt,
            // target (z_m - z_{m+1})/dt, the later-minus-earlier increment
            // rate, minus the reference at the matching physical time. The
            // anchor row splits its increment: the simulated last step stays
            // a per-dt rate (dynamics), while the match displacement enters
            // per unit of segment span. The displacement is the transport the
            // whole segment missed, and per-span it equals the endpoint score
            // pull of a Brownian bridge; per-dt it would overshoot by orders
            // of magnitude once the kernel smears it beyond the last step.
            Mat X(static_cast<Eigen::Index>(npa) * L, d), Y(static_cast<Eigen::Index>(npa) * L, d);
            Vec tin(static_cast<Eigen::Index>(npa) * L);
            for (int m = 0; m < L; ++m) {
                const Mat& zm = paths[static_cast<std::size_t>(L - m)];
                const Mat& zm1 = paths[static_cast<std::size_t>(L - m - 1)];
                X.middleRows(static_cast<Eigen::Index>(m) * npa, npa) = zm;
                Y.middleRows(static_cast<Eigen::Index>(m) * npa, npa) =
                    (zm - zm1) / dt - ref.eval(zm, t_b - m * dt);
                tin.segment(static_cast<Eigen::Index>(m) * npa, npa).setConstant(m * dt);
            }
            Y.topRows(npa) = (pre - paths[static_cast<std::size_t>(L - 1)]) / dt +
                             (anchored - pre) / span - ref.eval(anchored, t_b);
            rng::Stream sub(kit.child(kSubsampleBackward));
            auto rows = subsample_rows(static_cast<int>(X.rows()), cfg.max_fit_points, sub);
            FitData fit = take_rows(X, tin, Y, rows);
            rng::Stream reg(kit.child(kRegressBackward));
            auto corr = drift_regression(fit.X, fit.t, fit.Y, 0.0, span, rcfg, reg);
            bwd = std::make_shared<ResidualDrift>(ref_drift, corr, true, t_b);
        }

        // (c) backward simulation from snap_b
        auto bpaths = simulate_backward_ensemble(*bwd, starts_b, t_b, L, dt, gamma,
                                                 kit.child(kSimBackward));

        // (d) re-anchor to snap_a, fit forward drift on forward increments
        {
            auto match = greedy_match(bpaths[static_cast<std::size_t>(L)], snap_a.points);
            Mat anchored(npb, d);
            for (int i = 0; i < npb; ++i) anchored.row(i) = snap_a.points.row(match[static_cast<std::size_t>(i)]);
            bpaths[static_cast<std::size_t>(L)] = anchored;

            // ascending physical time: y_m = bpaths[L-m] at t_b - (L-m)*dt
            Mat X(static_cast<Eigen::Index>(npb) * L, d), Y(static_cast<Eigen::Index>(npb) * L, d);
            Vec tin(static_cast<Eigen::Index>(npb) * L);
            for (int m = 0; m < L; ++m) {
                const Mat& ym = bpaths[static_cast<std::size_t>(L - m)];
                const Mat& ym1 = bpaths[static_cast<std::size_t>(L - m - 1)];
                const double t_phys = t_b - (L - m) * dt;
                X.middleRows(static_cast<Eigen::Index>(m) * npb, npb) = ym;
                Y.middleRows(static_cast<Eigen::Index>(m) * npb, npb) =
                    (ym1 - ym) / dt - ref.eval(ym, t_phys);
                tin.segment(static_cast<Eigen::Index>(m) * npb, npb).setConstant(t_phys);
            }
            rng::Stream sub(kit.child(kSubsampleForward));
            auto rows = subsample_rows(static_cast<int>(X.rows()), cfg.max_fit_points, sub);
            FitData fit = take_rows(X, tin, Y, rows);
            rng::Stream reg(kit.child(kRegressForward));
            auto corr = drift_regression(fit.X, fit.t, fit.Y, t_a, t_b, rcfg, reg);
            fwd = std::make_shared<ResidualDrift>(ref_drift, corr, false, t_b);
        }
    }

    return PairDrifts{fwd, bwd};
}

MultiMarginalDrifts multi_marginal_sb(const SnapshotDataset& data,
                                      std::shared_ptr<const DriftField> ref_drift,
                                      const SolverConfig& cfg, const rng::Key& key) {
    data.validate();
    if (data.grid.n_times() < 2) throw std::invalid_argument("need at least two snapshots");

    std::vector<std::shared_ptr<const DriftField>> fsegs, bsegs;
    for (int i = 0; i < data.grid.n_segments(); ++i) {
        PairDrifts pair = forward_backward_sb(
            data.snapshots[static_cast<std::size_t>(i)], data.snapshots[static_cast<std::size_t>(i) + 1],
            data.grid.time(i), data.grid.time(i + 1), ref_drift, data.gamma, data.grid.dt(), cfg,
            key.child(static_cast<std::uint64_t>(i)));
        fsegs.push_back(pair.forward);
        bsegs.push_back(pair.backward);
    }
    return MultiMarginalDrifts{
        std::make_shared<PiecewiseDrift>(PiecewiseDrift::Direction::forward, data.grid, fsegs),
        std::make_shared<PiecewiseDrift>(PiecewiseDrift::Direction::backward, data.grid, bsegs)};
}

}  // namespace sbridge
