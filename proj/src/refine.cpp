#include "sbridge/refine.hpp"

#include <chrono>
#include <cmath>
#include <sstream>
#include <utility>

#include "sbridge/sde.hpp"

namespace sbridge::refine {

std::vector<Trajectory> impute_trajectories(const SnapshotDataset& data,
                                            const PiecewiseDrift& forward,
                                            const PiecewiseDrift& backward, double gamma,
                                            const rng::Key& key) {
    if (static_cast<int>(data.snapshots.size()) != data.grid.n_times())
        throw std::invalid_argument("need exactly one snapshot per grid time");

    std::vector<Trajectory> out;
    for (int i = 0; i < data.grid.n_times(); ++i) {
        const Snapshot& snap = data.snapshots[static_cast<std::size_t>(i)];
        const rng::Key ki = key.child(static_cast<std::uint64_t>(i));
        try {
            auto batch =
                concat_full_trajectories(forward, backward, snap.points, i, data.grid, gamma, ki);
            for (auto& tr : batch) out.push_back(std::move(tr));
        } catch (const SimulationDiverged&) {
            // replay row by row (bit-identical keys) to name the particle
            for (int p = 0; p < snap.count(); ++p) {
                try {
                    concat_full_trajectory(forward, backward, snap.points.row(p).transpose(), i,
                                           data.grid, gamma,
                                           ki.child(static_cast<std::uint64_t>(p)));
                } catch (const SimulationDiverged& ep) {
                    std::ostringstream os;
                    os << "imputation diverged at snapshot " << i << ", particle " << p << ": "
                       << ep.what();
                    throw SimulationDiverged(ep.step(), os.str());
                }
            }
            throw;
        }
    }
    return out;
}

IRRResult run_irr(const SnapshotDataset& data, const IRRConfig& cfg) {
    if (cfg.iterations < 1) throw std::invalid_argument("refinement needs at least one iteration");
    if (!(cfg.gamma > 0.0) || !std::isfinite(cfg.gamma))
        throw std::invalid_argument("gamma must be positive and finite");
    if (!(cfg.dt > 0.0) || !std::isfinite(cfg.dt))
        throw std::invalid_argument("dt must be positive and finite");

    // inference always runs at the configured volatility and step
    SnapshotDataset idata{TimeGrid(data.grid.times(), cfg.dt, false), data.snapshots, cfg.gamma};
    idata.validate();
    const int d = idata.dim();
    const int fd = family_dim(cfg.family);
    if (cfg.refine && fd != 0 && fd != d)
        throw std::invalid_argument("reference family dimension does not match the data");

    const rng::Key base = rng::master(cfg.seed);
    const rng::Key solver_key = base.child(rng::tag::solver);
    const rng::Key impute_key = base.child(rng::tag::impute);
    const rng::Key init_key = base.child(rng::tag::family_init);

    int total = 0;
    for (const Snapshot& s : idata.snapshots) total += s.count();
    Mat pooled(total, d);
    for (int i = 0, r = 0; i < idata.grid.n_times(); ++i) {
        const Mat& pts = idata.snapshots[static_cast<std::size_t>(i)].points;
        pooled.middleRows(r, static_cast<int>(pts.rows())) = pts;
        r += static_cast<int>(pts.rows());
    }

    const ParamVector theta_zero{Family::zero, Vec()};
    std::shared_ptr<const DriftField> ref = std::make_shared<ZeroDrift>(d);
    ParamVector theta_prev = theta_zero;
    IRRResult res;
    res.history.reserve(static_cast<std::size_t>(cfg.iterations) + 1);

    for (int k = 1; k <= cfg.iterations; ++k) {
        const auto tick = std::chrono::steady_clock::now();
        RefinementState st;
        st.k = k;
        std::vector<Trajectory> trajs;
        try {
            // pass shared ownership: the learned fields embed the reference
            MultiMarginalDrifts mm = multi_marginal_sb(idata, ref, cfg.solver,
                                                       solver_key.child(static_cast<std::uint64_t>(k)));
            st.forward = mm.forward;
            st.backward = mm.backward;
            trajs = impute_trajectories(idata, *mm.forward, *mm.backward, cfg.gamma,
                                        impute_key.child(static_cast<std::uint64_t>(k)));

            if (k == 1) {
                // Brownian-start record, measured on the first imputation
                RefinementState s0;
                s0.theta = theta_zero;
                s0.loss = second_projection_loss(theta_zero, trajs, cfg.gamma);
                s0.kl = empirical_kl(trajs, *mm.forward, ZeroDrift(d), cfg.gamma);
                res.history.push_back(std::move(s0));
            }

            if (cfg.refine) {
                const ParamVector init = (k == 1 || !cfg.warm_start)
                                             ? neutral_init(cfg.family, d, pooled, init_key)
                                             : theta_prev;
                FitResult fit = fit_mle(init, trajs, cfg.gamma, cfg.fit);
                st.theta = fit.theta;
                st.loss = fit.loss_trace.back();
                ref = std::make_shared<FamilyDrift>(st.theta, d);
            } else {
                st.theta = theta_zero;
                st.loss = second_projection_loss(theta_zero, trajs, cfg.gamma);
            }
            st.kl = empirical_kl(trajs, *st.forward, *ref, cfg.gamma);
        } catch (const std::runtime_error& e) {
            std::ostringstream os;
            os << "refinement iteration " << k << " failed: " << e.what();
            throw RefinementAborted(k, std::move(res.history), os.str());
        }
        st.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - tick).count();
        theta_prev = st.theta;
        res.history.push_back(std::move(st));
    }

    res.forward = res.history.back().forward;
    res.backward = res.history.back().backward;
    return res;
}

}  // namespace sbridge::refine
