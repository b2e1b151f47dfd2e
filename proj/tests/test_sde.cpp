#include <doctest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "sbridge/sde.hpp"

using namespace sbridge;

namespace {

// 1-D linear contraction drift b(x) = -x, used for the closed-form Euler
// recursion x_{j+1} = (1 - dt) x_j.
class NegateDrift final : public DriftField {
  public:
    int dim() const override { return 1; }
    Mat eval(const Mat& X, double) const override { return -X; }
};

// Echoes the evaluation time in the first coordinate; makes time conventions
// observable in tests.
class TimeEchoDrift final : public DriftField {
  public:
    explicit TimeEchoDrift(int d) : d_(d) {}
    int dim() const override { return d_; }
    Mat eval(const Mat& X, double t) const override {
        Mat out = Mat::Zero(X.rows(), d_);
        out.col(0).setConstant(t);
        return out;
    }

  private:
    int d_;
};

class ExplodingDrift final : public DriftField {
  public:
    int dim() const override { return 1; }
    Mat eval(const Mat& X, double) const override { return 1e6 * X; }
};

Vec vec2(double a, double b) {
    Vec v(2);
    v << a, b;
    return v;
}

}  // namespace

TEST_CASE("time grid step counts") {
    TimeGrid g({0.0, 1.0, 2.0}, 0.01);
    CHECK(g.n_segments() == 2);
    CHECK(g.segment_steps(0) == 100);
    CHECK(g.segment_steps(1) == 100);
    CHECK(g.total_steps() == 200);
    CHECK(g.steps_before(1) == 100);

    // gap below dt still gets one step
    TimeGrid tiny({0.0, 0.005}, 0.01);
    CHECK(tiny.segment_steps(0) == 1);

    // accumulated float error must not drop a step
    TimeGrid fp({0.0, 0.3}, 0.1);
    CHECK(fp.segment_steps(0) == 3);
}

TEST_CASE("time grid rejects malformed input") {
    CHECK_THROWS_AS(TimeGrid({0.0, 1.0, 1.0}, 0.01), std::invalid_argument);
    CHECK_THROWS_AS(TimeGrid({0.0, 2.0, 1.0}, 0.01), std::invalid_argument);
    CHECK_THROWS_AS(TimeGrid({1.0, 2.0}, 0.01), std::invalid_argument);
    CHECK_THROWS_AS(TimeGrid({0.0, 1.0}, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(TimeGrid({0.0, std::nan("")}, 0.01), std::invalid_argument);
    CHECK_NOTHROW(TimeGrid({1.0, 2.0}, 0.01, /*require_zero_start=*/false));
}

TEST_CASE("forward simulation with zero dynamics holds still") {
    ZeroDrift z(2);
    rng::Stream rs(rng::master(0).child(1));
    auto tr = simulate_forward(z, vec2(2.0, 7.0), 0.0, 100, 0.01, 0.0, rs);
    REQUIRE(tr.length() == 101);
    for (int j = 0; j < tr.length(); ++j) {
        CHECK(tr.states(j, 0) == 2.0);
        CHECK(tr.states(j, 1) == 7.0);
    }
}

TEST_CASE("forward simulation integrates constant drift exactly") {
    ConstantDrift c(vec2(1.0, 0.0));
    rng::Stream rs(rng::master(0).child(2));
    auto tr = simulate_forward(c, vec2(0.0, 0.0), 0.0, 100, 0.01, 0.0, rs);
    CHECK(tr.states(100, 0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(tr.states(100, 1) == 0.0);
}

TEST_CASE("forward simulation matches the closed-form Euler recursion") {
    NegateDrift d;
    rng::Stream rs(rng::master(0).child(3));
    Vec x0(1);
    x0 << 1.0;
    auto tr = simulate_forward(d, x0, 0.0, 100, 0.01, 0.0, rs);
    const double closed_form = std::pow(0.99, 100);  // ~0.36603
    CHECK(tr.states(100, 0) == doctest::Approx(closed_form).epsilon(1e-12));
    // weak Euler consistency against exp(-T), T = 1
    CHECK(std::abs(tr.states(100, 0) - std::exp(-1.0)) <= 2.0 * 0.01);
}

TEST_CASE("forward simulation is deterministic given the stream key") {
    ZeroDrift z(3);
    Vec x0 = Vec::Zero(3);
    rng::Stream a(rng::master(11).child(4)), b(rng::master(11).child(4));
    auto t1 = simulate_forward(z, x0, 0.0, 50, 0.01, 0.1, a);
    auto t2 = simulate_forward(z, x0, 0.0, 50, 0.01, 0.1, b);
    CHECK(t1.states == t2.states);
}

TEST_CASE("divergence guard reports the step") {
    ExplodingDrift d;
    rng::Stream rs(rng::master(0).child(5));
    Vec x0(1);
    x0 << 1.0;
    bool threw = false;
    try {
        simulate_forward(d, x0, 0.0, 50, 0.01, 0.0, rs);
    } catch (const SimulationDiverged& e) {
        threw = true;
        CHECK(e.step() >= 1);
        CHECK(e.step() <= 50);
    }
    CHECK(threw);
}

TEST_CASE("backward simulation with zero dynamics holds still") {
    ZeroDrift z(2);
    rng::Stream rs(rng::master(0).child(6));
    auto tr = simulate_backward(z, vec2(3.0, -1.0), 2.0, 40, 0.01, 0.0, rs);
    REQUIRE(tr.length() == 41);
    for (int j = 0; j < tr.length(); ++j) {
        CHECK(tr.states(j, 0) == 3.0);
        CHECK(tr.states(j, 1) == -1.0);
    }
}

TEST_CASE("backward constant drift recursion reaches the origin") {
    ConstantDrift c(vec2(1.0, 0.0));
    rng::Stream rs(rng::master(0).child(7));
    auto tr = simulate_backward(c, vec2(1.0, 0.0), 1.0, 100, 0.01, 0.0, rs);
    REQUIRE(tr.length() == 101);
    // earliest physical state is row 0
    CHECK(std::abs(tr.states(0, 0)) < 1e-12);
    CHECK(tr.states(0, 1) == 0.0);
    // endpoint is preserved exactly and ordering is increasing physical time
    CHECK(tr.states(100, 0) == 1.0);
    CHECK(std::abs(tr.start_time) < 1e-12);
}

TEST_CASE("backward simulation with zero steps is the endpoint alone") {
    ZeroDrift z(2);
    rng::Stream rs(rng::master(0).child(8));
    auto tr = simulate_backward(z, vec2(5.0, 6.0), 1.5, 0, 0.01, 0.1, rs);
    REQUIRE(tr.length() == 1);
    CHECK(tr.states(0, 0) == 5.0);
    CHECK(tr.states(0, 1) == 6.0);
    CHECK(tr.start_time == 1.5);
}

TEST_CASE("backward drift sees reversed-time coordinates") {
    // with the time-echo drift, step j uses drift value rev_t0 + j*dt in
    // coordinate 0, so the first backward step from t_end uses 0, not t_end
    TimeEchoDrift d(1);
    rng::Stream rs(rng::master(0).child(9));
    Vec xe(1);
    xe << 0.0;
    auto tr = simulate_backward(d, xe, 1.0, 2, 0.5, 0.0, rs);
    // simulation order: y1 = 0 - 0*0.5 = 0; y2 = 0 - 0.5*0.5 = -0.25
    CHECK(tr.states(2, 0) == 0.0);
    CHECK(tr.states(1, 0) == 0.0);
    CHECK(tr.states(0, 0) == doctest::Approx(-0.25));
}

TEST_CASE("ensembles are bit-identical to per-row single simulations") {
    ConstantDrift c(vec2(0.3, -0.2));
    Mat X0(4, 2);
    X0 << 0, 0, 1, 1, -1, 2, 0.5, 0.5;
    auto key = rng::master(77).child(10);
    auto paths = simulate_forward_ensemble(c, X0, 0.0, 30, 0.01, 0.2, key);
    REQUIRE(paths.size() == 31);
    for (int p = 0; p < 4; ++p) {
        rng::Stream rs(key.child(p));
        auto tr = simulate_forward(c, X0.row(p).transpose(), 0.0, 30, 0.01, 0.2, rs);
        for (int j = 0; j <= 30; ++j) {
            CHECK(paths[j](p, 0) == tr.states(j, 0));
            CHECK(paths[j](p, 1) == tr.states(j, 1));
        }
    }
    auto bkey = rng::master(78).child(11);
    auto bpaths = simulate_backward_ensemble(c, X0, 1.0, 30, 0.01, 0.2, bkey);
    for (int p = 0; p < 4; ++p) {
        rng::Stream rs(bkey.child(p));
        auto tr = simulate_backward(c, X0.row(p).transpose(), 1.0, 30, 0.01, 0.2, rs);
        for (int j = 0; j <= 30; ++j) {
            // bpaths[j] is in simulation order; trajectory rows are physical order
            CHECK(bpaths[j](p, 0) == tr.states(30 - j, 0));
            CHECK(bpaths[j](p, 1) == tr.states(30 - j, 1));
        }
    }
}

TEST_CASE("brownian diffusion law at horizon T") {
    const double gamma = 0.1, T = 1.0, dt = 0.01;
    ZeroDrift z(2);
    const int n = 10000;
    Mat X0 = Mat::Zero(n, 2);
    auto paths = simulate_forward_ensemble(z, X0, 0.0, 100, dt, gamma, rng::master(5).child(12));
    const Mat& end = paths.back();
    for (int c = 0; c < 2; ++c) {
        double mean = end.col(c).mean();
        double var = (end.col(c).array() - mean).square().sum() / (n - 1);
        CHECK(var == doctest::Approx(gamma * T).epsilon(0.05));
    }
}

namespace {

PiecewiseDrift make_piecewise_const(PiecewiseDrift::Direction dir, const TimeGrid& g,
                                    std::vector<Vec> consts) {
    std::vector<std::shared_ptr<const DriftField>> segs;
    for (auto& c : consts) segs.push_back(std::make_shared<ConstantDrift>(c));
    return PiecewiseDrift(dir, g, std::move(segs));
}

}  // namespace

TEST_CASE("piecewise forward dispatch uses half-open segments, last closed") {
    TimeGrid g({0.0, 1.0, 2.0}, 0.01);
    auto pw = make_piecewise_const(PiecewiseDrift::Direction::forward, g,
                                   {vec2(1.0, 0.0), vec2(0.0, 1.0)});
    Mat X = Mat::Zero(1, 2);
    CHECK(pw.eval(X, 0.5)(0, 0) == 1.0);
    CHECK(pw.eval(X, 1.0)(0, 1) == 1.0);  // boundary belongs to the right segment
    CHECK(pw.eval(X, 2.0)(0, 1) == 1.0);  // last segment closed
    CHECK(pw.eval(X, 2.7)(0, 1) == 1.0);  // clamps above
    CHECK(pw.eval(X, -0.3)(0, 0) == 1.0);  // clamps below
}

TEST_CASE("piecewise backward dispatch converts global to local reversed time") {
    TimeGrid g({0.0, 1.0, 2.0}, 0.01);
    std::vector<std::shared_ptr<const DriftField>> segs = {std::make_shared<TimeEchoDrift>(1),
                                                           std::make_shared<TimeEchoDrift>(1)};
    PiecewiseDrift pw(PiecewiseDrift::Direction::backward, g, std::move(segs));
    Mat X = Mat::Zero(1, 1);
    // u = 0.3: physical t = 1.7, inside pair (1,2): local s = 2 - 1.7 = 0.3
    CHECK(pw.eval(X, 0.3)(0, 0) == doctest::Approx(0.3));
    // u = 1.25: physical t = 0.75, pair (0,1): local s = 1 - 0.75 = 0.25
    CHECK(pw.eval(X, 1.25)(0, 0) == doctest::Approx(0.25));
    // u = 1.0 is the shared boundary; it belongs to the earlier pair with s = 0
    CHECK(pw.eval(X, 1.0)(0, 0) == doctest::Approx(0.0));
}

TEST_CASE("concat from the first time is pure forward with full length") {
    TimeGrid g({0.0, 1.0, 2.0}, 0.01);
    auto fwd = make_piecewise_const(PiecewiseDrift::Direction::forward, g,
                                    {vec2(0.0, 0.0), vec2(0.0, 0.0)});
    auto bwd = make_piecewise_const(PiecewiseDrift::Direction::backward, g,
                                    {vec2(0.0, 0.0), vec2(0.0, 0.0)});
    auto tr = concat_full_trajectory(fwd, bwd, vec2(3.0, 3.0), 0, g, 0.0, rng::master(1).child(0));
    CHECK(tr.length() == 201);
    CHECK(tr.anchor_row == 0);
    CHECK(tr.start_time == 0.0);
}

TEST_CASE("concat with zero drifts and no noise stays at the observation") {
    TimeGrid g({0.0, 1.0, 2.0}, 0.01);
    auto fwd = make_piecewise_const(PiecewiseDrift::Direction::forward, g,
                                    {vec2(0.0, 0.0), vec2(0.0, 0.0)});
    auto bwd = make_piecewise_const(PiecewiseDrift::Direction::backward, g,
                                    {vec2(0.0, 0.0), vec2(0.0, 0.0)});
    auto tr = concat_full_trajectory(fwd, bwd, vec2(3.0, 3.0), 1, g, 0.0, rng::master(1).child(1));
    REQUIRE(tr.length() == 201);
    CHECK(tr.anchor_row == 100);
    for (int j = 0; j < tr.length(); ++j) {
        CHECK(tr.states(j, 0) == 3.0);
        CHECK(tr.states(j, 1) == 3.0);
    }
}

TEST_CASE("concat passes through the observation bit-identically under noise") {
    TimeGrid g({0.0, 1.0, 2.0}, 0.01);
    auto fwd = make_piecewise_const(PiecewiseDrift::Direction::forward, g,
                                    {vec2(0.4, -0.1), vec2(-0.2, 0.6)});
    auto bwd = make_piecewise_const(PiecewiseDrift::Direction::backward, g,
                                    {vec2(0.1, 0.1), vec2(0.3, -0.3)});
    const Vec obs = vec2(0.123456789, -9.87654321);
    auto tr = concat_full_trajectory(fwd, bwd, obs, 1, g, 0.1, rng::master(2).child(3));
    CHECK(tr.states(tr.anchor_row, 0) == obs(0));
    CHECK(tr.states(tr.anchor_row, 1) == obs(1));
    CHECK(tr.time_at(tr.anchor_row) == doctest::Approx(1.0));
    // uniform spacing bookkeeping
    CHECK(tr.start_time == doctest::Approx(1.0 - 100 * 0.01));
}

TEST_CASE("batched concat matches per-row concat bit for bit") {
    TimeGrid g({0.0, 0.5, 1.4}, 0.01);
    auto fwd = make_piecewise_const(PiecewiseDrift::Direction::forward, g,
                                    {vec2(0.4, -0.1), vec2(-0.2, 0.6)});
    auto bwd = make_piecewise_const(PiecewiseDrift::Direction::backward, g,
                                    {vec2(0.1, 0.1), vec2(0.3, -0.3)});
    Mat obs(3, 2);
    obs << 0.0, 0.0, 1.0, -1.0, 0.25, 0.75;
    auto key = rng::master(55).child(7);
    auto batched = concat_full_trajectories(fwd, bwd, obs, 1, g, 0.1, key);
    REQUIRE(batched.size() == 3);
    for (int p = 0; p < 3; ++p) {
        auto single =
            concat_full_trajectory(fwd, bwd, obs.row(p).transpose(), 1, g, 0.1, key.child(p));
        CHECK(batched[p].states == single.states);
        CHECK(batched[p].start_time == single.start_time);
        CHECK(batched[p].anchor_row == single.anchor_row);
    }
}

TEST_CASE("gaussian step log-likelihood closed forms") {
    const double gamma = 0.1, dt = 0.01;
    Vec prev = vec2(0.3, -0.7), drift = vec2(2.0, 1.0);
    Vec next = prev + drift * dt;
    const double at_mean = gaussian_step_loglik(next, prev, drift, dt, gamma);
    CHECK(at_mean == doctest::Approx(-std::log(2.0 * std::numbers::pi * 0.001)).epsilon(1e-12));
    CHECK(at_mean == doctest::Approx(5.0699).epsilon(1e-4));

    // residual with squared norm 2*gamma*dt costs exactly 1
    Vec r = vec2(std::sqrt(2.0 * gamma * dt), 0.0);
    CHECK(gaussian_step_loglik(next + r, prev, drift, dt, gamma) ==
          doctest::Approx(at_mean - 1.0).epsilon(1e-12));
    // symmetric in the residual sign
    CHECK(gaussian_step_loglik(next + r, prev, drift, dt, gamma) ==
          doctest::Approx(gaussian_step_loglik(next - r, prev, drift, dt, gamma)).epsilon(1e-12));

    CHECK_THROWS_AS(gaussian_step_loglik(next, prev, drift, dt, 0.0), std::invalid_argument);
}

TEST_CASE("path log-likelihood matches an independent Gaussian log-pdf sum") {
    const double gamma = 0.25, dt = 0.05;
    rng::Stream rs(rng::master(31).child(0));
    Trajectory tr;
    tr.start_time = 0.2;
    tr.dt = dt;
    tr.states = Mat(6, 2);
    for (int j = 0; j < 6; ++j)
        for (int c = 0; c < 2; ++c) tr.states(j, c) = rs.normal();

    ConstantDrift drift(vec2(0.7, -0.4));

    // independent oracle: sum the normal log-pdf per coordinate by hand
    double expected = 0.0;
    for (int j = 0; j < 5; ++j) {
        for (int c = 0; c < 2; ++c) {
            const double mean = tr.states(j, c) + (c == 0 ? 0.7 : -0.4) * dt;
            const double var = gamma * dt;
            const double z = tr.states(j + 1, c) - mean;
            expected += -0.5 * std::log(2.0 * std::numbers::pi * var) - z * z / (2.0 * var);
        }
    }
    CHECK(path_loglik(tr, drift, gamma) == doctest::Approx(expected).epsilon(1e-12));

    // single-step trajectory reproduces one gaussian_step_loglik term
    Trajectory one;
    one.start_time = 0.0;
    one.dt = dt;
    one.states = tr.states.topRows(2);
    CHECK(path_loglik(one, drift, gamma) ==
          doctest::Approx(gaussian_step_loglik(one.states.row(1).transpose(),
                                               one.states.row(0).transpose(),
                                               drift.eval_at(one.states.row(0).transpose(), 0.0),
                                               dt, gamma))
              .epsilon(1e-12));

    // shifting all states under zero drift leaves the value unchanged
    ZeroDrift z2(2);
    Trajectory shifted = tr;
    shifted.states.array() += 13.5;
    CHECK(path_loglik(shifted, z2, gamma) == doctest::Approx(path_loglik(tr, z2, gamma)).epsilon(1e-12));
}

TEST_CASE("empirical KL closed forms") {
    const double gamma = 0.1, dt = 0.01;
    Trajectory tr;
    tr.start_time = 0.0;
    tr.dt = dt;
    tr.states = Mat::Zero(101, 2);  // horizon exactly 1.0
    std::vector<Trajectory> trajs = {tr, tr};

    ConstantDrift q(vec2(1.0, 0.0));
    ZeroDrift p(2);
    CHECK(empirical_kl(trajs, q, q, gamma) == 0.0);
    // ||(1,0)||^2 * 1.0 / (2*0.1) = 5.0
    CHECK(empirical_kl(trajs, q, p, gamma) == doctest::Approx(5.0).epsilon(1e-12));
    // doubling gamma halves the estimate
    CHECK(empirical_kl(trajs, q, p, 2.0 * gamma) == doctest::Approx(2.5).epsilon(1e-12));
    CHECK(empirical_kl(trajs, q, p, gamma) >= 0.0);
}
