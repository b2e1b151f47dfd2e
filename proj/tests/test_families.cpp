#include <doctest.h>

#include <cmath>
#include <vector>

#include "sbridge/families.hpp"
#include "sbridge/sde.hpp"

using namespace sbridge;

namespace {

ParamVector make_params(Family f, std::initializer_list<double> vals) {
    ParamVector p;
    p.family = f;
    p.values = Vec(static_cast<Eigen::Index>(vals.size()));
    int i = 0;
    for (double v : vals) p.values(i++) = v;
    return p;
}

Mat row2(double a, double b) {
    Mat m(1, 2);
    m << a, b;
    return m;
}

// independent finite-difference gradient of the loss
Vec fd_gradient(const ParamVector& theta, const std::vector<Trajectory>& trajs, double gamma,
                const std::vector<int>& coords) {
    Vec g = Vec::Zero(theta.values.size());
    for (int c : coords) {
        const double h = 1e-5 * std::max(1.0, std::abs(theta.values(c)));
        ParamVector lo = theta, hi = theta;
        lo.values(c) -= h;
        hi.values(c) += h;
        g(c) = (second_projection_loss(hi, trajs, gamma) - second_projection_loss(lo, trajs, gamma)) /
               (2.0 * h);
    }
    return g;
}

void check_gradient(const ParamVector& theta, const std::vector<Trajectory>& trajs, double gamma,
                    const std::vector<int>& coords) {
    auto [loss, grad] = loss_and_grad(theta, trajs, gamma);
    CHECK(std::isfinite(loss));
    Vec fd = fd_gradient(theta, trajs, gamma, coords);
    for (int c : coords) {
        const double scale = std::max({std::abs(grad(c)), std::abs(fd(c)), 1.0});
        CHECK(std::abs(grad(c) - fd(c)) <= doctest::Approx(1e-4 * scale).epsilon(0));
    }
}

// noisy but reproducible synthetic trajectories, no family structure
std::vector<Trajectory> random_trajs(int n_traj, int steps, int d, std::uint64_t seed,
                                     double spread = 1.0) {
    std::vector<Trajectory> out;
    rng::Stream rs(rng::master(seed).child(0));
    for (int i = 0; i < n_traj; ++i) {
        Trajectory tr;
        tr.start_time = 0.0;
        tr.dt = 0.01;
        tr.states = Mat(steps + 1, d);
        for (int j = 0; j <= steps; ++j)
            for (int c = 0; c < d; ++c) tr.states(j, c) = spread * rs.normal();
        out.push_back(std::move(tr));
    }
    return out;
}

}  // namespace

TEST_CASE("family names round-trip") {
    for (Family f : {Family::zero, Family::lotka_volterra, Family::repressilator, Family::vortex,
                     Family::gradient_field}) {
        CHECK(family_from_name(family_name(f)) == f);
    }
    CHECK_THROWS_AS(family_from_name("nope"), std::invalid_argument);
}

TEST_CASE("lotka-volterra drift hand evaluation") {
    auto p = make_params(Family::lotka_volterra, {1.0, 0.4, 0.1, 0.4});
    Mat b = eval_drift(p, row2(5.0, 4.0));
    // (1*5 - 0.4*5*4, 0.1*5*4 - 0.4*4) = (-3.0, 0.4)
    CHECK(b(0, 0) == doctest::Approx(-3.0).epsilon(1e-14));
    CHECK(b(0, 1) == doctest::Approx(0.4).epsilon(1e-14));
}

TEST_CASE("repressilator drift hand evaluation") {
    auto p = make_params(Family::repressilator, {10.0, 3.0, 1.0, 1.0});
    Mat x(1, 3);
    x << 1.0, 1.0, 2.0;
    Mat b = eval_drift(p, x);
    CHECK(b(0, 0) == doctest::Approx(10.0 / 9.0 - 1.0).epsilon(1e-12));  // represses via x3 = 2
    CHECK(b(0, 1) == doctest::Approx(4.0).epsilon(1e-12));               // via x1 = 1
    CHECK(b(0, 2) == doctest::Approx(3.0).epsilon(1e-12));               // via x2 = 1
}

TEST_CASE("vortex drift vanishes at its center and is divergence-free") {
    auto p = make_params(Family::vortex, {0.7, -0.3, 1.4, 0.5});
    Mat b = eval_drift(p, row2(0.7, -0.3));
    CHECK(b(0, 0) == 0.0);
    CHECK(b(0, 1) == 0.0);

    rng::Stream rs(rng::master(17).child(0));
    const double h = 1e-5;
    for (int trial = 0; trial < 20; ++trial) {
        const double x = 3.0 * rs.normal(), y = 3.0 * rs.normal();
        const double dbx_dx =
            (eval_drift(p, row2(x + h, y))(0, 0) - eval_drift(p, row2(x - h, y))(0, 0)) / (2 * h);
        const double dby_dy =
            (eval_drift(p, row2(x, y + h))(0, 1) - eval_drift(p, row2(x, y - h))(0, 1)) / (2 * h);
        CHECK(std::abs(dbx_dx + dby_dy) <= 1e-8);
    }
}

TEST_CASE("gradient-field drift has a symmetric jacobian in 2-D") {
    rng::Stream init(rng::master(23).child(0));
    ParamVector p = gradient_field_init(2, init);
    CHECK(p.values.size() == family_param_count(Family::gradient_field, 2));

    rng::Stream rs(rng::master(23).child(1));
    const double h = 1e-6;
    for (int trial = 0; trial < 10; ++trial) {
        const double x = rs.normal(), y = rs.normal();
        const double db0_dy =
            (eval_drift(p, row2(x, y + h))(0, 0) - eval_drift(p, row2(x, y - h))(0, 0)) / (2 * h);
        const double db1_dx =
            (eval_drift(p, row2(x + h, y))(0, 1) - eval_drift(p, row2(x - h, y))(0, 1)) / (2 * h);
        CHECK(std::abs(db0_dy - db1_dx) <= 1e-4 * std::max({1.0, std::abs(db0_dy), std::abs(db1_dx)}));
    }
}

TEST_CASE("gradient-field init respects the fan-in bound and the seed") {
    rng::Stream a(rng::master(5).child(0)), b(rng::master(5).child(0));
    ParamVector pa = gradient_field_init(3, a), pb = gradient_field_init(3, b);
    CHECK(pa.values == pb.values);
    // first block is the input layer, fan_in = 3
    const double bound1 = 1.0 / std::sqrt(3.0);
    for (int i = 0; i < 128 * 3; ++i) CHECK(std::abs(pa.values(i)) <= bound1);
}

TEST_CASE("dimension mismatches are rejected") {
    auto p = make_params(Family::lotka_volterra, {1.0, 0.4, 0.1, 0.4});
    Mat x(1, 3);
    x.setZero();
    CHECK_THROWS_AS(eval_drift(p, x), std::invalid_argument);
    ParamVector bad = p;
    bad.values = Vec::Zero(3);
    CHECK_THROWS_AS(eval_drift(bad, row2(0, 0)), std::invalid_argument);
}

TEST_CASE("loss is zero on noiseless data from the generating parameters") {
    auto theta = make_params(Family::lotka_volterra, {1.0, 0.4, 0.1, 0.4});
    FamilyDrift drift(theta, 2);
    std::vector<Trajectory> trajs;
    rng::Stream rs(rng::master(3).child(0));
    for (int i = 0; i < 5; ++i) {
        Vec x0(2);
        x0 << 5.0 + 0.1 * rs.uniform(), 4.0 + 0.1 * rs.uniform();
        trajs.push_back(simulate_forward(drift, x0, 0.0, 200, 0.01, 0.0, rs));
    }
    CHECK(second_projection_loss(theta, trajs, 0.1) < 1e-20);
}

TEST_CASE("loss is zero for constant trajectories under the zero family") {
    Trajectory tr;
    tr.start_time = 0.0;
    tr.dt = 0.01;
    tr.states = Mat::Ones(50, 2) * 3.25;
    ParamVector z;
    z.family = Family::zero;
    CHECK(second_projection_loss(z, {tr, tr}, 0.1) == 0.0);
}

TEST_CASE("loss matches a brute-force double loop") {
    auto theta = make_params(Family::vortex, {0.1, -0.2, 0.8, 0.3});
    auto trajs = random_trajs(3, 7, 2, 101);
    const double gamma = 0.2;

    double expected = 0.0;
    int steps = 0;
    for (const auto& tr : trajs) {
        for (int j = 0; j + 1 < tr.length(); ++j) {
            Mat row = tr.states.row(j);
            Mat b = eval_drift(theta, row);
            double sq = 0.0;
            for (int c = 0; c < 2; ++c) {
                const double r = tr.states(j + 1, c) - tr.states(j, c) - b(0, c) * tr.dt;
                sq += r * r;
            }
            expected += sq / (2.0 * gamma * tr.dt);
            ++steps;
        }
    }
    expected /= steps;
    CHECK(second_projection_loss(theta, trajs, gamma) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("analytic gradients match finite differences") {
    SUBCASE("lotka-volterra") {
        auto theta = make_params(Family::lotka_volterra, {0.9, 0.5, 0.2, 0.3});
        auto trajs = random_trajs(4, 25, 2, 7, 2.0);
        check_gradient(theta, trajs, 0.1, {0, 1, 2, 3});
    }
    SUBCASE("repressilator") {
        auto theta = make_params(Family::repressilator, {3.0, 2.0, 0.8, 0.6});
        auto trajs = random_trajs(4, 25, 3, 8, 1.5);
        check_gradient(theta, trajs, 0.1, {0, 1, 2, 3});
    }
    SUBCASE("vortex") {
        auto theta = make_params(Family::vortex, {0.2, -0.4, 1.1, 0.25});
        auto trajs = random_trajs(4, 25, 2, 9, 2.0);
        check_gradient(theta, trajs, 0.1, {0, 1, 2, 3});
    }
    SUBCASE("gradient-field, spot-checked coordinates") {
        rng::Stream init(rng::master(41).child(0));
        ParamVector theta = gradient_field_init(2, init);
        auto trajs = random_trajs(2, 10, 2, 10);
        // a spread of coordinates from every weight block
        std::vector<int> coords;
        const int total = static_cast<int>(theta.values.size());
        for (int c = 0; c < total; c += total / 97) coords.push_back(c);
        coords.push_back(total - 1);  // final bias
        check_gradient(theta, trajs, 0.1, coords);
    }
}

TEST_CASE("fit recovers lotka-volterra parameters from noiseless paths") {
    auto star = make_params(Family::lotka_volterra, {1.0, 0.4, 0.1, 0.4});
    FamilyDrift drift(star, 2);
    std::vector<Trajectory> trajs;
    rng::Stream rs(rng::master(13).child(0));
    for (int i = 0; i < 20; ++i) {
        Vec x0(2);
        x0 << 5.0 + rs.uniform(), 4.0 + rs.uniform();
        trajs.push_back(simulate_forward(drift, x0, 0.0, 300, 0.01, 0.0, rs));
    }
    ParamVector init = star;
    init.values.array() += 0.1;
    FitOptions opt;
    opt.lr = 0.2;
    opt.epochs = 8000;
    auto res = fit_mle(init, trajs, 0.1, opt);
    for (int c = 0; c < 4; ++c)
        CHECK(std::abs(res.theta.values(c) - star.values(c)) <= 0.01 * std::abs(star.values(c)));
}

TEST_CASE("fit drives the vortex scale to zero on constant trajectories") {
    Trajectory tr;
    tr.start_time = 0.0;
    tr.dt = 0.01;
    tr.states = Mat(60, 2);
    rng::Stream rs(rng::master(19).child(0));
    Vec point(2);
    point << rs.normal(), rs.normal();
    for (int j = 0; j < 60; ++j) tr.states.row(j) = point.transpose();
    std::vector<Trajectory> trajs(8, tr);
    for (auto& t : trajs) {
        t.states.row(0) << rs.normal(), rs.normal();
        for (int j = 1; j < 60; ++j) t.states.row(j) = t.states.row(0);
    }

    auto init = make_params(Family::vortex, {0.0, 0.0, 0.5, 0.0});
    FitOptions opt;
    opt.lr = 0.05;
    opt.epochs = 800;
    auto res = fit_mle(init, trajs, 0.1, opt);
    CHECK(std::abs(res.theta.values(2)) < 0.05);
}

TEST_CASE("loss trace is non-increasing even with an oversized step") {
    auto theta = make_params(Family::lotka_volterra, {0.5, 0.5, 0.5, 0.5});
    auto trajs = random_trajs(3, 40, 2, 21, 3.0);
    FitOptions opt;
    opt.lr = 50.0;  // would overshoot without halving
    opt.epochs = 30;
    auto res = fit_mle(theta, trajs, 0.1, opt);
    for (std::size_t i = 1; i < res.loss_trace.size(); ++i)
        CHECK(res.loss_trace[i] <= res.loss_trace[i - 1] + 1e-12);
}

TEST_CASE("repressilator exponent stays positive through fitting") {
    auto star = make_params(Family::repressilator, {10.0, 3.0, 1.0, 1.0});
    FamilyDrift drift(star, 3);
    std::vector<Trajectory> trajs;
    rng::Stream rs(rng::master(29).child(0));
    for (int i = 0; i < 6; ++i) {
        Vec x0(3);
        x0 << 1.0 + rs.uniform(), 1.0 + rs.uniform(), 2.0 + rs.uniform();
        trajs.push_back(simulate_forward(drift, x0, 0.0, 200, 0.01, 0.0, rs));
    }
    auto init = make_params(Family::repressilator, {8.0, 1.5, 0.7, 0.8});
    FitOptions opt;
    opt.lr = 0.05;
    opt.epochs = 300;
    auto res = fit_mle(init, trajs, 0.1, opt);
    CHECK(res.theta.values(1) > 0.0);
    auto before = second_projection_loss(init, trajs, 0.1);
    auto after = second_projection_loss(res.theta, trajs, 0.1);
    CHECK(after <= before);
}

TEST_CASE("fit is deterministic") {
    auto theta = make_params(Family::vortex, {0.1, 0.1, 0.3, 0.1});
    auto trajs = random_trajs(3, 30, 2, 33);
    FitOptions opt;
    auto a = fit_mle(theta, trajs, 0.1, opt);
    auto b = fit_mle(theta, trajs, 0.1, opt);
    CHECK(a.theta.values == b.theta.values);
}

TEST_CASE("neutral inits") {
    Mat pts(4, 2);
    pts << 0, 0, 2, 0, 2, 4, 0, 4;  // centroid (1, 2)
    auto key = rng::master(9).child(rng::tag::family_init);

    auto lv = neutral_init(Family::lotka_volterra, 2, pts, key);
    CHECK(lv.values.size() == 4);
    for (int c = 0; c < 4; ++c) CHECK(lv.values(c) == 0.1);

    auto rep = neutral_init(Family::repressilator, 3, pts, key);
    for (int c = 0; c < 4; ++c) CHECK(rep.values(c) == 0.1);

    auto vx = neutral_init(Family::vortex, 2, pts, key);
    CHECK(vx.values(0) == doctest::Approx(1.0));
    CHECK(vx.values(1) == doctest::Approx(2.0));
    CHECK(vx.values(2) == 0.0);
    CHECK(vx.values(3) == 0.0);

    auto gf = neutral_init(Family::gradient_field, 2, pts, key);
    CHECK(gf.values.size() == family_param_count(Family::gradient_field, 2));
    auto gf2 = neutral_init(Family::gradient_field, 2, pts, key);
    CHECK(gf.values == gf2.values);

    auto zero = neutral_init(Family::zero, 2, pts, key);
    CHECK(zero.values.size() == 0);
}
