#include "sbridge/families.hpp"

#include <cmath>
#include <sstream>

namespace sbridge {

namespace {

using Arr = Eigen::ArrayXd;

// gradient_field layer sizes, fixed: dim -> 128 -> 64 -> 64 -> 1
constexpr int kH1 = 128, kH2 = 64, kH3 = 64;

struct NetView {
    Eigen::Map<const Mat> W1, W2, W3;
    Eigen::Map<const Vec> b1, b2, b3, w4;
    double b4;
};

int net_param_count(int d) {
    return kH1 * d + kH1 + kH2 * kH1 + kH2 + kH3 * kH2 + kH3 + kH3 + 1;
}

NetView net_view(const Vec& v, int d) {
    const double* p = v.data();
    Eigen::Map<const Mat> W1(p, kH1, d);
    p += kH1 * d;
    Eigen::Map<const Vec> b1(p, kH1);
    p += kH1;
    Eigen::Map<const Mat> W2(p, kH2, kH1);
    p += kH2 * kH1;
    Eigen::Map<const Vec> b2(p, kH2);
    p += kH2;
    Eigen::Map<const Mat> W3(p, kH3, kH2);
    p += kH3 * kH2;
    Eigen::Map<const Vec> b3(p, kH3);
    p += kH3;
    Eigen::Map<const Vec> w4(p, kH3);
    p += kH3;
    return NetView{W1, W2, W3, b1, b2, b3, w4, *p};
}

// forward activations and masks of the potential network
struct NetForward {
    Mat H1, H2, H3;              // post-ReLU
    Eigen::ArrayXXd M1, M2, M3;  // pre-activation > 0
};

NetForward net_forward(const NetView& n, const Mat& X) {
    NetForward f;
    Mat A1 = (X * n.W1.transpose()).rowwise() + n.b1.transpose();
    f.M1 = (A1.array() > 0.0).cast<double>();
    f.H1 = A1.cwiseMax(0.0);
    Mat A2 = (f.H1 * n.W2.transpose()).rowwise() + n.b2.transpose();
    f.M2 = (A2.array() > 0.0).cast<double>();
    f.H2 = A2.cwiseMax(0.0);
    Mat A3 = (f.H2 * n.W3.transpose()).rowwise() + n.b3.transpose();
    f.M3 = (A3.array() > 0.0).cast<double>();
    f.H3 = A3.cwiseMax(0.0);
    return f;
}

// reverse accumulation of grad_x Phi; returns G1 (n x 128) and the x-gradient
struct NetGrad {
    Mat G1, G2, G3;
    Mat grad_x;
};

NetGrad net_grad_x(const NetView& n, const NetForward& f, Eigen::Index rows) {
    NetGrad g;
    g.G3 = (n.w4.transpose().replicate(rows, 1).array() * f.M3).matrix();
    g.G2 = ((g.G3 * n.W3).array() * f.M2).matrix();
    g.G1 = ((g.G2 * n.W2).array() * f.M1).matrix();
    g.grad_x = g.G1 * n.W1;
    return g;
}

void require_dims(const ParamVector& theta, const Mat& X) {
    const int d = static_cast<int>(X.cols());
    const int want_d = family_dim(theta.family);
    if (want_d != 0 && want_d != d) {
        std::ostringstream os;
        os << family_name(theta.family) << " drift expects dimension " << want_d << ", got " << d;
        throw std::invalid_argument(os.str());
    }
    if (theta.values.size() != family_param_count(theta.family, d)) {
        std::ostringstream os;
        os << family_name(theta.family) << " expects " << family_param_count(theta.family, d)
           << " parameters, got " << theta.values.size();
        throw std::invalid_argument(os.str());
    }
}

// repressilator column i is repressed by column prev(i)
constexpr int rep_prev(int i) { return i == 0 ? 2 : i - 1; }

}  // namespace

const char* family_name(Family f) {
    switch (f) {
        case Family::zero: return "zero";
        case Family::lotka_volterra: return "lotka_volterra";
        case Family::repressilator: return "repressilator";
        case Family::vortex: return "vortex";
        case Family::gradient_field: return "gradient_field";
    }
    throw std::invalid_argument("unknown family tag");
}

Family family_from_name(const std::string& name) {
    for (Family f : {Family::zero, Family::lotka_volterra, Family::repressilator, Family::vortex,
                     Family::gradient_field}) {
        if (name == family_name(f)) return f;
    }
    throw std::invalid_argument("unknown family name: " + name);
}

int family_dim(Family f) {
    switch (f) {
        case Family::zero: return 0;
        case Family::lotka_volterra: return 2;
        case Family::repressilator: return 3;
        case Family::vortex: return 2;
        case Family::gradient_field: return 0;
    }
    throw std::invalid_argument("unknown family tag");
}

int family_param_count(Family f, int dim) {
    switch (f) {
        case Family::zero: return 0;
        case Family::lotka_volterra: return 4;
        case Family::repressilator: return 4;
        case Family::vortex: return 4;
        case Family::gradient_field: return net_param_count(dim);
    }
    throw std::invalid_argument("unknown family tag");
}

Mat eval_drift(const ParamVector& theta, const Mat& X) {
    require_dims(theta, X);
    const Eigen::Index n = X.rows();
    switch (theta.family) {
        case Family::zero:
            return Mat::Zero(n, X.cols());
        case Family::lotka_volterra: {
            const double a = theta.values(0), b = theta.values(1), g = theta.values(2),
                         d = theta.values(3);
            Arr x = X.col(0).array(), y = X.col(1).array();
            Mat out(n, 2);
            out.col(0) = (a * x - b * x * y).matrix();
            out.col(1) = (g * x * y - d * y).matrix();
            return out;
        }
        case Family::repressilator: {
            const double beta = theta.values(0), nexp = theta.values(1), k = theta.values(2),
                         g = theta.values(3);
            Mat out(n, 3);
            for (int i = 0; i < 3; ++i) {
                Arr ratio = (X.col(rep_prev(i)).array() / k).abs();
                Arr w = ratio.pow(nexp);
                out.col(i) = (beta / (1.0 + w) - g * X.col(i).array()).matrix();
            }
            return out;
        }
        case Family::vortex: {
            const double c1 = theta.values(0), c2 = theta.values(1), s = theta.values(2),
                         e = std::exp(-theta.values(3));
            Mat out(n, 2);
            out.col(0) = (s * e * (X.col(1).array() - c2)).matrix();
            out.col(1) = (-s * (X.col(0).array() - c1)).matrix();
            return out;
        }
        case Family::gradient_field: {
            const auto view = net_view(theta.values, static_cast<int>(X.cols()));
            const auto f = net_forward(view, X);
            return -net_grad_x(view, f, n).grad_x;
        }
    }
    throw std::invalid_argument("unknown family tag");
}

FamilyDrift::FamilyDrift(ParamVector theta, int dim) : theta_(std::move(theta)), dim_(dim) {
    Mat probe = Mat::Zero(1, dim_);
    require_dims(theta_, probe);
}

Mat FamilyDrift::eval(const Mat& X, double) const { return eval_drift(theta_, X); }

namespace {

// shared accumulation over trajectories; calls visit(states_head, residuals, dt)
// with residuals = dx - b*dt, and returns loss = sum ||r||^2/(2 gamma dt) / steps
template <typename Visit>
double accumulate_loss(const ParamVector& theta, const std::vector<Trajectory>& trajs,
                       double gamma, Visit&& visit) {
    if (trajs.empty()) throw std::invalid_argument("need at least one trajectory");
    if (!(gamma > 0.0)) throw std::invalid_argument("gamma must be positive");
    double loss = 0.0;
    long total_steps = 0;
    for (const Trajectory& tr : trajs) {
        const int steps = tr.steps();
        if (steps < 1) continue;
        const Mat head = tr.states.topRows(steps);
        Mat r = tr.states.bottomRows(steps) - head - eval_drift(theta, head) * tr.dt;
        loss += r.squaredNorm() / (2.0 * gamma * tr.dt);
        visit(head, r, tr.dt);
        total_steps += steps;
    }
    if (total_steps == 0) throw std::invalid_argument("trajectories have no steps");
    return loss / static_cast<double>(total_steps);
}

long count_steps(const std::vector<Trajectory>& trajs) {
    long n = 0;
    for (const auto& tr : trajs) n += std::max(0, tr.steps());
    return n;
}

}  // namespace

double second_projection_loss(const ParamVector& theta, const std::vector<Trajectory>& trajs,
                              double gamma) {
    return accumulate_loss(theta, trajs, gamma, [](const Mat&, const Mat&, double) {});
}

std::pair<double, Vec> loss_and_grad(const ParamVector& theta,
                                     const std::vector<Trajectory>& trajs, double gamma) {
    Vec grad = Vec::Zero(theta.values.size());
    const double tot = static_cast<double>(count_steps(trajs));
    const double scale = -1.0 / (gamma * tot);  // d loss / d theta_p = scale * sum r . dB/dtheta_p

    switch (theta.family) {
        case Family::zero: {
            double loss = second_projection_loss(theta, trajs, gamma);
            return {loss, grad};
        }
        case Family::lotka_volterra: {
            double loss = accumulate_loss(theta, trajs, gamma,
                                          [&](const Mat& X, const Mat& r, double) {
                Arr x = X.col(0).array(), y = X.col(1).array();
                Arr xy = x * y;
                grad(0) += scale * (r.col(0).array() * x).sum();
                grad(1) += scale * -(r.col(0).array() * xy).sum();
                grad(2) += scale * (r.col(1).array() * xy).sum();
                grad(3) += scale * -(r.col(1).array() * y).sum();
            });
            return {loss, grad};
        }
        case Family::repressilator: {
            const double beta = theta.values(0), nexp = theta.values(1), k = theta.values(2);
            double loss = accumulate_loss(theta, trajs, gamma,
                                          [&](const Mat& X, const Mat& r, double) {
                for (int i = 0; i < 3; ++i) {
                    Arr ratio = (X.col(rep_prev(i)).array() / k).abs();
                    Arr w = ratio.pow(nexp);
                    Arr u = 1.0 / (1.0 + w);
                    Arr logr = (ratio > 0.0).select(ratio.log(), Arr::Zero(ratio.size()));
                    Arr ri = r.col(i).array();
                    grad(0) += scale * (ri * u).sum();
                    // dB/dn = -beta u^2 w log(ratio)
                    grad(1) += scale * -(ri * beta * u.square() * w * logr).sum();
                    // dB/dk = beta n w u^2 / k
                    grad(2) += scale * (ri * (beta * nexp / k) * w * u.square()).sum();
                    grad(3) += scale * -(ri * X.col(i).array()).sum();
                }
            });
            return {loss, grad};
        }
        case Family::vortex: {
            const double c1 = theta.values(0), c2 = theta.values(1), s = theta.values(2),
                         e = std::exp(-theta.values(3));
            double loss = accumulate_loss(theta, trajs, gamma,
                                          [&](const Mat& X, const Mat& r, double) {
                Arr dx = X.col(0).array() - c1, dy = X.col(1).array() - c2;
                Arr r0 = r.col(0).array(), r1 = r.col(1).array();
                grad(0) += scale * (r1 * s).sum();
                grad(1) += scale * -(r0 * s * e).sum();
                grad(2) += scale * ((r0 * e * dy).sum() - (r1 * dx).sum());
                grad(3) += scale * -(r0 * s * e * dy).sum();
            });
            return {loss, grad};
        }
        case Family::gradient_field: {
            const int d = trajs.front().dim();
            const auto view = net_view(theta.values, d);
            double* gp = grad.data();
            Eigen::Map<Mat> gW1(gp, kH1, d);
            Eigen::Map<Mat> gW2(gp + kH1 * d + kH1, kH2, kH1);
            Eigen::Map<Mat> gW3(gp + kH1 * d + kH1 + kH2 * kH1 + kH2, kH3, kH2);
            Eigen::Map<Vec> gw4(gp + kH1 * d + kH1 + kH2 * kH1 + kH2 + kH3 * kH2 + kH3, kH3);
            double loss = accumulate_loss(theta, trajs, gamma,
                                          [&](const Mat& X, const Mat& r, double) {
                // dloss/d(grad_x Phi) = +r/(gamma*tot) since drift = -grad Phi
                const Mat C = r / (gamma * tot);
                const auto f = net_forward(view, X);
                const auto g = net_grad_x(view, f, X.rows());
                Mat P1 = ((C * view.W1.transpose()).array() * f.M1).matrix();
                Mat P2 = ((P1 * view.W2.transpose()).array() * f.M2).matrix();
                Mat P3 = ((P2 * view.W3.transpose()).array() * f.M3).matrix();
                gW1 += g.G1.transpose() * C;
                gW2 += g.G2.transpose() * P1;
                gW3 += g.G3.transpose() * P2;
                gw4 += P3.colwise().sum().transpose();
                // bias gradients vanish almost everywhere (masks are flat)
            });
            return {loss, grad};
        }
    }
    throw std::invalid_argument("unknown family tag");
}

namespace {

double softplus(double v) { return v > 30.0 ? v : std::log1p(std::exp(v)); }
double softplus_inv(double n) { return n > 30.0 ? n : std::log(std::expm1(n)); }
double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// repressilator exponent (index 1) is optimized through softplus
Vec to_opt_space(const ParamVector& theta) {
    Vec u = theta.values;
    if (theta.family == Family::repressilator) {
        if (!(u(1) > 0.0))
            throw std::invalid_argument("repressilator exponent must be positive");
        u(1) = softplus_inv(u(1));
    }
    return u;
}

ParamVector from_opt_space(Family f, Vec u) {
    ParamVector theta;
    theta.family = f;
    if (f == Family::repressilator) u(1) = softplus(u(1));
    theta.values = std::move(u);
    return theta;
}

}  // namespace

FitResult fit_mle(const ParamVector& theta_init, const std::vector<Trajectory>& trajs,
                  double gamma, const FitOptions& opt) {
    FitResult res;
    res.theta = theta_init;
    if (theta_init.values.size() == 0) {
        res.loss_trace.assign(1, second_projection_loss(theta_init, trajs, gamma));
        return res;
    }

    Vec u = to_opt_space(theta_init);
    ParamVector theta = theta_init;
    for (int epoch = 1; epoch <= opt.epochs; ++epoch) {
        auto [loss, grad] = loss_and_grad(theta, trajs, gamma);
        if (!std::isfinite(loss)) throw DivergedFit(epoch, "non-finite loss during fit");
        res.loss_trace.push_back(loss);

        Vec gu = grad;
        if (theta.family == Family::repressilator) gu(1) *= sigmoid(u(1));

        double step = opt.lr;
        for (int h = 0; h <= opt.max_halvings; ++h) {
            Vec u_try = u - step * gu;
            ParamVector theta_try = from_opt_space(theta.family, u_try);
            const double loss_try = second_projection_loss(theta_try, trajs, gamma);
            if (std::isfinite(loss_try) && loss_try <= loss) {
                u = std::move(u_try);
                theta = std::move(theta_try);
                break;
            }
            step *= 0.5;
        }
        // if every halving failed, the epoch makes no move
    }
    res.loss_trace.push_back(second_projection_loss(theta, trajs, gamma));
    res.theta = std::move(theta);
    return res;
}

ParamVector gradient_field_init(int dim, rng::Stream& rs) {
    ParamVector p;
    p.family = Family::gradient_field;
    p.values = Vec(net_param_count(dim));
    double* out = p.values.data();
    const int fan_in[4] = {dim, kH1, kH2, kH3};
    const int w_count[4] = {kH1 * dim, kH2 * kH1, kH3 * kH2, kH3};
    const int b_count[4] = {kH1, kH2, kH3, 1};
    for (int layer = 0; layer < 4; ++layer) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in[layer]));
        for (int i = 0; i < w_count[layer]; ++i) *out++ = bound * (2.0 * rs.uniform() - 1.0);
        for (int i = 0; i < b_count[layer]; ++i) *out++ = bound * (2.0 * rs.uniform() - 1.0);
    }
    return p;
}

ParamVector neutral_init(Family f, int dim, const Mat& sample_points, const rng::Key& init_key) {
    ParamVector p;
    p.family = f;
    switch (f) {
        case Family::zero:
            p.values = Vec(0);
            return p;
        case Family::lotka_volterra:
        case Family::repressilator:
            p.values = Vec::Constant(4, 0.1);
            return p;
        case Family::vortex: {
            p.values = Vec::Zero(4);
            if (sample_points.rows() > 0) {
                p.values(0) = sample_points.col(0).mean();
                p.values(1) = sample_points.col(1).mean();
            }
            return p;
        }
        case Family::gradient_field: {
            rng::Stream rs(init_key);
            return gradient_field_init(dim, rs);
        }
    }
    throw std::invalid_argument("unknown family tag");
}

}  // namespace sbridge
