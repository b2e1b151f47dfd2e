#include "sbridge/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "sbridge/regression.hpp"

namespace sbridge {

namespace {

Mat distance_matrix(const Mat& a, const Mat& b) {
    if (a.cols() != b.cols()) throw std::invalid_argument("clouds disagree on dimension");
    if (a.rows() < 1 || b.rows() < 1) throw std::invalid_argument("clouds must be nonempty");
    return pairwise_sqdist(a, b).cwiseSqrt();
}

// Successive shortest paths with node potentials on the dense bipartite
// transportation graph. Supplies are integers: each of the n_a sources holds
// L/n_a units and each sink wants L/n_b, L = lcm(n_a, n_b), so uniform
// empirical weights are represented exactly.
double emd_exact(const Mat& C, std::int64_t n_a, std::int64_t n_b) {
    const std::int64_t L = std::lcm(n_a, n_b);
    const std::int64_t per_source = L / n_a, per_sink = L / n_b;
    const int na = static_cast<int>(n_a), nb = static_cast<int>(n_b);
    const int V = na + nb;  // sources then sinks

    std::vector<std::int64_t> supply(static_cast<std::size_t>(na), per_source);
    std::vector<std::int64_t> demand(static_cast<std::size_t>(nb), per_sink);
    Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic> flow =
        Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>::Zero(na, nb);
    std::vector<double> pi(static_cast<std::size_t>(V), 0.0);

    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> dist(static_cast<std::size_t>(V));
    std::vector<int> parent(static_cast<std::size_t>(V));
    std::vector<char> done(static_cast<std::size_t>(V));

    std::int64_t remaining = L;
    while (remaining > 0) {
        std::fill(dist.begin(), dist.end(), inf);
        std::fill(parent.begin(), parent.end(), -1);
        std::fill(done.begin(), done.end(), 0);
        for (int i = 0; i < na; ++i)
            if (supply[static_cast<std::size_t>(i)] > 0) dist[static_cast<std::size_t>(i)] = 0.0;

        for (int iter = 0; iter < V; ++iter) {
            int u = -1;
            double best = inf;
            for (int v = 0; v < V; ++v)
                if (!done[static_cast<std::size_t>(v)] && dist[static_cast<std::size_t>(v)] < best) {
                    best = dist[static_cast<std::size_t>(v)];
                    u = v;
                }
            if (u < 0) break;
            done[static_cast<std::size_t>(u)] = 1;
            if (u < na) {
                // forward arcs source u -> every sink
                for (int j = 0; j < nb; ++j) {
                    const int w = na + j;
                    if (done[static_cast<std::size_t>(w)]) continue;
                    const double rc = std::max(
                        0.0, C(u, j) + pi[static_cast<std::size_t>(u)] - pi[static_cast<std::size_t>(w)]);
                    if (best + rc < dist[static_cast<std::size_t>(w)]) {
                        dist[static_cast<std::size_t>(w)] = best + rc;
                        parent[static_cast<std::size_t>(w)] = u;
                    }
                }
            } else {
                // backward arcs sink -> sources with positive flow
                const int j = u - na;
                for (int i = 0; i < na; ++i) {
                    if (done[static_cast<std::size_t>(i)] || flow(i, j) == 0) continue;
                    const double rc = std::max(
                        0.0, -C(i, j) + pi[static_cast<std::size_t>(u)] - pi[static_cast<std::size_t>(i)]);
                    if (best + rc < dist[static_cast<std::size_t>(i)]) {
                        dist[static_cast<std::size_t>(i)] = best + rc;
                        parent[static_cast<std::size_t>(i)] = u;
                    }
                }
            }
        }

        int target = -1;
        double target_dist = inf;
        for (int j = 0; j < nb; ++j) {
            if (demand[static_cast<std::size_t>(j)] > 0 &&
                dist[static_cast<std::size_t>(na + j)] < target_dist) {
                target_dist = dist[static_cast<std::size_t>(na + j)];
                target = j;
            }
        }
        if (target < 0) throw NumericalSolveError("transportation solve ran out of augmenting paths");

        // bottleneck along the alternating path
        std::int64_t bottleneck = demand[static_cast<std::size_t>(target)];
        for (int v = na + target; parent[static_cast<std::size_t>(v)] >= 0;
             v = parent[static_cast<std::size_t>(v)]) {
            const int p = parent[static_cast<std::size_t>(v)];
            if (v >= na) {
                // arrived at sink v from source p: forward arc, no cap
            } else {
                // arrived at source v from sink p: backward arc limited by flow
                bottleneck = std::min(bottleneck, flow(v, p - na));
            }
            if (p < na && parent[static_cast<std::size_t>(p)] < 0)
                bottleneck = std::min(bottleneck, supply[static_cast<std::size_t>(p)]);
        }

        for (int v = na + target; parent[static_cast<std::size_t>(v)] >= 0;
             v = parent[static_cast<std::size_t>(v)]) {
            const int p = parent[static_cast<std::size_t>(v)];
            if (v >= na)
                flow(p, v - na) += bottleneck;
            else
                flow(v, p - na) -= bottleneck;
            if (p < na && parent[static_cast<std::size_t>(p)] < 0)
                supply[static_cast<std::size_t>(p)] -= bottleneck;
        }
        demand[static_cast<std::size_t>(target)] -= bottleneck;
        remaining -= bottleneck;

        for (int v = 0; v < V; ++v)
            if (dist[static_cast<std::size_t>(v)] < inf)
                pi[static_cast<std::size_t>(v)] += std::min(dist[static_cast<std::size_t>(v)], target_dist);
            else
                pi[static_cast<std::size_t>(v)] += target_dist;
    }

    double cost = 0.0;
    for (int i = 0; i < na; ++i)
        for (int j = 0; j < nb; ++j)
            if (flow(i, j) > 0) cost += static_cast<double>(flow(i, j)) * C(i, j);
    return cost / static_cast<double>(L);
}

}  // namespace

double emd(const Mat& a, const Mat& b) {
    if (std::max(a.rows(), b.rows()) > kExactEmdCutoff) return emd_sinkhorn(a, b);
    Mat C = distance_matrix(a, b);
    return emd_exact(C, a.rows(), b.rows());
}

double emd_sinkhorn(const Mat& a, const Mat& b, double eps_scale, int iters) {
    Mat C = distance_matrix(a, b);
    const int na = static_cast<int>(a.rows()), nb = static_cast<int>(b.rows());

    std::vector<double> vals(C.data(), C.data() + C.size());
    auto mid = vals.begin() + vals.size() / 2;
    std::nth_element(vals.begin(), mid, vals.end());
    const double median = *mid;
    const double eps = std::max(eps_scale * median, 1e-12);

    const double log_wa = -std::log(static_cast<double>(na));
    const double log_wb = -std::log(static_cast<double>(nb));
    Vec f = Vec::Zero(na), g = Vec::Zero(nb);

    auto lse_rows = [&](const Mat& M) -> Vec {  // log sum exp across columns, per row
        Vec mx = M.rowwise().maxCoeff();
        return (mx.array() +
                ((M.colwise() - mx).array().exp().rowwise().sum()).log())
            .matrix();
    };

    for (int it = 0; it < iters; ++it) {
        // f_i = -eps * LSE_j[(g_j - C_ij)/eps + log w_b]
        Mat Mf = -C;
        Mf.rowwise() += g.transpose();
        Mf.array() /= eps;
        Mf.array() += log_wb;
        f = -eps * lse_rows(Mf);
        // g_j = -eps * LSE_i[(f_i - C_ij)/eps + log w_a]
        Mat Mg = -C;
        Mg.colwise() += f;
        Mg.transposeInPlace();  // nb x na
        Mg.array() /= eps;
        Mg.array() += log_wa;
        g = -eps * lse_rows(Mg);
    }

    // transport cost of the regularized plan
    Mat logP = (-C).rowwise() + g.transpose();
    logP.colwise() += f;
    logP.array() /= eps;
    logP.array() += log_wa + log_wb;
    return (logP.array().exp() * C.array()).sum();
}

double mmd_sq(const Mat& a, const Mat& b, double lengthscale) {
    if (a.cols() != b.cols()) throw std::invalid_argument("clouds disagree on dimension");
    if (a.rows() < 1 || b.rows() < 1) throw std::invalid_argument("clouds must be nonempty");
    if (!(lengthscale > 0.0)) throw std::invalid_argument("lengthscale must be positive");
    const double inv = -0.5 / (lengthscale * lengthscale);
    const double kaa = (pairwise_sqdist(a, a) * inv).array().exp().mean();
    const double kbb = (pairwise_sqdist(b, b) * inv).array().exp().mean();
    const double kab = (pairwise_sqdist(a, b) * inv).array().exp().mean();
    return kaa + kbb - 2.0 * kab;
}

}  // namespace sbridge
