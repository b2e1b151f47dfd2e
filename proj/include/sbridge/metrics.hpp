#pragma once

#include "sbridge/types.hpp"

namespace sbridge {

// Clouds larger than this on either side switch emd() to the Sinkhorn
// approximation.
inline constexpr int kExactEmdCutoff = 2048;

// Wasserstein-1 between uniform empirical measures under Euclidean ground
// cost. Exact successive-shortest-path min-cost-flow solve up to
// kExactEmdCutoff points per side (supplies are rescaled to integers, so
// unequal cloud sizes are exact as well); beyond that, emd_sinkhorn.
// Symmetric, nonnegative, 0 for identical multisets.
double emd(const Mat& a, const Mat& b);

// Log-domain Sinkhorn approximation of emd with entropic regularization
// eps = eps_scale * median(cost matrix). Returns the transport cost of the
// regularized plan.
double emd_sinkhorn(const Mat& a, const Mat& b, double eps_scale = 0.01, int iters = 1000);

// Biased V-statistic of squared MMD with kernel exp(-||x-y||^2 / (2 l^2)):
// mean_aa k + mean_bb k - 2 mean_ab k. Squared MMD is reported, not its
// square root.
double mmd_sq(const Mat& a, const Mat& b, double lengthscale = 1.0);

}  // namespace sbridge
