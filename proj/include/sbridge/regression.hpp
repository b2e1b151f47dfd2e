#pragma once

#include <memory>

#include "sbridge/rng.hpp"
#include "sbridge/types.hpp"

namespace sbridge {

struct RegressorConfig {
    double lengthscale = 1.0;  // on standardized inputs
    double ridge = 1e-3;
    int max_inducing = 512;
};

// Kernel ridge regression of per-step drift targets on (state, time) inputs
// with a squared-exponential kernel, one shared coefficient solve for all
// output dimensions.
//
// Inputs are standardized per fit: each state column to zero mean and unit
// variance (degenerate columns keep scale 1), time first to
// (t - t_lo)/(t_hi - t_lo) and then to unit variance as well.
// The prior mean is zero, so predictions decay to zero far from the data.
// When there are more rows than cfg.max_inducing, a uniformly subsampled
// inducing subset Z is used and coefficients solve
//   (K_zx K_xz + ridge*K_zz + jitter*I) A = K_zx Y,
// which reduces to the exact ridge solve (K + ridge*I) A = Y when every row
// is retained. rs drives only the inducing subsample.
//
// Throws NumericalSolveError if the solve yields non-finite coefficients.
std::shared_ptr<const DriftField> drift_regression(const Mat& X, const Vec& times, const Mat& Y,
                                                   double t_lo, double t_hi,
                                                   const RegressorConfig& cfg, rng::Stream& rs);

// Pairwise squared distances between row sets, clamped at zero.
Mat pairwise_sqdist(const Mat& A, const Mat& B);

}  // namespace sbridge
