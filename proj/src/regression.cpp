#include "sbridge/regression.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace sbridge {

Mat pairwise_sqdist(const Mat& A, const Mat& B) {
    Mat D = -2.0 * A * B.transpose();
    D.colwise() += A.rowwise().squaredNorm();
    D.rowwise() += B.rowwise().squaredNorm().transpose();
    return D.cwiseMax(0.0);
}

namespace {

Mat se_kernel(const Mat& A, const Mat& B, double lengthscale) {
    Mat K = pairwise_sqdist(A, B);
    K *= -0.5 / (lengthscale * lengthscale);
    return K.array().exp().matrix();
}

class KernelRidgeDrift final : public DriftField {
  public:
    KernelRidgeDrift(Mat inducing, Mat coef, Vec mean, Vec scale, double t_lo, double t_span,
                     double t_mean, double t_scale, double lengthscale)
        : inducing_(std::move(inducing)),
          coef_(std::move(coef)),
          mean_(std::move(mean)),
          scale_(std::move(scale)),
          t_lo_(t_lo),
          t_span_(t_span),
          t_mean_(t_mean),
          t_scale_(t_scale),
          lengthscale_(lengthscale) {}

    int dim() const override { return static_cast<int>(coef_.cols()); }

    Mat eval(const Mat& X, double t) const override {
        Mat Q(X.rows(), X.cols() + 1);
        Q.leftCols(X.cols()) =
            (X.rowwise() - mean_.transpose()).array().rowwise() / scale_.transpose().array();
        Q.col(X.cols()).setConstant(((t - t_lo_) / t_span_ - t_mean_) / t_scale_);
        return se_kernel(Q, inducing_, lengthscale_) * coef_;
    }

  private:
    Mat inducing_;  // m x (d+1), standardized
    Mat coef_;      // m x d
    Vec mean_, scale_;
    double t_lo_, t_span_, t_mean_, t_scale_;
    double lengthscale_;
};

}  // namespace

std::shared_ptr<const DriftField> drift_regression(const Mat& X, const Vec& times, const Mat& Y,
                                                   double t_lo, double t_hi,
                                                   const RegressorConfig& cfg, rng::Stream& rs) {
    const int n = static_cast<int>(X.rows());
    const int d = static_cast<int>(X.cols());
    if (n == 0) throw std::invalid_argument("regression needs at least one input");
    if (times.size() != n || Y.rows() != n)
        throw std::invalid_argument("inputs, times and targets must have equal counts");
    if (Y.cols() != d) throw std::invalid_argument("targets must match the state dimension");
    if (!(cfg.lengthscale > 0.0) || !(cfg.ridge > 0.0) || cfg.max_inducing < 1)
        throw std::invalid_argument("regressor config entries must be positive");

    Vec mean = X.colwise().mean();
    Vec scale(d);
    for (int c = 0; c < d; ++c) {
        const double var = (X.col(c).array() - mean(c)).square().sum() / n;
        const double sd = std::sqrt(var);
        scale(c) = sd < 1e-12 ? 1.0 : sd;
    }

    // Time enters like any other coordinate: made dimensionless by the segment
    // span, then standardized to unit variance. Without the second step a
    // unit-lengthscale kernel barely resolves time within a segment, and
    // time-varying targets get averaged across the segment into systematic
    // state-dependent bias.
    const double t_span = (t_hi - t_lo) > 0.0 ? (t_hi - t_lo) : 1.0;
    Vec u = (times.array() - t_lo) / t_span;
    const double t_mean = u.mean();
    const double t_var = (u.array() - t_mean).square().sum() / n;
    const double t_sd = std::sqrt(t_var);
    const double t_scale = t_sd < 1e-12 ? 1.0 : t_sd;

    Mat Z(n, d + 1);
    Z.leftCols(d) = (X.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array();
    Z.col(d) = (u.array() - t_mean) / t_scale;

    Mat coef, inducing;
    if (n <= cfg.max_inducing) {
        Mat K = se_kernel(Z, Z, cfg.lengthscale);
        K.diagonal().array() += cfg.ridge;
        coef = K.ldlt().solve(Y);
        inducing = Z;
    } else {
        // uniform inducing subsample, then the subset-of-regressors solve
        std::vector<int> idx(static_cast<std::size_t>(n));
        std::iota(idx.begin(), idx.end(), 0);
        const int m = cfg.max_inducing;
        for (int i = 0; i < m; ++i) {
            const int j = i + static_cast<int>(rs.next_u64() % static_cast<std::uint64_t>(n - i));
            std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
        }
        inducing = Mat(m, d + 1);
        for (int i = 0; i < m; ++i) inducing.row(i) = Z.row(idx[static_cast<std::size_t>(i)]);

        Mat Kzx = se_kernel(inducing, Z, cfg.lengthscale);  // m x n
        Mat Kzz = se_kernel(inducing, inducing, cfg.lengthscale);
        Mat A = Kzx * Kzx.transpose() + cfg.ridge * Kzz;
        A.diagonal().array() += 1e-10;
        coef = A.ldlt().solve(Kzx * Y);
    }
    if (!coef.allFinite()) throw NumericalSolveError("kernel ridge solve produced non-finite coefficients");

    return std::make_shared<KernelRidgeDrift>(std::move(inducing), std::move(coef),
                                              std::move(mean), std::move(scale), t_lo, t_span,
                                              t_mean, t_scale, cfg.lengthscale);
}

}  // namespace sbridge
