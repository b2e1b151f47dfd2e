#pragma once

#include <string>
#include <utility>
#include <vector>

#include "sbridge/rng.hpp"
#include "sbridge/types.hpp"

namespace sbridge {

// Closed set of parametric reference drift families. All are
// time-homogeneous; evaluation ignores t.
enum class Family { zero, lotka_volterra, repressilator, vortex, gradient_field };

const char* family_name(Family f);
Family family_from_name(const std::string& name);

// Natural state dimension of the family; 0 means any dimension.
int family_dim(Family f);
// Parameter count; gradient_field depends on the state dimension.
int family_param_count(Family f, int dim);

struct ParamVector {
    Family family = Family::zero;
    Vec values;
};

// Batch drift evaluation. X is n x d.
//  - lotka_volterra (a, b, g, d), d=2:   (a*x1 - b*x1*x2, g*x1*x2 - d*x2)
//  - repressilator (beta, n, k, g), d=3: b_i = beta / (1 + |x_prev(i)/k|^n) - g*x_i
//    with prev(1)=3, prev(2)=1, prev(3)=2; the Hill term uses |x/k| because
//    noisy state coordinates can cross below zero
//  - vortex (c1, c2, scale, logyscale), d=2:
//    (scale*(x2 - c2)*exp(-logyscale), -scale*(x1 - c1))
//  - gradient_field: -grad Phi(x) for a ReLU network potential
//    d -> 128 -> 64 -> 64 -> 1, gradient accumulated analytically in reverse
Mat eval_drift(const ParamVector& theta, const Mat& X);

class FamilyDrift final : public DriftField {
  public:
    FamilyDrift(ParamVector theta, int dim);
    int dim() const override { return dim_; }
    Mat eval(const Mat& X, double t) const override;
    const ParamVector& theta() const noexcept { return theta_; }

  private:
    ParamVector theta_;
    int dim_;
};

// Mean per-step penalty over all steps of all trajectories:
// sum ||dx_j - b(x_j)*dt||^2 / (2*gamma*dt) divided by the total step count.
double second_projection_loss(const ParamVector& theta, const std::vector<Trajectory>& trajs,
                              double gamma);

// Loss plus its analytic gradient with respect to the natural parameters.
std::pair<double, Vec> loss_and_grad(const ParamVector& theta,
                                     const std::vector<Trajectory>& trajs, double gamma);

struct FitOptions {
    double lr = 0.05;
    int epochs = 20;
    int max_halvings = 10;  // per-epoch step halvings before accepting no move
};

struct FitResult {
    ParamVector theta;
    std::vector<double> loss_trace;  // loss before each epoch plus the final loss
};

// Full-batch gradient descent on second_projection_loss. An epoch that would
// increase the loss halves its step and retries, so the trace is
// non-increasing. The repressilator exponent is optimized through a softplus
// reparameterization to stay positive. Deterministic given its inputs.
// Throws DivergedFit on a non-finite loss.
FitResult fit_mle(const ParamVector& theta_init, const std::vector<Trajectory>& trajs,
                  double gamma, const FitOptions& opt);

// Family-specific starting parameters for the first refinement pass:
// 0.1 for every lotka_volterra/repressilator parameter, the data centroid
// with zero scale for vortex, fresh uniform(+-1/sqrt(fan_in)) weights for
// gradient_field drawn from init_key.
ParamVector neutral_init(Family f, int dim, const Mat& sample_points, const rng::Key& init_key);

ParamVector gradient_field_init(int dim, rng::Stream& rs);

}  // namespace sbridge
