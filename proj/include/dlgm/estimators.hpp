#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "dlgm/covariance.hpp"
#include "dlgm/numcore.hpp"

namespace dlgm {

// Smooth scalar function with its gradient and (optionally) Hessian. make()
// checks the gradient against central differences at a few random points.
struct ScalarTarget {
  std::size_t dim = 0;
  std::function<double(const Vector&)> f;
  std::function<Vector(const Vector&)> grad;
  std::function<Matrix(const Vector&)> hess;  // may be empty

  static ScalarTarget make(std::size_t dim, std::function<double(const Vector&)> f,
                           std::function<Vector(const Vector&)> grad, std::function<Matrix(const Vector&)> hess,
                           RngStream& stream, std::size_t probes = 3);
};

// Separable quadratic f(xi) = sum_i c xi_i^2 / 2.
ScalarTarget quadratic_target(double c, std::size_t dim);

// Monte Carlo estimate of grad_mu E_q[f] = E_q[grad f]; q = N(mu, C) from g.
Vector bonnet_grad_mu(const ScalarTarget& t, const RankOneGaussian& g, std::size_t n, RngStream& stream);

// grad_C E_q[f] = 1/2 E_q[hess f]. Throws if the target has no Hessian.
Matrix price_grad_C(const ScalarTarget& t, const RankOneGaussian& g, std::size_t n, RngStream& stream);

// grad_R E[f(mu + R eps)] = E[grad f(mu + R eps) eps^T], R any square factor.
Matrix reparam_grad_R(const ScalarTarget& t, const Vector& mu, const Matrix& r, std::size_t n, RngStream& stream);

// Score-function estimate of grad_mu E[f] under N(mu, diag(sigma^2)):
// mean of (f(xi) - b) (xi - mu) / sigma^2.
Vector reinforce_grad(const ScalarTarget& t, const Vector& mu, const Vector& sigma, double baseline, std::size_t n,
                      RngStream& stream);

struct UnivariateVariances {
  double v_bonnet;
  double v_price;
  double v_reparam;
  double v_reinforce;
};

// Closed-form single-sample variances for f = c xi^2 / 2, xi ~ N(mu, sigma^2).
UnivariateVariances univariate_variance_oracle(double c, double mu, double sigma);

using SingleSampleEstimator = std::function<double(RngStream&)>;

// Unbiased sample variance of `trials` single-sample outputs. Trials are
// grouped in blocks of 1024; block b draws in order from base.derive(b).
// Blocks run in parallel, the reduction is serial.
double empirical_variance(const SingleSampleEstimator& est, std::size_t trials, const RngStream& base);

// Single-sample estimators on the univariate quadratic, for empirical_variance.
SingleSampleEstimator bonnet_single(double c, double mu, double sigma);
SingleSampleEstimator price_single(double c, double mu, double sigma);
SingleSampleEstimator reparam_single(double c, double mu, double sigma);
// Baseline b = E[f] = c (mu^2 + sigma^2) / 2.
SingleSampleEstimator reinforce_single(double c, double mu, double sigma);
SingleSampleEstimator reinforce_single(double c, double mu, double sigma, double baseline);

struct ScalingRow {
  std::size_t k;
  double v_gbp;
  double v_reinforce;
};

// Per-K empirical variance of the coordinate-0 mu-gradient for the separable
// quadratic sum_i c xi_i^2 / 2 under N(mu 1, sigma^2 I). REINFORCE uses the
// exact baseline E[f].
std::vector<ScalingRow> variance_scaling_sweep(const std::vector<std::size_t>& ks, std::size_t trials,
                                               std::uint64_t seed, double c = 1.0, double mu = 0.0,
                                               double sigma = 1.0);

struct LineFit {
  double slope;
  double intercept;
  double r2;
};
LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y);

// Product-rule function B for the Gaussian with theta = (mu, sigma^2), so that
// grad_theta E[f] = -E[d/dx (B(x) f(x))].
struct ProductRuleB {
  double b_mu;
  double b_var;
};
ProductRuleB product_rule_B_gaussian(double x, double mu, double sigma);

struct ProductRuleEstimate {
  double d_mu;
  double d_var;
};

// MC estimate of (grad_mu, grad_{sigma^2}) E[f] via -E[B' f + B f'] for a 1-D target.
ProductRuleEstimate product_rule_estimate(const ScalarTarget& t, double mu, double sigma, std::size_t n,
                                          RngStream& stream);

enum class LocationScaleFamily { gaussian, gev_affine, weibull };

// gaussian: (a, b) = (mu, R); gev_affine: (m, b); weibull: (lambda, k)
struct LocationScaleParams {
  double a;
  double b;
};

// Maps a draw from the family's standard distribution (standard normal,
// standard Gumbel GEV(0, 1, 0), Exp(1)) to the target distribution.
double location_scale_sample(LocationScaleFamily family, const LocationScaleParams& p, double base_draw);
double draw_base(LocationScaleFamily family, RngStream& stream);

namespace reference {

double empirical_variance_serial(const SingleSampleEstimator& est, std::size_t trials, const RngStream& base);

}  // namespace reference

}  // namespace dlgm
