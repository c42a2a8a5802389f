#include "dlgm/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <exception>

namespace dlgm {

ScalarTarget ScalarTarget::make(std::size_t dim, std::function<double(const Vector&)> f,
                                std::function<Vector(const Vector&)> grad, std::function<Matrix(const Vector&)> hess,
                                RngStream& stream, std::size_t probes) {
  ScalarTarget t{dim, std::move(f), std::move(grad), std::move(hess)};
  for (std::size_t p = 0; p < probes; ++p) {
    const Vector x = stream.standard_normal(dim);
    const Vector g = t.grad(x);
    require_dims(g.size() == dim, "target gradient size");
    const Vector fd = finite_diff_grad(t.f, x);
    for (std::size_t i = 0; i < dim; ++i)
      if (std::abs(g[i] - fd[i]) > 1e-6 * std::max(1.0, std::abs(fd[i])))
        throw NumericError("target gradient disagrees with finite differences at coordinate " + std::to_string(i));
  }
  return t;
}

ScalarTarget quadratic_target(double c, std::size_t dim) {
  ScalarTarget t;
  t.dim = dim;
  t.f = [c](const Vector& x) { return 0.5 * c * squared_norm(x); };
  t.grad = [c](const Vector& x) { return scaled(x, c); };
  t.hess = [c, dim](const Vector&) {
    Matrix h(dim, dim);
    for (std::size_t i = 0; i < dim; ++i) h(i, i) = c;
    return h;
  };
  return t;
}

Vector bonnet_grad_mu(const ScalarTarget& t, const RankOneGaussian& g, std::size_t n, RngStream& stream) {
  if (n == 0) throw DomainError("bonnet_grad_mu: n must be >= 1");
  Vector acc(g.dim(), 0.0);
  for (std::size_t s = 0; s < n; ++s) axpy(1.0, t.grad(sample(g, stream.standard_normal(g.dim()))), acc);
  return scaled(acc, 1.0 / static_cast<double>(n));
}

Matrix price_grad_C(const ScalarTarget& t, const RankOneGaussian& g, std::size_t n, RngStream& stream) {
  if (!t.hess) throw Error("price_grad_C: target has no Hessian");
  if (n == 0) throw DomainError("price_grad_C: n must be >= 1");
  Matrix acc(g.dim(), g.dim());
  for (std::size_t s = 0; s < n; ++s) axpy(1.0, t.hess(sample(g, stream.standard_normal(g.dim()))).data(), acc.data());
  for (double& x : acc.data()) x *= 0.5 / static_cast<double>(n);
  return acc;
}

Matrix reparam_grad_R(const ScalarTarget& t, const Vector& mu, const Matrix& r, std::size_t n, RngStream& stream) {
  require_dims(r.rows() == mu.size() && r.cols() == mu.size(), "reparam_grad_R factor");
  if (n == 0) throw DomainError("reparam_grad_R: n must be >= 1");
  Matrix acc(mu.size(), mu.size());
  for (std::size_t s = 0; s < n; ++s) {
    const Vector eps = stream.standard_normal(mu.size());
    const Vector xi = add(mu, matvec(r, eps));
    add_outer(acc, t.grad(xi), eps);
  }
  for (double& x : acc.data()) x /= static_cast<double>(n);
  return acc;
}

Vector reinforce_grad(const ScalarTarget& t, const Vector& mu, const Vector& sigma, double baseline, std::size_t n,
                      RngStream& stream) {
  require_dims(sigma.size() == mu.size(), "reinforce sigma");
  if (n == 0) throw DomainError("reinforce_grad: n must be >= 1");
  Vector acc(mu.size(), 0.0), xi(mu.size());
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t i = 0; i < mu.size(); ++i) xi[i] = mu[i] + sigma[i] * stream.normal();
    const double w = t.f(xi) - baseline;
    for (std::size_t i = 0; i < mu.size(); ++i) acc[i] += w * (xi[i] - mu[i]) / (sigma[i] * sigma[i]);
  }
  return scaled(acc, 1.0 / static_cast<double>(n));
}

UnivariateVariances univariate_variance_oracle(double c, double mu, double sigma) {
  if (!(sigma > 0.0)) throw DomainError("sigma must be positive");
  const double c2 = c * c, s2 = sigma * sigma, m2 = mu * mu;
  return {c2 * s2, 0.0, 2.0 * c2 * s2 + m2 * c2, 2.0 * c2 * m2 + 2.5 * c2 * s2};
}

namespace {

double sample_variance(const std::vector<double>& xs) {
  if (xs.size() < 2) throw DomainError("empirical_variance needs at least 2 trials");
  // shifted by the first value so constant inputs give exactly 0
  const double shift = xs[0];
  double mean = 0.0;
  for (double x : xs) mean += x - shift;
  mean /= static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - shift - mean) * (x - shift - mean);
  return ss / static_cast<double>(xs.size() - 1);
}

}  // namespace

namespace {

constexpr std::size_t kTrialBlock = 1024;

// Runs the trials of block b from their own stream, in order.
void run_block(const SingleSampleEstimator& est, std::size_t b, std::size_t trials, const RngStream& base,
               std::vector<double>& out) {
  RngStream s = base.derive(b);
  const std::size_t end = std::min(trials, (b + 1) * kTrialBlock);
  for (std::size_t i = b * kTrialBlock; i < end; ++i) out[i] = est(s);
}

}  // namespace

double empirical_variance(const SingleSampleEstimator& est, std::size_t trials, const RngStream& base) {
  if (trials < 2) throw DomainError("empirical_variance needs at least 2 trials");
  std::vector<double> out(trials);
  const std::size_t blocks = (trials + kTrialBlock - 1) / kTrialBlock;
  std::exception_ptr err;
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t b = 0; b < static_cast<std::ptrdiff_t>(blocks); ++b) {
    try {
      run_block(est, static_cast<std::size_t>(b), trials, base, out);
    } catch (...) {
#pragma omp critical
      err = std::current_exception();
    }
  }
  if (err) std::rethrow_exception(err);
  return sample_variance(out);
}

namespace reference {

double empirical_variance_serial(const SingleSampleEstimator& est, std::size_t trials, const RngStream& base) {
  if (trials < 2) throw DomainError("empirical_variance needs at least 2 trials");
  std::vector<double> out(trials);
  for (std::size_t b = 0; b * kTrialBlock < trials; ++b) run_block(est, b, trials, base, out);
  return sample_variance(out);
}

}  // namespace reference

SingleSampleEstimator bonnet_single(double c, double mu, double sigma) {
  return [=](RngStream& s) { return c * (mu + sigma * s.normal()); };
}

SingleSampleEstimator price_single(double c, double mu, double sigma) {
  // 1/2 f''(xi); the draw is consumed even though f'' = c does not depend on it
  (void)mu;
  (void)sigma;
  return [=](RngStream& s) {
    s.normal();
    return 0.5 * c;
  };
}

SingleSampleEstimator reparam_single(double c, double mu, double sigma) {
  return [=](RngStream& s) {
    const double eps = s.normal();
    return eps * c * (mu + sigma * eps);
  };
}

SingleSampleEstimator reinforce_single(double c, double mu, double sigma, double baseline) {
  return [=](RngStream& s) {
    const double xi = mu + sigma * s.normal();
    return (0.5 * c * xi * xi - baseline) * (xi - mu) / (sigma * sigma);
  };
}

SingleSampleEstimator reinforce_single(double c, double mu, double sigma) {
  return reinforce_single(c, mu, sigma, 0.5 * c * (mu * mu + sigma * sigma));
}

std::vector<ScalingRow> variance_scaling_sweep(const std::vector<std::size_t>& ks, std::size_t trials,
                                               std::uint64_t seed, double c, double mu, double sigma) {
  std::vector<ScalingRow> rows;
  const RngStream root(seed);
  for (std::size_t idx = 0; idx < ks.size(); ++idx) {
    const std::size_t k = ks[idx];
    if (k == 0) throw DomainError("K must be >= 1");
    const double expected_f = 0.5 * c * static_cast<double>(k) * (mu * mu + sigma * sigma);
    const RngStream base = root.derive(idx);
    SingleSampleEstimator gbp = [=](RngStream& s) {
      // only xi_0 enters the coordinate-0 gradient; the rest are still drawn
      double xi0 = 0.0;
      for (std::size_t i = 0; i < k; ++i) {
        const double xi = mu + sigma * s.normal();
        if (i == 0) xi0 = xi;
      }
      return c * xi0;
    };
    SingleSampleEstimator rf = [=](RngStream& s) {
      double f = 0.0, xi0 = 0.0;
      for (std::size_t i = 0; i < k; ++i) {
        const double xi = mu + sigma * s.normal();
        if (i == 0) xi0 = xi;
        f += 0.5 * c * xi * xi;
      }
      return (f - expected_f) * (xi0 - mu) / (sigma * sigma);
    };
    rows.push_back({k, empirical_variance(gbp, trials, base.derive(0)), empirical_variance(rf, trials, base.derive(1))});
  }
  return rows;
}

LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  require_dims(x.size() == y.size() && x.size() >= 2, "fit_line");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  const double slope = sxy / sxx;
  const double r2 = syy > 0.0 ? (sxy * sxy) / (sxx * syy) : 1.0;
  return {slope, my - slope * mx, r2};
}

ProductRuleB product_rule_B_gaussian(double x, double mu, double sigma) {
  if (!(sigma > 0.0)) throw DomainError("sigma must be positive");
  const double y = x - mu;
  if (std::abs(y) < 1e-10) throw DomainError("product-rule B for the variance is singular at x = mu");
  // B = d_theta log p / d_x log p
  return {-1.0, -(y - sigma) * (y + sigma) / (2.0 * sigma * sigma * y)};
}

ProductRuleEstimate product_rule_estimate(const ScalarTarget& t, double mu, double sigma, std::size_t n,
                                          RngStream& stream) {
  require_dims(t.dim == 1, "product-rule estimate needs a 1-D target");
  if (n == 0) throw DomainError("n must be >= 1");
  double acc_mu = 0.0, acc_var = 0.0;
  Vector x(1);
  for (std::size_t s = 0; s < n; ++s) {
    x[0] = mu + sigma * stream.normal();
    const double y = x[0] - mu;
    if (std::abs(y) < 1e-10) continue;  // measure-zero singular point
    const double f = t.f(x);
    const double fp = t.grad(x)[0];
    const ProductRuleB b = product_rule_B_gaussian(x[0], mu, sigma);
    const double b_var_deriv = -1.0 / (2.0 * sigma * sigma) - 1.0 / (2.0 * y * y);
    acc_mu += b.b_mu * fp;  // B_mu' = 0
    acc_var += b_var_deriv * f + b.b_var * fp;
  }
  const double inv = 1.0 / static_cast<double>(n);
  return {-acc_mu * inv, -acc_var * inv};
}

double location_scale_sample(LocationScaleFamily family, const LocationScaleParams& p, double base_draw) {
  switch (family) {
    case LocationScaleFamily::gaussian: return p.a + p.b * base_draw;
    case LocationScaleFamily::gev_affine: return p.a * base_draw + p.b;
    case LocationScaleFamily::weibull:
      if (!(p.a > 0.0) || !(p.b > 0.0)) throw DomainError("weibull needs lambda > 0 and k > 0");
      if (base_draw < 0.0) throw DomainError("weibull base draw must come from Exp(1)");
      return p.a * std::pow(base_draw, 1.0 / p.b);
  }
  return 0.0;
}

double draw_base(LocationScaleFamily family, RngStream& stream) {
  switch (family) {
    case LocationScaleFamily::gaussian: return stream.normal();
    case LocationScaleFamily::gev_affine: {
      // standard Gumbel
      double u;
      do u = stream.uniform();
      while (u == 0.0);
      return -std::log(-std::log(u));
    }
    case LocationScaleFamily::weibull: return -std::log1p(-stream.uniform());
  }
  return 0.0;
}

}  // namespace dlgm
