#include "dlgm/covariance.hpp"

#include <cmath>

namespace dlgm {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;  // log(2 pi)

}  // namespace

double RankOneGaussian::s() const {
  double acc = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) acc += u[i] * u[i] / d[i];
  return acc;
}

double RankOneGaussian::eta() const { return 1.0 / (1.0 + s()); }

void RankOneGaussian::check() const {
  require_dims(d.size() == mu.size() && u.size() == mu.size(), "RankOneGaussian fields");
  for (double x : d)
    if (!(x > 0.0) || !std::isfinite(x)) throw DomainError("RankOneGaussian: d must be positive and finite");
}

RankOneGaussian RankOneGaussian::diagonal(Vector mu, Vector d) {
  Vector u(mu.size(), 0.0);
  return {std::move(mu), std::move(d), std::move(u)};
}

RankOneGaussian RankOneGaussian::standard(std::size_t k) {
  return {Vector(k, 0.0), Vector(k, 1.0), Vector(k, 0.0)};
}

CovStats cov_stats(const RankOneGaussian& g) {
  g.check();
  double inv_sum = 0.0, log_d = 0.0, q = 0.0, s = 0.0;
  for (std::size_t i = 0; i < g.dim(); ++i) {
    const double ud = g.u[i] / g.d[i];
    inv_sum += 1.0 / g.d[i];
    log_d += std::log(g.d[i]);
    q += ud * ud;
    s += g.u[i] * ud;
  }
  const double eta = 1.0 / (1.0 + s);
  return {inv_sum - eta * q, -std::log1p(s) - log_d};
}

Matrix woodbury_covariance(const RankOneGaussian& g) {
  g.check();
  const std::size_t k = g.dim();
  Vector w(k);
  for (std::size_t i = 0; i < k; ++i) w[i] = g.u[i] / g.d[i];
  const double eta = g.eta();
  Matrix c(k, k);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) c(i, j) = -eta * w[i] * w[j];
    c(i, i) += 1.0 / g.d[i];
  }
  return c;
}

double factor_coefficient(double s) {
  const double r = std::sqrt(1.0 + s);
  return 1.0 / (r * (r + 1.0));
}

namespace {

// dc/ds for c(s) = 1 / (r^2 + r), r = sqrt(1 + s)
double factor_coefficient_deriv(double s) {
  const double r = std::sqrt(1.0 + s);
  const double den = r * r + r;
  return -(2.0 * r + 1.0) / (2.0 * r * den * den);
}

}  // namespace

Vector factor_apply(const RankOneGaussian& g, const Vector& eps) {
  g.check();
  require_dims(eps.size() == g.dim(), "factor_apply eps");
  const std::size_t k = g.dim();
  Vector w(k);
  double t = 0.0;  // u^T D^{-1/2} eps
  for (std::size_t i = 0; i < k; ++i) {
    const double inv_sqrt = 1.0 / std::sqrt(g.d[i]);
    w[i] = eps[i] * inv_sqrt;
    t += g.u[i] * w[i];
  }
  const double ct = factor_coefficient(g.s()) * t;
  if (ct != 0.0)
    for (std::size_t i = 0; i < k; ++i) w[i] -= ct * g.u[i] / g.d[i];
  return w;
}

Vector sample(const RankOneGaussian& g, const Vector& eps) {
  Vector w = factor_apply(g, eps);
  for (std::size_t i = 0; i < w.size(); ++i) w[i] += g.mu[i];
  return w;
}

FactorVjp factor_apply_vjp(const RankOneGaussian& g, const Vector& eps, const Vector& upstream) {
  g.check();
  require_dims(eps.size() == g.dim() && upstream.size() == g.dim(), "factor_apply_vjp");
  const std::size_t k = g.dim();
  // L = sum_i g_i eps_i d_i^{-1/2} - c(s) t p,  t = sum u_j eps_j d_j^{-1/2},  p = sum g_i u_i / d_i
  double s = 0.0, t = 0.0, p = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    s += g.u[i] * g.u[i] / g.d[i];
    t += g.u[i] * eps[i] / std::sqrt(g.d[i]);
    p += upstream[i] * g.u[i] / g.d[i];
  }
  const double c = factor_coefficient(s);
  const double dc = factor_coefficient_deriv(s);
  FactorVjp out{Vector(k), Vector(k)};
  for (std::size_t i = 0; i < k; ++i) {
    const double di = g.d[i];
    const double inv_sqrt = 1.0 / std::sqrt(di);
    const double inv_d32 = inv_sqrt / di;
    const double ds_dd = -g.u[i] * g.u[i] / (di * di);
    const double dt_dd = -0.5 * g.u[i] * eps[i] * inv_d32;
    const double dp_dd = -upstream[i] * g.u[i] / (di * di);
    out.d_d[i] = -0.5 * upstream[i] * eps[i] * inv_d32 -
                 (dc * ds_dd * t * p + c * dt_dd * p + c * t * dp_dd);
    const double ds_du = 2.0 * g.u[i] / di;
    const double dt_du = eps[i] * inv_sqrt;
    const double dp_du = upstream[i] / di;
    out.d_u[i] = -(dc * ds_du * t * p + c * dt_du * p + c * t * dp_du);
  }
  return out;
}

double kl_std_normal(const RankOneGaussian& g) {
  const CovStats st = cov_stats(g);
  return 0.5 * (st.trace - st.logdet + squared_norm(g.mu) - static_cast<double>(g.dim()));
}

KlGradients kl_gradients(const RankOneGaussian& g) {
  g.check();
  const std::size_t k = g.dim();
  double s = 0.0, q = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const double ud = g.u[i] / g.d[i];
    s += g.u[i] * ud;
    q += ud * ud;
  }
  const double eta = 1.0 / (1.0 + s);
  KlGradients out{g.mu, Vector(k), Vector(k)};
  for (std::size_t i = 0; i < k; ++i) {
    const double di = g.d[i], ui = g.u[i];
    const double u2 = ui * ui;
    const double dtr_dd = -1.0 / (di * di) - eta * eta * u2 * q / (di * di) + 2.0 * eta * u2 / (di * di * di);
    const double dld_dd = eta * u2 / (di * di) - 1.0 / di;
    const double dtr_du = 2.0 * eta * eta * ui * q / di - 2.0 * eta * ui / (di * di);
    const double dld_du = -2.0 * eta * ui / di;
    out.d_d[i] = 0.5 * (dtr_dd - dld_dd);
    out.d_u[i] = 0.5 * (dtr_du - dld_du);
  }
  return out;
}

double log_density(const RankOneGaussian& g, const Vector& x) {
  const CovStats st = cov_stats(g);
  require_dims(x.size() == g.dim(), "log_density");
  double quad = 0.0, proj = 0.0;
  for (std::size_t i = 0; i < g.dim(); ++i) {
    const double r = x[i] - g.mu[i];
    quad += g.d[i] * r * r;
    proj += g.u[i] * r;
  }
  quad += proj * proj;
  return -0.5 * (static_cast<double>(g.dim()) * kLog2Pi + st.logdet + quad);
}

double log_std_normal(const Vector& x) {
  return -0.5 * (static_cast<double>(x.size()) * kLog2Pi + squared_norm(x));
}

}  // namespace dlgm
