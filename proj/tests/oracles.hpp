#pragma once

// Independent reference computations for the tests: dense linear algebra,
// 1-D quadrature and toy models whose likelihoods and posteriors are known in
// closed form or by exhaustive integration. Nothing here calls the library
// routine it is used to check.

#include <array>
#include <cmath>
#include <functional>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "dlgm/covariance.hpp"
#include "dlgm/generative.hpp"
#include "dlgm/recognition.hpp"

namespace oracle {

using dlgm::Matrix;
using dlgm::Vector;

inline Matrix mul(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k)
      for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += a(i, k) * b(k, j);
  return c;
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

inline double max_abs(const Matrix& a, const Matrix& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

// Gauss-Jordan with partial pivoting.
inline Matrix invert(Matrix a) {
  const std::size_t n = a.rows();
  Matrix inv = Matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) inv(i, i) = 1.0;
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t p = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(a(r, c)) > std::abs(a(p, c))) p = r;
    if (a(p, c) == 0.0) throw std::runtime_error("singular matrix");
    for (std::size_t j = 0; j < n; ++j) {
      std::swap(a(c, j), a(p, j));
      std::swap(inv(c, j), inv(p, j));
    }
    const double piv = a(c, c);
    for (std::size_t j = 0; j < n; ++j) {
      a(c, j) /= piv;
      inv(c, j) /= piv;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == c) continue;
      const double f = a(r, c);
      if (f == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) {
        a(r, j) -= f * a(c, j);
        inv(r, j) -= f * inv(c, j);
      }
    }
  }
  return inv;
}

// log|det a| for a symmetric positive definite matrix, via Cholesky.
inline double logdet_spd(const Matrix& a) {
  const std::size_t n = a.rows();
  Matrix l(n, n);
  double ld = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    double s = a(j, j);
    for (std::size_t k = 0; k < j; ++k) s -= l(j, k) * l(j, k);
    if (!(s > 0.0)) throw std::runtime_error("not positive definite");
    l(j, j) = std::sqrt(s);
    ld += 2.0 * std::log(l(j, j));
    for (std::size_t i = j + 1; i < n; ++i) {
      double t = a(i, j);
      for (std::size_t k = 0; k < j; ++k) t -= l(i, k) * l(j, k);
      l(i, j) = t / l(j, j);
    }
  }
  return ld;
}

inline Matrix dense_precision(const dlgm::RankOneGaussian& g) {
  const std::size_t k = g.dim();
  Matrix p(k, k);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) p(i, j) = g.u[i] * g.u[j] + (i == j ? g.d[i] : 0.0);
  return p;
}

inline Matrix dense_covariance(const dlgm::RankOneGaussian& g) { return invert(dense_precision(g)); }

// R built one column at a time from the library's matrix-free product.
inline Matrix factor_columns(const dlgm::RankOneGaussian& g) {
  const std::size_t k = g.dim();
  Matrix r(k, k);
  for (std::size_t j = 0; j < k; ++j) {
    Vector e(k, 0.0);
    e[j] = 1.0;
    const Vector col = dlgm::factor_apply(g, e);
    for (std::size_t i = 0; i < k; ++i) r(i, j) = col[i];
  }
  return r;
}

inline double kl_dense(const Vector& mu, const Matrix& c) {
  double tr = 0.0, mm = 0.0;
  for (std::size_t i = 0; i < c.rows(); ++i) tr += c(i, i);
  for (double m : mu) mm += m * m;
  return 0.5 * (tr - logdet_spd(c) + mm - static_cast<double>(mu.size()));
}

// log N(x | m, s) with dense covariance s.
inline double log_normal_dense(const Vector& x, const Vector& m, const Matrix& s) {
  const Matrix inv = invert(s);
  double q = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < x.size(); ++j) q += (x[i] - m[i]) * inv(i, j) * (x[j] - m[j]);
  return -0.5 * (q + logdet_spd(s) + static_cast<double>(x.size()) * std::log(2.0 * std::numbers::pi));
}

inline dlgm::RankOneGaussian random_gaussian(std::size_t k, dlgm::RngStream& s, double u_scale = 1.0) {
  dlgm::RankOneGaussian g{s.standard_normal(k), Vector(k), Vector(k)};
  for (std::size_t i = 0; i < k; ++i) {
    g.d[i] = std::exp(s.normal() * 0.5);
    g.u[i] = u_scale * s.normal();
  }
  return g;
}

// Composite Simpson rule on [lo, hi] with n (even) intervals.
inline double integrate(const std::function<double(double)>& f, double lo, double hi, std::size_t n = 20000) {
  if (n % 2) ++n;
  const double h = (hi - lo) / static_cast<double>(n);
  double s = f(lo) + f(hi);
  for (std::size_t i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * f(lo + h * static_cast<double>(i));
  return s * h / 3.0;
}

inline double std_normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

// ---------------------------------------------------------------------------
// Linear-Gaussian model with an exactly representable posterior.
//
// xi ~ N(0, I_K), v = A xi + b + noise, noise ~ N(0, diag(sig2)), with
// A = w a^T. Then the posterior precision I + A^T Sigma^{-1} A equals
// I + u u^T with u = a sqrt(w^T Sigma^{-1} w), which is the rank-one family
// with d = 1, and the posterior mean is linear in v. The recognition model
// has no hidden layer, so it represents q exactly.
struct LinearGaussianToy {
  dlgm::GenerativeParams gen;
  dlgm::RecognitionParams rec;
  Matrix A;
  Vector b;
  Vector sig2;
  Matrix marginal_cov;  // A A^T + diag(sig2)
  Matrix post_cov;      // (I + A^T Sigma^-1 A)^-1
  Matrix post_gain;     // post_cov A^T Sigma^-1

  double log_p(const Vector& v) const { return log_normal_dense(v, b, marginal_cov); }
  Vector post_mean(const Vector& v) const {
    Vector m(post_gain.rows(), 0.0);
    for (std::size_t i = 0; i < m.size(); ++i)
      for (std::size_t j = 0; j < v.size(); ++j) m[i] += post_gain(i, j) * (v[j] - b[j]);
    return m;
  }
};

inline LinearGaussianToy linear_gaussian_toy(std::size_t D, std::size_t K, std::uint64_t seed) {
  using namespace dlgm;
  RngStream s(seed);
  LinearGaussianToy t;
  const Vector w = s.standard_normal(D);
  const Vector a = s.standard_normal(K);
  t.A = Matrix(D, K);
  for (std::size_t i = 0; i < D; ++i)
    for (std::size_t j = 0; j < K; ++j) t.A(i, j) = w[i] * a[j];
  t.b = s.standard_normal(D);
  t.sig2 = Vector(D);
  Vector log_var(D);
  for (std::size_t i = 0; i < D; ++i) {
    log_var[i] = -1.0 + 1.5 * s.uniform();
    t.sig2[i] = std::exp(log_var[i]);
  }

  t.gen = GenerativeParams::create({LayerSpec::stochastic(K), LayerSpec::dense(K, D, Activation::identity)},
                                   ObsFamily::gaussian_diagonal, 1e6);
  Matrix& G = t.gen.values.at(gen_noise_name(0));
  for (std::size_t i = 0; i < K; ++i) G(i, i) = 1.0;
  t.gen.values.at(gen_weight_name(1)) = t.A;
  t.gen.values.at(gen_bias_name(1)) = Matrix::column(t.b);
  t.gen.values.at(kObsLogVarName) = Matrix(1, D, log_var);

  t.marginal_cov = mul(t.A, transpose(t.A));
  for (std::size_t i = 0; i < D; ++i) t.marginal_cov(i, i) += t.sig2[i];

  double wsw = 0.0;
  for (std::size_t i = 0; i < D; ++i) wsw += w[i] * w[i] / t.sig2[i];
  Vector u(K);
  for (std::size_t j = 0; j < K; ++j) u[j] = a[j] * std::sqrt(wsw);
  Matrix prec(K, K);
  for (std::size_t i = 0; i < K; ++i)
    for (std::size_t j = 0; j < K; ++j) prec(i, j) = u[i] * u[j] + (i == j ? 1.0 : 0.0);
  t.post_cov = invert(prec);
  Matrix at_sinv = transpose(t.A);
  for (std::size_t i = 0; i < K; ++i)
    for (std::size_t j = 0; j < D; ++j) at_sinv(i, j) /= t.sig2[j];
  t.post_gain = mul(t.post_cov, at_sinv);

  t.rec = RecognitionParams::create(D, {}, Activation::rectifier, {K}, CovarianceMode::rank_one);
  t.rec.values.at(rec_head_name(0, "mu", "W")) = t.post_gain;
  Vector mb(K, 0.0);
  for (std::size_t i = 0; i < K; ++i)
    for (std::size_t j = 0; j < D; ++j) mb[i] -= t.post_gain(i, j) * t.b[j];
  t.rec.values.at(rec_head_name(0, "mu", "b")) = Matrix::column(mb);
  t.rec.values.at(rec_head_name(0, "u", "b")) = Matrix::column(u);
  return t;
}

// ---------------------------------------------------------------------------
// Three binary pixels with one latent: logits = w xi + b, xi ~ N(0, 1).
// p(v) is computed by quadrature for each of the 8 configurations. The
// recognition model has a one-hot rectifier trunk (unit c fires only for
// v = c) and heads that emit the quadrature posterior mean and variance of
// that configuration, so q is the moment-matched Gaussian posterior.
struct BernoulliToy {
  dlgm::GenerativeParams gen;
  dlgm::RecognitionParams rec;
  std::array<double, 3> w{1.5, -1.0, 2.0};
  std::array<double, 3> b{0.2, -0.3, 0.1};
  std::array<double, 8> p{};         // p(v = config)
  std::array<double, 8> post_mu{};   // posterior mean of xi given config
  std::array<double, 8> post_var{};  // posterior variance

  static Vector config(std::size_t c) {
    return {static_cast<double>((c >> 2) & 1), static_cast<double>((c >> 1) & 1), static_cast<double>(c & 1)};
  }
  static std::size_t index(const Vector& v) {
    return (static_cast<std::size_t>(v[0]) << 2) | (static_cast<std::size_t>(v[1]) << 1) |
           static_cast<std::size_t>(v[2]);
  }
  double lik(const Vector& v, double xi) const {
    double l = 0.0;
    for (int i = 0; i < 3; ++i) {
      const double a = w[i] * xi + b[i];
      l += v[i] * a - (a > 0 ? a + std::log1p(std::exp(-a)) : std::log1p(std::exp(a)));
    }
    return std::exp(l);
  }
  // Probability that pixel i is on given xi.
  double on_prob(int i, double xi) const { return 1.0 / (1.0 + std::exp(-(w[i] * xi + b[i]))); }
};

inline BernoulliToy bernoulli_toy() {
  using namespace dlgm;
  BernoulliToy t;
  for (std::size_t c = 0; c < 8; ++c) {
    const Vector v = BernoulliToy::config(c);
    auto joint = [&](double x) { return t.lik(v, x) * std_normal_pdf(x); };
    const double pv = integrate(joint, -12.0, 12.0);
    const double m = integrate([&](double x) { return x * joint(x); }, -12.0, 12.0) / pv;
    const double var = integrate([&](double x) { return (x - m) * (x - m) * joint(x); }, -12.0, 12.0) / pv;
    t.p[c] = pv;
    t.post_mu[c] = m;
    t.post_var[c] = var;
  }

  t.gen = GenerativeParams::create({LayerSpec::stochastic(1), LayerSpec::dense(1, 3, Activation::identity)},
                                   ObsFamily::bernoulli_logits, 1e6);
  t.gen.values.at(gen_noise_name(0))(0, 0) = 1.0;
  for (int i = 0; i < 3; ++i) {
    t.gen.values.at(gen_weight_name(1))(i, 0) = t.w[i];
    t.gen.values.at(gen_bias_name(1))(i, 0) = t.b[i];
  }

  t.rec = RecognitionParams::create(3, {8}, Activation::rectifier, {1}, CovarianceMode::diagonal);
  Matrix& W = t.rec.values.at(rec_enc_name(0, "W"));
  Matrix& bb = t.rec.values.at(rec_enc_name(0, "b"));
  for (std::size_t c = 0; c < 8; ++c) {
    const Vector v = BernoulliToy::config(c);
    double on = 0.0;
    for (int i = 0; i < 3; ++i) {
      W(c, i) = 2.0 * v[i] - 1.0;
      on += v[i];
    }
    bb(c, 0) = 1.0 - on;
    t.rec.values.at(rec_head_name(0, "mu", "W"))(0, c) = t.post_mu[c];
    t.rec.values.at(rec_head_name(0, "logd", "W"))(0, c) = -std::log(t.post_var[c]);
  }
  return t;
}

}  // namespace oracle
