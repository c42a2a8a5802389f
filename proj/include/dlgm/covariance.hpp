#pragma once

#include "dlgm/numcore.hpp"

namespace dlgm {

// Gaussian N(mu, C) with precision C^{-1} = D + u u^T, D = diag(d).
//
// Every operation below runs in O(K): with s = u^T D^{-1} u and
// eta = 1 / (1 + s), the Woodbury identity gives
//   C = D^{-1} - eta D^{-1} u u^T D^{-1},   log|C| = log(eta) - sum log d_i,
// and R = D^{-1/2} - c D^{-1} u u^T D^{-1/2} with c = (1 - sqrt(eta)) / s
// satisfies R R^T = C.
struct RankOneGaussian {
  Vector mu;
  Vector d;
  Vector u;

  std::size_t dim() const { return mu.size(); }
  // u^T D^{-1} u
  double s() const;
  double eta() const;

  // Validates d > 0 and matching lengths.
  void check() const;

  static RankOneGaussian diagonal(Vector mu, Vector d);
  static RankOneGaussian standard(std::size_t k);
};

struct CovStats {
  double trace;
  double logdet;
};

CovStats cov_stats(const RankOneGaussian& g);

// Dense C = D^{-1} - eta D^{-1} u u^T D^{-1}. O(K^2); for checks and small K.
Matrix woodbury_covariance(const RankOneGaussian& g);

// The coefficient c = (1 - sqrt(eta)) / s, written as 1 / (r (r + 1)) with
// r = sqrt(1 + s) so that it is finite (1/2) in the u -> 0 limit.
double factor_coefficient(double s);

// R * eps without materializing R.
Vector factor_apply(const RankOneGaussian& g, const Vector& eps);

// mu + R * eps
Vector sample(const RankOneGaussian& g, const Vector& eps);

struct FactorVjp {
  Vector d_d;
  Vector d_u;
};

// Given upstream = dL/dw for w = R(d, u) eps, returns dL/dd and dL/du.
FactorVjp factor_apply_vjp(const RankOneGaussian& g, const Vector& eps, const Vector& upstream);

// KL[N(mu, C) || N(0, I)]
double kl_std_normal(const RankOneGaussian& g);

struct KlGradients {
  Vector d_mu;
  Vector d_d;
  Vector d_u;
};

KlGradients kl_gradients(const RankOneGaussian& g);

// log N(x | mu, C), evaluated through the precision.
double log_density(const RankOneGaussian& g, const Vector& x);

// log N(x | 0, I)
double log_std_normal(const Vector& x);

}  // namespace dlgm
