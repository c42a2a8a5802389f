#pragma once

#include <string>
#include <vector>

#include "dlgm/generative.hpp"
#include "dlgm/params.hpp"
#include "dlgm/recognition.hpp"

namespace dlgm {

// Base noise for one objective evaluation: eps[n][l] drives the posterior
// sample of datapoint n at stochastic layer l. jitter is either empty or has
// the same shape and is added to the sample after the KL is taken (it is
// already scaled by its sigma).
struct EpsBundle {
  std::vector<LatentSample> eps;
  std::vector<LatentSample> jitter;

  static EpsBundle draw(const std::vector<std::size_t>& latent_dims, std::size_t n, RngStream& stream,
                        double jitter_sigma = 0.0);
};

struct FreeEnergyTerms {
  double recon = 0.0;      // -sum_n log p(v_n | h(xi_n)), single-sample estimate
  double latent_kl = 0.0;  // sum_n sum_l KL[q_l(. | v_n) || N(0, I)]
  double param_reg = 0.0;  // ||theta^g||^2 / (2 kappa), never scaled by lambda
  double total = 0.0;      // lambda * (recon + latent_kl) + param_reg
  double lambda = 1.0;
};

struct Evaluation {
  FreeEnergyTerms terms;
  GradientSet grads;  // empty unless gradients were requested
};

// Zero gradients over the generative keys followed by the recognition keys.
GradientSet zero_gradients(const GenerativeParams& gen, const RecognitionParams& rec);

// Batched objective. Datapoints are processed in fixed-size blocks in
// parallel and reduced in block order, so results do not depend on the
// number of threads.
Evaluation evaluate_free_energy(const GenerativeParams& gen, const RecognitionParams& rec, const Matrix& batch,
                                const EpsBundle& eps, double lambda, bool with_gradients);

FreeEnergyTerms free_energy(const GenerativeParams& gen, const RecognitionParams& rec, const Matrix& batch,
                            const EpsBundle& eps, double lambda);

GradientSet grad_free_energy(const GenerativeParams& gen, const RecognitionParams& rec, const Matrix& batch,
                             const EpsBundle& eps, double lambda);

// Contribution of one datapoint: adds lambda-scaled data-term gradients into
// grads (when non-null) and accumulates its recon and KL values.
void accumulate_point(const GenerativeParams& gen, const RecognitionParams& rec, const Vector& v,
                      const LatentSample& eps, const LatentSample* jitter, double lambda, GradientSet* grads,
                      double& recon, double& kl);

struct GradCheckEntry {
  std::string name;
  std::size_t index;  // position inside the block, row-major
  double analytic;
  double numeric;
  double rel_err;  // |analytic - numeric| / max(1, |analytic|, |numeric|)
};

// Compares grad_free_energy with central differences of free_energy (same
// eps) for every generative and recognition parameter.
std::vector<GradCheckEntry> gradient_check(const GenerativeParams& gen, const RecognitionParams& rec,
                                           const Matrix& batch, const EpsBundle& eps, double lambda,
                                           double h = 1e-5);

void check_eps_bundle(const GenerativeParams& gen, const Matrix& batch, const EpsBundle& eps);

// Variational Bayes over the generative parameters: theta_j ~ N(m_j, tau_j).
struct ParamPosterior {
  ParamSet m;
  ParamSet tau;

  static ParamPosterior around(const GenerativeParams& gen, double tau0);
  void validate() const;
};

struct VbTerms {
  FreeEnergyTerms data;     // param_reg is 0 here
  double param_term = 0.0;  // 1/2 sum_j [m^2/kappa + tau/kappa + log kappa - log tau - 1]
  double total = 0.0;
};

double vb_param_term(const ParamPosterior& post, double kappa);

// theta = m + sqrt(tau) * eps_theta, elementwise
ParamSet vb_draw(const ParamPosterior& post, const ParamSet& eps_theta);

// gen_shape provides architecture, kappa and the observation family; its
// values are ignored and replaced by the draw.
VbTerms vb_free_energy(const GenerativeParams& gen_shape, const ParamPosterior& post, const RecognitionParams& rec,
                       const Matrix& batch, const EpsBundle& eps, const ParamSet& eps_theta, double lambda = 1.0);

struct VbGradients {
  ParamSet d_m;
  ParamSet d_tau;
  ParamSet d_rec;
};

VbGradients vb_grad(const GenerativeParams& gen_shape, const ParamPosterior& post, const RecognitionParams& rec,
                    const Matrix& batch, const EpsBundle& eps, const ParamSet& eps_theta, double lambda = 1.0);

namespace reference {

// Straight serial loop over datapoints accumulating into one gradient set.
Evaluation evaluate_free_energy_serial(const GenerativeParams& gen, const RecognitionParams& rec,
                                       const Matrix& batch, const EpsBundle& eps, double lambda,
                                       bool with_gradients);

}  // namespace reference

}  // namespace dlgm
