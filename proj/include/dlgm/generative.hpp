#pragma once

#include <string>
#include <vector>

#include "dlgm/numcore.hpp"
#include "dlgm/params.hpp"

namespace dlgm {

enum class Activation { rectifier, tanh, identity };
enum class LayerKind { deterministic, stochastic };

double activate(Activation a, double x);
// Derivative as a function of the pre-activation; the rectifier uses 0 at 0.
double activate_deriv(Activation a, double x);
std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

struct LayerSpec {
  LayerKind kind = LayerKind::deterministic;
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  Activation activation = Activation::identity;
  // Stochastic layers only: store G as a K-vector diagonal instead of K x K.
  bool diagonal_noise = false;

  static LayerSpec dense(std::size_t in, std::size_t out, Activation a) {
    return {LayerKind::deterministic, in, out, a, false};
  }
  static LayerSpec stochastic(std::size_t k, bool diagonal = false) {
    return {LayerKind::stochastic, k, k, Activation::identity, diagonal};
  }
};

enum class ObsFamily { bernoulli_logits, gaussian_diagonal };
std::string to_string(ObsFamily f);
ObsFamily obs_family_from_string(const std::string& s);

struct ObservationLikelihood {
  ObsFamily family = ObsFamily::bernoulli_logits;
  Vector log_var;  // gaussian only
};

// Deep latent Gaussian model, layers listed top-down. A stochastic layer adds
// G xi to the incoming activation (or starts the stack with G xi); a
// deterministic layer maps a -> f(W a + b). The output of the last layer is
// the observation parameter vector (logits or means).
//
// Parameter names: "g.<i>.W", "g.<i>.b", "g.<i>.G" for layer i, and
// "g.obs.logvar" (1 x D) for the gaussian family.
struct GenerativeParams {
  std::vector<LayerSpec> layers;
  ObsFamily obs_family = ObsFamily::bernoulli_logits;
  double kappa = 1e6;
  ParamSet values;

  // Zero-valued parameters for the given architecture.
  static GenerativeParams create(std::vector<LayerSpec> layers, ObsFamily family, double kappa);

  void validate() const;
  std::size_t visible_dim() const;
  std::vector<std::size_t> latent_dims() const;  // stochastic layers, top-down
  ObservationLikelihood observation() const;
};

std::string gen_weight_name(std::size_t layer);
std::string gen_bias_name(std::size_t layer);
std::string gen_noise_name(std::size_t layer);
inline const char* kObsLogVarName = "g.obs.logvar";

using LatentSample = std::vector<Vector>;  // one vector per stochastic layer, top-down

struct TopDownResult {
  std::vector<Vector> pre;      // per layer: pre-activation (det) or sum (stoch)
  std::vector<Vector> outputs;  // per layer output activation
  std::vector<Vector> h;        // per stochastic layer, top-down
  Vector obs_params;
};

TopDownResult top_down(const GenerativeParams& params, const LatentSample& xi);

double obs_log_lik(const ObservationLikelihood& obs, const Vector& obs_params, const Vector& v);

struct ObsLogLikGrad {
  Vector d_params;
  Vector d_log_var;  // empty for bernoulli
};
ObsLogLikGrad obs_log_lik_grad(const ObservationLikelihood& obs, const Vector& obs_params, const Vector& v);

// Expected observation (probabilities for bernoulli, means for gaussian).
Vector obs_mean(const ObservationLikelihood& obs, const Vector& obs_params);
Vector sample_observation(const ObservationLikelihood& obs, const Vector& obs_params, RngStream& stream);

struct AncestralSample {
  LatentSample xi;
  std::vector<Vector> h;
  Vector obs_params;
  Vector v;
};

AncestralSample ancestral_sample(const GenerativeParams& params, RngStream& stream);

// ||theta^g||^2 / (2 kappa)
double prior_term(const GenerativeParams& params);

// Adds scale * d(-log p(v | h(xi)))/d(theta^g) into grads (keys of params.values)
// and, when d_xi is non-null, writes scale * d(-log p)/d(xi). Returns -log p.
double reconstruction_backward(const GenerativeParams& params, const LatentSample& xi, const Vector& v,
                               double scale, ParamSet& grads, LatentSample* d_xi);

// Adds theta / kappa into grads.
void add_prior_grad(const GenerativeParams& params, ParamSet& grads);

// Exact gradient of -log p(v | h(xi)) + ||theta^g||^2 / (2 kappa).
GradientSet grad_generative(const GenerativeParams& params, const LatentSample& xi, const Vector& v);

}  // namespace dlgm
