#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dlgm/generative.hpp"
#include "dlgm/objective.hpp"
#include "dlgm/params.hpp"
#include "dlgm/recognition.hpp"

namespace dlgm {

struct OptimizerState {
  ParamSet r;  // running mean of squared gradients, keys = gen keys then rec keys
  double rho = 0.9;
  double alpha = 1e-3;
  double delta = 1e-6;

  static OptimizerState for_model(const GenerativeParams& gen, const RecognitionParams& rec, double rho,
                                  double alpha, double delta);
  void validate() const;
};

// r <- rho r + (1 - rho) g^2;  theta <- theta - alpha g / (sqrt(r) + delta)
// Applied to every block of params; grads and state.r must contain its keys.
void rmsprop_update(OptimizerState& state, ParamSet& params, const GradientSet& grads);

// One joint step over generative and recognition parameters.
void rmsprop_step(OptimizerState& state, GenerativeParams& gen, RecognitionParams& rec, const GradientSet& grads);

// Weights (W, G and head matrices) ~ N(0, sigma^2); biases and the
// observation log-variance are set to 0, so the initial posterior has d = 1.
void init_params(GenerativeParams& gen, RecognitionParams& rec, double sigma_init, RngStream& stream);

struct TrainConfig {
  std::size_t minibatch = 200;
  std::size_t steps = 1000;
  double alpha = 1e-3;
  double rho = 0.9;
  double delta = 1e-6;
  double kappa = 1e6;
  double init_sigma = 0.01;
  double jitter_sigma = 0.01;
  CorruptionSpec corruption;
  CovarianceMode covariance = CovarianceMode::diagonal;
  std::uint64_t seed = 1;
  bool early_stop = false;
  std::size_t checkpoint_every = 0;  // 0 disables
  std::string metric_log;
  std::string checkpoint_path;

  // architecture
  std::vector<std::size_t> latent_dims{20};
  std::vector<std::size_t> gen_hidden{64};
  std::vector<std::size_t> rec_hidden{64};
  Activation activation = Activation::rectifier;
  ObsFamily obs = ObsFamily::bernoulli_logits;

  void validate() const;
};

// Builds the generative stack for a config: for each stochastic layer
// (top-down) a noise layer followed by the hidden MLP mapping to the next
// stochastic layer (or to the visible layer at the bottom).
GenerativeParams build_generative(const TrainConfig& cfg, std::size_t visible_dim);
RecognitionParams build_recognition(const TrainConfig& cfg, std::size_t visible_dim);

// Small model and batch for gradient checks: 4 visible units, one stochastic
// layer with K = 3, one deterministic layer of width 5 on both sides, every
// parameter (biases included) ~ N(0, 0.5^2), three datapoints, lambda = 2.5,
// kappa = 10 and jittered eps.
struct GradCheckProblem {
  GenerativeParams gen;
  RecognitionParams rec;
  Matrix batch;
  EpsBundle eps;
  double lambda;
};

GradCheckProblem make_gradcheck_problem(CovarianceMode mode, std::uint64_t seed,
                                        ObsFamily obs = ObsFamily::bernoulli_logits,
                                        Activation activation = Activation::rectifier);

struct TrainState {
  GenerativeParams gen;
  RecognitionParams rec;
  OptimizerState opt;
  std::size_t step = 0;  // completed steps

  static TrainState initial(const TrainConfig& cfg, std::size_t visible_dim);
};

struct MetricRow {
  std::size_t step;
  double total;
  double recon;
  double latent_kl;
  double param_reg;
  double wall_ms;
};

struct TrainHooks {
  std::function<void(const MetricRow&)> on_row;
  std::function<void(const TrainState&)> on_checkpoint;
};

struct TrainResult {
  std::vector<MetricRow> trace;
  bool early_stopped = false;
};

// Minibatch indices for a global step: epochs are seeded permutations of the
// dataset, consumed in consecutive chunks without replacement.
std::vector<std::size_t> minibatch_indices(std::uint64_t seed, std::size_t n, std::size_t minibatch,
                                           std::size_t step);

struct StepDraws {
  Matrix batch;  // corrupted inputs
  EpsBundle eps;
  double lambda;
};

// All randomness consumed by one training step, derived from (seed, step).
StepDraws draw_step(const TrainConfig& cfg, const Matrix& data, std::size_t step);

// Runs cfg.steps - state.step further steps of the joint optimisation loop.
TrainResult train(const TrainConfig& cfg, const Matrix& data, TrainState& state, const TrainHooks& hooks = {});

}  // namespace dlgm
