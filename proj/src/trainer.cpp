#include "dlgm/trainer.hpp"

#include <chrono>
#include <cmath>
#include <deque>

namespace dlgm {

namespace {

constexpr std::uint64_t kPermTag = 0x7065726d;  // "perm"
constexpr std::uint64_t kStepTag = 0x73746570;  // "step"
constexpr std::size_t kAverageWindow = 100;

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

OptimizerState OptimizerState::for_model(const GenerativeParams& gen, const RecognitionParams& rec, double rho,
                                         double alpha, double delta) {
  OptimizerState s{zero_gradients(gen, rec), rho, alpha, delta};
  s.validate();
  return s;
}

void OptimizerState::validate() const {
  if (!(rho > 0.0 && rho < 1.0)) throw DomainError("rmsprop rho must lie in (0, 1)");
  if (!(alpha > 0.0) || !(delta > 0.0)) throw DomainError("rmsprop alpha and delta must be positive");
}

void rmsprop_update(OptimizerState& state, ParamSet& params, const GradientSet& grads) {
  for (auto& e : params) {
    const Matrix& g = grads.at(e.name);
    Matrix& r = state.r.at(e.name);
    require_dims(g.same_shape(e.value) && r.same_shape(e.value), "rmsprop block " + e.name);
    auto& theta = e.value.data();
    auto& rr = r.data();
    const auto& gg = g.data();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      rr[i] = state.rho * rr[i] + (1.0 - state.rho) * gg[i] * gg[i];
      theta[i] -= state.alpha * gg[i] / (std::sqrt(rr[i]) + state.delta);
    }
  }
}

void rmsprop_step(OptimizerState& state, GenerativeParams& gen, RecognitionParams& rec, const GradientSet& grads) {
  state.validate();
  rmsprop_update(state, gen.values, grads);
  rmsprop_update(state, rec.values, grads);
}

void init_params(GenerativeParams& gen, RecognitionParams& rec, double sigma_init, RngStream& stream) {
  if (!(sigma_init > 0.0)) throw DomainError("init sigma must be positive");
  auto fill = [&](ParamSet& ps) {
    for (auto& e : ps) {
      const bool zero = ends_with(e.name, ".b") || e.name == kObsLogVarName;
      for (double& x : e.value.data()) x = zero ? 0.0 : sigma_init * stream.normal();
    }
  };
  fill(gen.values);
  fill(rec.values);
}

void TrainConfig::validate() const {
  if (minibatch == 0) throw UsageError("minibatch must be >= 1");
  if (!(alpha > 0.0) || !(delta > 0.0) || !(kappa > 0.0) || !(init_sigma > 0.0))
    throw UsageError("alpha, delta, kappa and init_sigma must be positive");
  if (!(rho > 0.0 && rho < 1.0)) throw UsageError("rho must lie in (0, 1)");
  if (!(jitter_sigma >= 0.0)) throw UsageError("jitter sigma must be >= 0");
  if (latent_dims.empty()) throw UsageError("at least one stochastic layer is required");
  corruption.validate();
}

GenerativeParams build_generative(const TrainConfig& cfg, std::size_t visible_dim) {
  std::vector<LayerSpec> layers;
  for (std::size_t l = 0; l < cfg.latent_dims.size(); ++l) {
    const std::size_t k = cfg.latent_dims[l];
    layers.push_back(LayerSpec::stochastic(k));
    const std::size_t out = l + 1 < cfg.latent_dims.size() ? cfg.latent_dims[l + 1] : visible_dim;
    std::size_t dim = k;
    for (std::size_t w : cfg.gen_hidden) {
      layers.push_back(LayerSpec::dense(dim, w, cfg.activation));
      dim = w;
    }
    layers.push_back(LayerSpec::dense(dim, out, Activation::identity));
  }
  return GenerativeParams::create(std::move(layers), cfg.obs, cfg.kappa);
}

RecognitionParams build_recognition(const TrainConfig& cfg, std::size_t visible_dim) {
  return RecognitionParams::create(visible_dim, cfg.rec_hidden, cfg.activation, cfg.latent_dims, cfg.covariance);
}

GradCheckProblem make_gradcheck_problem(CovarianceMode mode, std::uint64_t seed, ObsFamily obs,
                                        Activation activation) {
  TrainConfig cfg;
  cfg.latent_dims = {3};
  cfg.gen_hidden = {5};
  cfg.rec_hidden = {5};
  cfg.covariance = mode;
  cfg.obs = obs;
  cfg.activation = activation;
  cfg.kappa = 10.0;
  GradCheckProblem p{build_generative(cfg, 4), build_recognition(cfg, 4), Matrix(3, 4), {}, 2.5};
  RngStream stream(seed);
  for (ParamSet* ps : {&p.gen.values, &p.rec.values})
    for (auto& e : *ps)
      for (double& x : e.value.data()) x = 0.5 * stream.normal();
  for (double& x : p.batch.data())
    x = obs == ObsFamily::bernoulli_logits ? (stream.uniform() < 0.5 ? 1.0 : 0.0) : stream.normal();
  p.eps = EpsBundle::draw(cfg.latent_dims, p.batch.rows(), stream, 0.01);
  return p;
}

TrainState TrainState::initial(const TrainConfig& cfg, std::size_t visible_dim) {
  cfg.validate();
  TrainState st{build_generative(cfg, visible_dim), build_recognition(cfg, visible_dim), {}, 0};
  RngStream init_stream = RngStream(cfg.seed).derive(0);
  init_params(st.gen, st.rec, cfg.init_sigma, init_stream);
  st.opt = OptimizerState::for_model(st.gen, st.rec, cfg.rho, cfg.alpha, cfg.delta);
  return st;
}

std::vector<std::size_t> minibatch_indices(std::uint64_t seed, std::size_t n, std::size_t minibatch,
                                           std::size_t step) {
  if (n == 0) throw DataError("empty dataset");
  const std::size_t b = std::min(minibatch, n);
  const std::size_t per_epoch = n / b;
  const std::size_t epoch = step / per_epoch;
  const std::size_t pos = step % per_epoch;
  const auto perm = RngStream(seed).derive(kPermTag).derive(epoch).permutation(n);
  return {perm.begin() + static_cast<std::ptrdiff_t>(pos * b), perm.begin() + static_cast<std::ptrdiff_t>((pos + 1) * b)};
}

StepDraws draw_step(const TrainConfig& cfg, const Matrix& data, std::size_t step) {
  const auto idx = minibatch_indices(cfg.seed, data.rows(), cfg.minibatch, step);
  RngStream stream = RngStream(cfg.seed).derive(kStepTag).derive(step);
  StepDraws d;
  d.batch = Matrix(idx.size(), data.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const Vector v = corrupt(cfg.corruption, data.row_vector(idx[i]), stream);
    std::copy(v.begin(), v.end(), d.batch.row(i).begin());
  }
  d.eps = EpsBundle::draw(cfg.latent_dims, idx.size(), stream, cfg.jitter_sigma);
  d.lambda = static_cast<double>(data.rows()) / static_cast<double>(idx.size());
  return d;
}

TrainResult train(const TrainConfig& cfg, const Matrix& data, TrainState& state, const TrainHooks& hooks) {
  cfg.validate();
  if (data.rows() == 0) throw DataError("empty dataset");
  if (!all_finite(data.data())) throw DataError("dataset contains non-finite values");
  const auto start = std::chrono::steady_clock::now();
  TrainResult result;
  std::deque<double> window;
  double window_sum = 0.0;
  std::deque<double> history;  // moving averages, one per step once the window is full
  const double n = static_cast<double>(data.rows());

  while (state.step < cfg.steps) {
    const StepDraws d = draw_step(cfg, data, state.step);
    Evaluation ev;
    try {
      ev = evaluate_free_energy(state.gen, state.rec, d.batch, d.eps, d.lambda, true);
    } catch (const DomainError& e) {
      // a diverged encoder shows up as invalid posterior parameters
      throw NumericError(std::string(e.what()) + " at step " + std::to_string(state.step));
    }
    const FreeEnergyTerms& t = ev.terms;
    const std::pair<const char*, double> checks[] = {
        {"recon", t.recon}, {"latent_kl", t.latent_kl}, {"param_reg", t.param_reg}, {"total", t.total}};
    for (const auto& [name, value] : checks)
      if (!std::isfinite(value))
        throw NumericError(std::string("non-finite ") + name + " at step " + std::to_string(state.step));
    for (const auto& e : ev.grads)
      if (!all_finite(e.value.data()))
        throw NumericError("non-finite gradient in " + e.name + " at step " + std::to_string(state.step));

    rmsprop_step(state.opt, state.gen, state.rec, ev.grads);
    ++state.step;

    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    MetricRow row{state.step, t.total, t.recon, t.latent_kl, t.param_reg, ms};
    result.trace.push_back(row);
    if (hooks.on_row) hooks.on_row(row);
    if (cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0 && hooks.on_checkpoint)
      hooks.on_checkpoint(state);

    if (cfg.early_stop) {
      const double per_point = t.total / n;
      window.push_back(per_point);
      window_sum += per_point;
      if (window.size() > kAverageWindow) {
        window_sum -= window.front();
        window.pop_front();
      }
      if (window.size() == kAverageWindow) {
        history.push_back(window_sum / kAverageWindow);
        if (history.size() > kAverageWindow) {
          const double prev = history.front();
          history.pop_front();
          const double cur = history.back();
          if ((prev - cur) / std::abs(prev) < 1e-4) {
            result.early_stopped = true;
            break;
          }
        }
      }
    }
  }
  return result;
}

}  // namespace dlgm
