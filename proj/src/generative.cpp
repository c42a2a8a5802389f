#include "dlgm/generative.hpp"

#include <cmath>

namespace dlgm {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

}  // namespace

double activate(Activation a, double x) {
  switch (a) {
    case Activation::rectifier: return x > 0.0 ? x : 0.0;
    case Activation::tanh: return std::tanh(x);
    case Activation::identity: return x;
  }
  return x;
}

double activate_deriv(Activation a, double x) {
  switch (a) {
    case Activation::rectifier: return x > 0.0 ? 1.0 : 0.0;
    case Activation::tanh: {
      const double t = std::tanh(x);
      return 1.0 - t * t;
    }
    case Activation::identity: return 1.0;
  }
  return 1.0;
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::rectifier: return "rectifier";
    case Activation::tanh: return "tanh";
    case Activation::identity: return "identity";
  }
  return "identity";
}

Activation activation_from_string(const std::string& s) {
  if (s == "rectifier" || s == "relu") return Activation::rectifier;
  if (s == "tanh") return Activation::tanh;
  if (s == "identity" || s == "linear") return Activation::identity;
  throw UsageError("unknown activation: " + s);
}

std::string to_string(ObsFamily f) {
  return f == ObsFamily::bernoulli_logits ? "bernoulli-logits" : "gaussian-diagonal";
}

ObsFamily obs_family_from_string(const std::string& s) {
  if (s == "bernoulli-logits" || s == "bernoulli") return ObsFamily::bernoulli_logits;
  if (s == "gaussian-diagonal" || s == "gaussian") return ObsFamily::gaussian_diagonal;
  throw UsageError("unknown observation family: " + s);
}

std::string gen_weight_name(std::size_t layer) { return "g." + std::to_string(layer) + ".W"; }
std::string gen_bias_name(std::size_t layer) { return "g." + std::to_string(layer) + ".b"; }
std::string gen_noise_name(std::size_t layer) { return "g." + std::to_string(layer) + ".G"; }

GenerativeParams GenerativeParams::create(std::vector<LayerSpec> layers, ObsFamily family, double kappa) {
  GenerativeParams p;
  p.layers = std::move(layers);
  p.obs_family = family;
  p.kappa = kappa;
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    const LayerSpec& l = p.layers[i];
    if (l.kind == LayerKind::stochastic) {
      p.values.add(gen_noise_name(i), l.diagonal_noise ? Matrix(l.out_dim, 1) : Matrix(l.out_dim, l.out_dim));
    } else {
      p.values.add(gen_weight_name(i), Matrix(l.out_dim, l.in_dim));
      p.values.add(gen_bias_name(i), Matrix(l.out_dim, 1));
    }
  }
  if (family == ObsFamily::gaussian_diagonal) p.values.add(kObsLogVarName, Matrix(1, p.visible_dim()));
  p.validate();
  return p;
}

void GenerativeParams::validate() const {
  if (layers.empty() || layers.front().kind != LayerKind::stochastic)
    throw DimensionError("generative stack must start with a stochastic layer");
  if (!(kappa > 0.0)) throw DomainError("kappa must be positive");
  std::size_t dim = 0;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    if (l.kind == LayerKind::stochastic) {
      require_dims(l.in_dim == l.out_dim, "stochastic layer is square");
      require_dims(i == 0 || dim == l.out_dim, "stochastic layer " + std::to_string(i) + " input");
      const Matrix& g = values.at(gen_noise_name(i));
      require_dims(g.rows() == l.out_dim && g.cols() == (l.diagonal_noise ? 1 : l.out_dim), "noise matrix shape");
    } else {
      require_dims(dim == l.in_dim, "deterministic layer " + std::to_string(i) + " input");
      const Matrix& w = values.at(gen_weight_name(i));
      require_dims(w.rows() == l.out_dim && w.cols() == l.in_dim, "weight shape");
      require_dims(values.at(gen_bias_name(i)).rows() == l.out_dim, "bias shape");
    }
    dim = l.out_dim;
  }
  if (obs_family == ObsFamily::gaussian_diagonal)
    require_dims(values.at(kObsLogVarName).size() == dim, "observation log-variance");
}

std::size_t GenerativeParams::visible_dim() const { return layers.back().out_dim; }

std::vector<std::size_t> GenerativeParams::latent_dims() const {
  std::vector<std::size_t> dims;
  for (const auto& l : layers)
    if (l.kind == LayerKind::stochastic) dims.push_back(l.out_dim);
  return dims;
}

ObservationLikelihood GenerativeParams::observation() const {
  ObservationLikelihood obs{obs_family, {}};
  if (obs_family == ObsFamily::gaussian_diagonal) obs.log_var = values.at(kObsLogVarName).data();
  return obs;
}

TopDownResult top_down(const GenerativeParams& params, const LatentSample& xi) {
  const auto dims = params.latent_dims();
  require_dims(xi.size() == dims.size(), "number of stochastic layers");
  TopDownResult r;
  r.pre.resize(params.layers.size());
  r.outputs.resize(params.layers.size());
  Vector a;
  std::size_t s = 0;
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    const LayerSpec& l = params.layers[i];
    if (l.kind == LayerKind::stochastic) {
      require_dims(xi[s].size() == l.out_dim, "xi for stochastic layer " + std::to_string(s));
      const Matrix& g = params.values.at(gen_noise_name(i));
      Vector noise(l.out_dim);
      if (l.diagonal_noise) {
        for (std::size_t k = 0; k < l.out_dim; ++k) noise[k] = g(k, 0) * xi[s][k];
      } else {
        noise = matvec(g, xi[s]);
      }
      a = a.empty() ? std::move(noise) : add(a, noise);
      r.pre[i] = a;
      r.h.push_back(a);
      ++s;
    } else {
      Vector z = matvec(params.values.at(gen_weight_name(i)), a);
      axpy(1.0, params.values.at(gen_bias_name(i)).data(), z);
      r.pre[i] = z;
      for (double& x : z) x = activate(l.activation, x);
      a = std::move(z);
    }
    r.outputs[i] = a;
  }
  r.obs_params = a;
  return r;
}

double obs_log_lik(const ObservationLikelihood& obs, const Vector& obs_params, const Vector& v) {
  require_dims(obs_params.size() == v.size(), "observation size");
  double ll = 0.0;
  if (obs.family == ObsFamily::bernoulli_logits) {
    // log sigma(x) = -softplus(-x), log(1 - sigma(x)) = -softplus(x)
    for (std::size_t i = 0; i < v.size(); ++i) ll += v[i] * obs_params[i] - softplus(obs_params[i]);
  } else {
    require_dims(obs.log_var.size() == v.size(), "observation log-variance");
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double var = std::exp(obs.log_var[i]);
      if (!(var > 0.0) || !std::isfinite(var)) throw DomainError("gaussian observation variance must be positive");
      const double r = v[i] - obs_params[i];
      ll += -0.5 * (kLog2Pi + obs.log_var[i] + r * r / var);
    }
  }
  return ll;
}

ObsLogLikGrad obs_log_lik_grad(const ObservationLikelihood& obs, const Vector& obs_params, const Vector& v) {
  require_dims(obs_params.size() == v.size(), "observation size");
  ObsLogLikGrad g{Vector(v.size()), {}};
  if (obs.family == ObsFamily::bernoulli_logits) {
    for (std::size_t i = 0; i < v.size(); ++i) g.d_params[i] = v[i] - sigmoid(obs_params[i]);
  } else {
    g.d_log_var.resize(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double inv_var = std::exp(-obs.log_var[i]);
      const double r = v[i] - obs_params[i];
      g.d_params[i] = r * inv_var;
      g.d_log_var[i] = -0.5 + 0.5 * r * r * inv_var;
    }
  }
  return g;
}

Vector obs_mean(const ObservationLikelihood& obs, const Vector& obs_params) {
  if (obs.family == ObsFamily::gaussian_diagonal) return obs_params;
  Vector p(obs_params.size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = sigmoid(obs_params[i]);
  return p;
}

Vector sample_observation(const ObservationLikelihood& obs, const Vector& obs_params, RngStream& stream) {
  Vector v(obs_params.size());
  if (obs.family == ObsFamily::bernoulli_logits) {
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = stream.uniform() < sigmoid(obs_params[i]) ? 1.0 : 0.0;
  } else {
    for (std::size_t i = 0; i < v.size(); ++i)
      v[i] = obs_params[i] + std::exp(0.5 * obs.log_var[i]) * stream.normal();
  }
  return v;
}

AncestralSample ancestral_sample(const GenerativeParams& params, RngStream& stream) {
  AncestralSample out;
  for (std::size_t k : params.latent_dims()) out.xi.push_back(stream.standard_normal(k));
  TopDownResult td = top_down(params, out.xi);
  out.h = std::move(td.h);
  out.obs_params = std::move(td.obs_params);
  out.v = sample_observation(params.observation(), out.obs_params, stream);
  return out;
}

double prior_term(const GenerativeParams& params) { return params.values.squared_norm() / (2.0 * params.kappa); }

void add_prior_grad(const GenerativeParams& params, ParamSet& grads) {
  for (const auto& e : params.values) {
    Matrix& g = grads.at(e.name);
    require_dims(g.same_shape(e.value), "prior gradient block " + e.name);
    for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] += e.value.data()[i] / params.kappa;
  }
}

double reconstruction_backward(const GenerativeParams& params, const LatentSample& xi, const Vector& v,
                               double scale, ParamSet& grads, LatentSample* d_xi) {
  const TopDownResult td = top_down(params, xi);
  const ObservationLikelihood obs = params.observation();
  const double nll = -obs_log_lik(obs, td.obs_params, v);
  const ObsLogLikGrad og = obs_log_lik_grad(obs, td.obs_params, v);

  // delta = d(scale * nll) / d(layer output), walked bottom-up
  Vector delta = scaled(og.d_params, -scale);
  if (obs.family == ObsFamily::gaussian_diagonal)
    axpy(-scale, og.d_log_var, grads.at(kObsLogVarName).data());

  if (d_xi) d_xi->assign(xi.size(), {});
  std::size_t s = xi.size();
  for (std::size_t i = params.layers.size(); i-- > 0;) {
    const LayerSpec& l = params.layers[i];
    if (l.kind == LayerKind::stochastic) {
      --s;
      Matrix& dg = grads.at(gen_noise_name(i));
      const Matrix& g = params.values.at(gen_noise_name(i));
      if (l.diagonal_noise) {
        for (std::size_t k = 0; k < l.out_dim; ++k) dg(k, 0) += delta[k] * xi[s][k];
        if (d_xi) {
          Vector dx(l.out_dim);
          for (std::size_t k = 0; k < l.out_dim; ++k) dx[k] = g(k, 0) * delta[k];
          (*d_xi)[s] = std::move(dx);
        }
      } else {
        add_outer(dg, delta, xi[s]);
        if (d_xi) (*d_xi)[s] = matvec_t(g, delta);
      }
      // the sum passes delta through unchanged to the layer above
    } else {
      const Vector& pre = td.pre[i];
      for (std::size_t k = 0; k < delta.size(); ++k) delta[k] *= activate_deriv(l.activation, pre[k]);
      const Vector& input = td.outputs[i - 1];
      add_outer(grads.at(gen_weight_name(i)), delta, input);
      axpy(1.0, delta, grads.at(gen_bias_name(i)).data());
      delta = matvec_t(params.values.at(gen_weight_name(i)), delta);
    }
  }
  return nll;
}

GradientSet grad_generative(const GenerativeParams& params, const LatentSample& xi, const Vector& v) {
  GradientSet grads = params.values.zeros_like();
  reconstruction_backward(params, xi, v, 1.0, grads, nullptr);
  add_prior_grad(params, grads);
  return grads;
}

}  // namespace dlgm
