#pragma once

#include <string>
#include <vector>

#include "dlgm/covariance.hpp"
#include "dlgm/generative.hpp"
#include "dlgm/params.hpp"

namespace dlgm {

enum class CovarianceMode { diagonal, rank_one };
std::string to_string(CovarianceMode m);
CovarianceMode covariance_mode_from_string(const std::string& s);

// Recognition network q(xi | v): a deterministic trunk z = f(... f(W v + b))
// shared by every stochastic layer, then per layer linear heads
//   mu = W_mu z + b_mu,  log d = W_d z + b_d,  u = W_u z + b_u.
// In diagonal mode the u heads do not exist and u is identically zero.
//
// Parameter names: "r.enc.<i>.W", "r.enc.<i>.b", "r.head.<l>.{mu,logd,u}.{W,b}".
struct RecognitionParams {
  std::size_t input_dim = 0;
  std::vector<LayerSpec> encoder;
  std::vector<std::size_t> latent_dims;  // same order as GenerativeParams::latent_dims()
  CovarianceMode mode = CovarianceMode::diagonal;
  ParamSet values;

  static RecognitionParams create(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                                  Activation activation, std::vector<std::size_t> latent_dims,
                                  CovarianceMode mode);

  std::size_t trunk_dim() const { return encoder.empty() ? input_dim : encoder.back().out_dim; }
  void validate() const;
};

std::string rec_head_name(std::size_t layer, const std::string& head, const std::string& part);
std::string rec_enc_name(std::size_t layer, const std::string& part);

using Posterior = std::vector<RankOneGaussian>;

Posterior encode(const RecognitionParams& params, const Vector& v);

struct EncodeTrace {
  std::vector<Vector> pre;
  std::vector<Vector> outputs;
  Vector z;
  Posterior q;
};

EncodeTrace encode_forward(const RecognitionParams& params, const Vector& v);

// Upstream gradients at the head outputs of one stochastic layer.
struct HeadGradient {
  Vector d_mu;
  Vector d_logd;
  Vector d_u;  // ignored in diagonal mode
};

// Accumulates the recognition-parameter gradient implied by per-layer head
// gradients into grads (keys of params.values).
void encode_backward(const RecognitionParams& params, const Vector& v, const EncodeTrace& trace,
                     const std::vector<HeadGradient>& heads, ParamSet& grads);

// xi_l = mu_l + R_l eps_l
LatentSample sample_posterior(const RecognitionParams& params, const Vector& v, const LatentSample& eps);

struct CorruptionSpec {
  enum class Kind { none, bitflip, dropout, gaussian_jitter };
  Kind kind = Kind::none;
  double rate = 0.0;  // flip/drop probability, or sigma for gaussian-jitter

  void validate() const;
  static CorruptionSpec parse(const std::string& text);  // "bitflip:0.1", "dropout:0.2", "jitter:0.05", "none"
  std::string to_string() const;
};

Vector corrupt(const CorruptionSpec& spec, const Vector& v, RngStream& stream);

}  // namespace dlgm
