#include "dlgm/recognition.hpp"

#include <cmath>

namespace dlgm {

std::string to_string(CovarianceMode m) { return m == CovarianceMode::diagonal ? "diagonal" : "rank-one"; }

CovarianceMode covariance_mode_from_string(const std::string& s) {
  if (s == "diagonal") return CovarianceMode::diagonal;
  if (s == "rank-one" || s == "rank_one" || s == "rank1") return CovarianceMode::rank_one;
  throw UsageError("unknown covariance mode: " + s);
}

std::string rec_head_name(std::size_t layer, const std::string& head, const std::string& part) {
  return "r.head." + std::to_string(layer) + "." + head + "." + part;
}

std::string rec_enc_name(std::size_t layer, const std::string& part) {
  return "r.enc." + std::to_string(layer) + "." + part;
}

RecognitionParams RecognitionParams::create(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                                            Activation activation, std::vector<std::size_t> latent_dims,
                                            CovarianceMode mode) {
  RecognitionParams p;
  p.input_dim = input_dim;
  p.latent_dims = std::move(latent_dims);
  p.mode = mode;
  std::size_t dim = input_dim;
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    p.encoder.push_back(LayerSpec::dense(dim, hidden[i], activation));
    p.values.add(rec_enc_name(i, "W"), Matrix(hidden[i], dim));
    p.values.add(rec_enc_name(i, "b"), Matrix(hidden[i], 1));
    dim = hidden[i];
  }
  for (std::size_t l = 0; l < p.latent_dims.size(); ++l) {
    const std::size_t k = p.latent_dims[l];
    for (const char* head : {"mu", "logd", "u"}) {
      if (mode == CovarianceMode::diagonal && std::string(head) == "u") continue;
      p.values.add(rec_head_name(l, head, "W"), Matrix(k, dim));
      p.values.add(rec_head_name(l, head, "b"), Matrix(k, 1));
    }
  }
  p.validate();
  return p;
}

void RecognitionParams::validate() const {
  std::size_t dim = input_dim;
  for (std::size_t i = 0; i < encoder.size(); ++i) {
    require_dims(encoder[i].in_dim == dim, "encoder layer input");
    require_dims(values.at(rec_enc_name(i, "W")).rows() == encoder[i].out_dim &&
                     values.at(rec_enc_name(i, "W")).cols() == dim,
                 "encoder weight shape");
    dim = encoder[i].out_dim;
  }
  for (std::size_t l = 0; l < latent_dims.size(); ++l) {
    for (const char* head : {"mu", "logd", "u"}) {
      const bool has = values.contains(rec_head_name(l, head, "W"));
      if (std::string(head) == "u") {
        if (has != (mode == CovarianceMode::rank_one))
          throw DimensionError("u head presence does not match covariance mode");
        if (!has) continue;
      } else if (!has) {
        throw DimensionError("missing recognition head " + rec_head_name(l, head, "W"));
      }
      const Matrix& w = values.at(rec_head_name(l, head, "W"));
      require_dims(w.rows() == latent_dims[l] && w.cols() == dim, "head weight shape");
    }
  }
}

namespace {

Vector linear(const ParamSet& values, const std::string& w, const std::string& b, const Vector& x) {
  Vector y = matvec(values.at(w), x);
  axpy(1.0, values.at(b).data(), y);
  return y;
}

}  // namespace

EncodeTrace encode_forward(const RecognitionParams& params, const Vector& v) {
  require_dims(v.size() == params.input_dim, "recognition input");
  EncodeTrace tr;
  Vector a = v;
  for (std::size_t i = 0; i < params.encoder.size(); ++i) {
    Vector pre = linear(params.values, rec_enc_name(i, "W"), rec_enc_name(i, "b"), a);
    a = pre;
    for (double& x : a) x = activate(params.encoder[i].activation, x);
    tr.pre.push_back(std::move(pre));
    tr.outputs.push_back(a);
  }
  tr.z = a;
  for (std::size_t l = 0; l < params.latent_dims.size(); ++l) {
    RankOneGaussian g;
    g.mu = linear(params.values, rec_head_name(l, "mu", "W"), rec_head_name(l, "mu", "b"), tr.z);
    g.d = linear(params.values, rec_head_name(l, "logd", "W"), rec_head_name(l, "logd", "b"), tr.z);
    for (double& x : g.d) x = std::exp(x);
    if (params.mode == CovarianceMode::rank_one)
      g.u = linear(params.values, rec_head_name(l, "u", "W"), rec_head_name(l, "u", "b"), tr.z);
    else
      g.u.assign(g.mu.size(), 0.0);
    tr.q.push_back(std::move(g));
  }
  return tr;
}

Posterior encode(const RecognitionParams& params, const Vector& v) { return encode_forward(params, v).q; }

void encode_backward(const RecognitionParams& params, const Vector& v, const EncodeTrace& trace,
                     const std::vector<HeadGradient>& heads, ParamSet& grads) {
  require_dims(heads.size() == params.latent_dims.size(), "head gradients");
  Vector dz(trace.z.size(), 0.0);
  auto head_back = [&](std::size_t l, const char* head, const Vector& delta) {
    add_outer(grads.at(rec_head_name(l, head, "W")), delta, trace.z);
    axpy(1.0, delta, grads.at(rec_head_name(l, head, "b")).data());
    axpy(1.0, matvec_t(params.values.at(rec_head_name(l, head, "W")), delta), dz);
  };
  for (std::size_t l = 0; l < heads.size(); ++l) {
    head_back(l, "mu", heads[l].d_mu);
    head_back(l, "logd", heads[l].d_logd);
    if (params.mode == CovarianceMode::rank_one) head_back(l, "u", heads[l].d_u);
  }
  Vector delta = std::move(dz);
  for (std::size_t i = params.encoder.size(); i-- > 0;) {
    for (std::size_t k = 0; k < delta.size(); ++k)
      delta[k] *= activate_deriv(params.encoder[i].activation, trace.pre[i][k]);
    const Vector& input = i == 0 ? v : trace.outputs[i - 1];
    add_outer(grads.at(rec_enc_name(i, "W")), delta, input);
    axpy(1.0, delta, grads.at(rec_enc_name(i, "b")).data());
    if (i > 0) delta = matvec_t(params.values.at(rec_enc_name(i, "W")), delta);
  }
}

LatentSample sample_posterior(const RecognitionParams& params, const Vector& v, const LatentSample& eps) {
  const Posterior q = encode(params, v);
  require_dims(eps.size() == q.size(), "eps layers");
  LatentSample xi;
  for (std::size_t l = 0; l < q.size(); ++l) xi.push_back(sample(q[l], eps[l]));
  return xi;
}

void CorruptionSpec::validate() const {
  if (kind == Kind::gaussian_jitter) {
    if (!(rate >= 0.0)) throw DomainError("jitter sigma must be >= 0");
  } else if (!(rate >= 0.0 && rate <= 1.0)) {
    throw DomainError("corruption rate must lie in [0, 1]");
  }
}

CorruptionSpec CorruptionSpec::parse(const std::string& text) {
  if (text.empty() || text == "none") return {};
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw UsageError("corruption spec must be kind:value, got " + text);
  const std::string kind = text.substr(0, colon);
  CorruptionSpec spec;
  spec.rate = parse_real(text.substr(colon + 1), "corruption rate");
  if (kind == "bitflip") spec.kind = Kind::bitflip;
  else if (kind == "dropout") spec.kind = Kind::dropout;
  else if (kind == "jitter" || kind == "gaussian-jitter") spec.kind = Kind::gaussian_jitter;
  else throw UsageError("unknown corruption kind: " + kind);
  spec.validate();
  return spec;
}

std::string CorruptionSpec::to_string() const {
  switch (kind) {
    case Kind::none: return "none";
    case Kind::bitflip: return "bitflip:" + format_real(rate);
    case Kind::dropout: return "dropout:" + format_real(rate);
    case Kind::gaussian_jitter: return "jitter:" + format_real(rate);
  }
  return "none";
}

Vector corrupt(const CorruptionSpec& spec, const Vector& v, RngStream& stream) {
  spec.validate();
  Vector out(v);
  switch (spec.kind) {
    case CorruptionSpec::Kind::none: break;
    case CorruptionSpec::Kind::bitflip:
      for (double x : v)
        if (x != 0.0 && x != 1.0) throw DomainError("bitflip corruption needs binary input");
      for (double& x : out)
        if (stream.uniform() < spec.rate) x = 1.0 - x;
      break;
    case CorruptionSpec::Kind::dropout:
      for (double& x : out)
        if (stream.uniform() < spec.rate) x = 0.0;
      break;
    case CorruptionSpec::Kind::gaussian_jitter:
      for (double& x : out) x += spec.rate * stream.normal();
      break;
  }
  return out;
}

}  // namespace dlgm
