#include "dlgm/eval.hpp"

#include <cmath>
#include <exception>
#include <sstream>

namespace dlgm {

std::size_t Mask::missing_count() const {
  std::size_t n = 0;
  for (bool o : observed) n += o ? 0 : 1;
  return n;
}

MaskSpec MaskSpec::parse(const std::string& text) {
  MaskSpec spec;
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw UsageError("mask must be mar:<rate> or square:<t>,<l>,<s>");
  const std::string kind = text.substr(0, colon);
  const std::string rest = text.substr(colon + 1);
  if (kind == "mar") {
    spec.kind = Kind::mar;
    spec.rate = parse_real(rest, "mask rate");
  } else if (kind == "square") {
    spec.kind = Kind::square;
    char c1 = 0, c2 = 0;
    std::istringstream in(rest);
    if (!(in >> spec.top >> c1 >> spec.left >> c2 >> spec.side) || c1 != ',' || c2 != ',')
      throw UsageError("square mask must be square:<top>,<left>,<size>");
  } else {
    throw UsageError("unknown mask kind: " + kind);
  }
  return spec;
}

Mask make_mask(const MaskSpec& spec, std::size_t rows, std::size_t cols, RngStream& stream) {
  Mask m{std::vector<bool>(rows * cols, true)};
  if (spec.kind == MaskSpec::Kind::mar) {
    if (!(spec.rate > 0.0 && spec.rate < 1.0)) throw DomainError("MAR rate must lie in (0, 1)");
    for (std::size_t i = 0; i < m.observed.size(); ++i) m.observed[i] = !(stream.uniform() < spec.rate);
  } else {
    if (spec.top + spec.side > rows || spec.left + spec.side > cols)
      throw DomainError("square mask exceeds image bounds");
    for (std::size_t r = spec.top; r < spec.top + spec.side; ++r)
      for (std::size_t c = spec.left; c < spec.left + spec.side; ++c) m.observed[r * cols + c] = false;
  }
  return m;
}

double importance_log_weight(const GenerativeParams& gen, const Posterior& q, const Vector& v,
                             const LatentSample& eps) {
  require_dims(eps.size() == q.size(), "eps layers");
  LatentSample xi;
  double log_prior = 0.0, log_q = 0.0;
  for (std::size_t l = 0; l < q.size(); ++l) {
    xi.push_back(sample(q[l], eps[l]));
    log_prior += log_std_normal(xi.back());
    log_q += log_density(q[l], xi.back());
  }
  const double log_lik = obs_log_lik(gen.observation(), top_down(gen, xi).obs_params, v);
  return log_lik + log_prior - log_q;
}

namespace {

LatentSample draw_latent(const Posterior& q, RngStream& s) {
  LatentSample eps;
  for (const auto& g : q) eps.push_back(s.standard_normal(g.dim()));
  return eps;
}

}  // namespace

double marginal_ll_is(const GenerativeParams& gen, const RecognitionParams& rec, const Vector& v, std::size_t S,
                      RngStream& stream) {
  if (S == 0) throw DomainError("S must be >= 1");
  const Posterior q = encode(rec, v);
  const RngStream base(stream.next_u64());
  std::vector<double> logw(S);
  std::exception_ptr err;
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t s = 0; s < static_cast<std::ptrdiff_t>(S); ++s) {
    try {
      RngStream local = base.derive(static_cast<std::uint64_t>(s));
      logw[s] = importance_log_weight(gen, q, v, draw_latent(q, local));
    } catch (...) {
#pragma omp critical
      err = std::current_exception();
    }
  }
  if (err) std::rethrow_exception(err);
  return log_sum_exp(logw) - std::log(static_cast<double>(S));
}

namespace reference {

double marginal_ll_is_serial(const GenerativeParams& gen, const RecognitionParams& rec, const Vector& v,
                             std::size_t S, RngStream& stream) {
  if (S == 0) throw DomainError("S must be >= 1");
  const Posterior q = encode(rec, v);
  const RngStream base(stream.next_u64());
  std::vector<double> logw(S);
  for (std::size_t s = 0; s < S; ++s) {
    RngStream local = base.derive(s);
    logw[s] = importance_log_weight(gen, q, v, draw_latent(q, local));
  }
  return log_sum_exp(logw) - std::log(static_cast<double>(S));
}

}  // namespace reference

ImputeStep impute_step(const GenerativeParams& gen, const RecognitionParams& rec, const Vector& v, const Mask& mask,
                       RngStream& stream) {
  require_dims(mask.size() == v.size(), "mask size");
  const ObservationLikelihood obs = gen.observation();
  const Posterior q = encode(rec, v);
  LatentSample xi;
  for (const auto& g : q) xi.push_back(sample(g, stream.standard_normal(g.dim())));
  const Vector obs_params = top_down(gen, xi).obs_params;
  const Vector fresh = sample_observation(obs, obs_params, stream);
  const Vector expected = obs_mean(obs, obs_params);
  ImputeStep out{v, v};
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (mask.observed[i]) continue;
    out.sample[i] = fresh[i];
    out.mean[i] = expected[i];
  }
  return out;
}

ImputeTrace impute_chain(const GenerativeParams& gen, const RecognitionParams& rec, const Vector& v0,
                         const Mask& mask, std::size_t iters, RngStream& stream) {
  require_dims(mask.size() == v0.size(), "mask size");
  ImputeTrace tr;
  if (mask.missing_count() == 0) {
    tr.samples.assign(iters + 1, v0);
    tr.means.assign(iters + 1, v0);
    return tr;
  }
  const ObservationLikelihood obs = gen.observation();
  Vector v = v0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (mask.observed[i]) continue;
    v[i] = obs.family == ObsFamily::bernoulli_logits ? (stream.uniform() < 0.5 ? 1.0 : 0.0) : stream.normal();
  }
  tr.samples.push_back(v);
  tr.means.push_back(v);
  for (std::size_t t = 0; t < iters; ++t) {
    ImputeStep st = impute_step(gen, rec, v, mask, stream);
    v = st.sample;
    tr.samples.push_back(std::move(st.sample));
    tr.means.push_back(std::move(st.mean));
  }
  return tr;
}

void GridSpec::validate() const {
  if (!(lo < hi)) throw DomainError("grid needs lo < hi");
  if (resolution < 2) throw DomainError("grid resolution must be >= 2");
}

double GridSpec::coord(std::size_t i) const {
  return lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(resolution - 1);
}

GridSpec GridSpec::parse(const std::string& text) {
  GridSpec g;
  char c1 = 0, c2 = 0;
  std::istringstream in(text);
  if (!(in >> g.lo >> c1 >> g.hi >> c2 >> g.resolution) || c1 != ',' || c2 != ',')
    throw UsageError("grid must be lo,hi,res");
  g.validate();
  return g;
}

Matrix posterior_grid(const GenerativeParams& gen, const Vector& v, const GridSpec& grid, std::size_t layer) {
  grid.validate();
  const auto dims = gen.latent_dims();
  if (layer >= dims.size() || dims[layer] != 2)
    throw DimensionError("posterior grid needs a stochastic layer with exactly 2 latent dimensions");
  const std::size_t res = grid.resolution;
  const ObservationLikelihood obs = gen.observation();
  Matrix logw(res, res);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(res); ++i) {
    LatentSample xi;
    for (std::size_t k : dims) xi.emplace_back(k, 0.0);
    for (std::size_t j = 0; j < res; ++j) {
      xi[layer] = {grid.coord(j), grid.coord(static_cast<std::size_t>(i))};
      logw(i, j) = obs_log_lik(obs, top_down(gen, xi).obs_params, v) + log_std_normal(xi[layer]);
    }
  }
  const double lse = log_sum_exp(logw.data());
  for (double& x : logw.data()) x = std::exp(x - lse);
  return logw;
}

Matrix embed(const RecognitionParams& rec, const Matrix& batch, std::size_t layer) {
  if (layer >= rec.latent_dims.size() || rec.latent_dims[layer] != 2)
    throw DimensionError("embedding needs a 2-D stochastic layer");
  require_dims(batch.cols() == rec.input_dim, "embedding input width");
  Matrix out(batch.rows(), 2);
  for (std::size_t n = 0; n < batch.rows(); ++n) {
    const Posterior q = encode(rec, batch.row_vector(n));
    out(n, 0) = q[layer].mu[0];
    out(n, 1) = q[layer].mu[1];
  }
  return out;
}

}  // namespace dlgm
