#include "dlgm/objective.hpp"

#include <algorithm>
#include <cmath>
#include <exception>

namespace dlgm {

namespace {

constexpr std::size_t kBlock = 8;

}  // namespace

EpsBundle EpsBundle::draw(const std::vector<std::size_t>& latent_dims, std::size_t n, RngStream& stream,
                          double jitter_sigma) {
  EpsBundle b;
  b.eps.resize(n);
  for (auto& point : b.eps)
    for (std::size_t k : latent_dims) point.push_back(stream.standard_normal(k));
  if (jitter_sigma > 0.0) {
    b.jitter.resize(n);
    for (auto& point : b.jitter)
      for (std::size_t k : latent_dims) point.push_back(scaled(stream.standard_normal(k), jitter_sigma));
  }
  return b;
}

GradientSet zero_gradients(const GenerativeParams& gen, const RecognitionParams& rec) {
  GradientSet g = gen.values.zeros_like();
  g.merge(rec.values.zeros_like());
  return g;
}

void check_eps_bundle(const GenerativeParams& gen, const Matrix& batch, const EpsBundle& eps) {
  require_dims(eps.eps.size() == batch.rows(), "eps bundle covers every datapoint");
  require_dims(eps.jitter.empty() || eps.jitter.size() == batch.rows(), "jitter covers every datapoint");
  require_dims(batch.cols() == gen.visible_dim(), "batch width vs visible dim");
  const auto dims = gen.latent_dims();
  for (const auto& point : eps.eps) {
    require_dims(point.size() == dims.size(), "eps layers");
    for (std::size_t l = 0; l < dims.size(); ++l) require_dims(point[l].size() == dims[l], "eps layer width");
  }
}

void accumulate_point(const GenerativeParams& gen, const RecognitionParams& rec, const Vector& v,
                      const LatentSample& eps, const LatentSample* jitter, double lambda, GradientSet* grads,
                      double& recon, double& kl) {
  const EncodeTrace tr = encode_forward(rec, v);
  LatentSample xi;
  for (std::size_t l = 0; l < tr.q.size(); ++l) {
    Vector x = sample(tr.q[l], eps[l]);
    if (jitter) axpy(1.0, (*jitter)[l], x);
    xi.push_back(std::move(x));
    kl += kl_std_normal(tr.q[l]);
  }
  if (!grads) {
    recon -= obs_log_lik(gen.observation(), top_down(gen, xi).obs_params, v);
    return;
  }
  LatentSample d_xi;
  recon += reconstruction_backward(gen, xi, v, lambda, *grads, &d_xi);

  std::vector<HeadGradient> heads(tr.q.size());
  for (std::size_t l = 0; l < tr.q.size(); ++l) {
    const RankOneGaussian& q = tr.q[l];
    const KlGradients klg = kl_gradients(q);
    const FactorVjp fv = factor_apply_vjp(q, eps[l], d_xi[l]);
    HeadGradient& h = heads[l];
    h.d_mu = d_xi[l];
    axpy(lambda, klg.d_mu, h.d_mu);
    h.d_logd.resize(q.dim());
    for (std::size_t i = 0; i < q.dim(); ++i) h.d_logd[i] = q.d[i] * (fv.d_d[i] + lambda * klg.d_d[i]);
    if (rec.mode == CovarianceMode::rank_one) {
      h.d_u = fv.d_u;
      axpy(lambda, klg.d_u, h.d_u);
    }
  }
  encode_backward(rec, v, tr, heads, *grads);
}

namespace {

void finish_terms(FreeEnergyTerms& t, const GenerativeParams& gen, double lambda) {
  t.lambda = lambda;
  t.param_reg = prior_term(gen);
  t.total = lambda * (t.recon + t.latent_kl) + t.param_reg;
}

void check_lambda(double lambda) {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw DomainError("lambda must be positive");
}

}  // namespace

Evaluation evaluate_free_energy(const GenerativeParams& gen, const RecognitionParams& rec, const Matrix& batch,
                                const EpsBundle& eps, double lambda, bool with_gradients) {
  check_lambda(lambda);
  check_eps_bundle(gen, batch, eps);
  require_dims(batch.cols() == rec.input_dim, "batch width vs recognition input");

  const std::size_t n = batch.rows();
  const std::size_t nblocks = (n + kBlock - 1) / kBlock;
  std::vector<GradientSet> block_grads(with_gradients ? nblocks : 0);
  std::vector<double> block_recon(nblocks, 0.0), block_kl(nblocks, 0.0);
  std::vector<std::exception_ptr> errors(nblocks);

#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t b = 0; b < static_cast<std::ptrdiff_t>(nblocks); ++b) {
    try {
      GradientSet* g = nullptr;
      if (with_gradients) {
        block_grads[b] = zero_gradients(gen, rec);
        g = &block_grads[b];
      }
      const std::size_t lo = static_cast<std::size_t>(b) * kBlock;
      const std::size_t hi = std::min(n, lo + kBlock);
      for (std::size_t i = lo; i < hi; ++i) {
        const LatentSample* jit = eps.jitter.empty() ? nullptr : &eps.jitter[i];
        accumulate_point(gen, rec, batch.row_vector(i), eps.eps[i], jit, lambda, g, block_recon[b], block_kl[b]);
      }
    } catch (...) {
      errors[b] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  Evaluation out;
  for (std::size_t b = 0; b < nblocks; ++b) {
    out.terms.recon += block_recon[b];
    out.terms.latent_kl += block_kl[b];
  }
  finish_terms(out.terms, gen, lambda);
  if (with_gradients) {
    out.grads = zero_gradients(gen, rec);
    for (const auto& g : block_grads) out.grads.axpy(1.0, g);
    add_prior_grad(gen, out.grads);
  }
  return out;
}

FreeEnergyTerms free_energy(const GenerativeParams& gen, const RecognitionParams& rec, const Matrix& batch,
                            const EpsBundle& eps, double lambda) {
  return evaluate_free_energy(gen, rec, batch, eps, lambda, false).terms;
}

GradientSet grad_free_energy(const GenerativeParams& gen, const RecognitionParams& rec, const Matrix& batch,
                             const EpsBundle& eps, double lambda) {
  return evaluate_free_energy(gen, rec, batch, eps, lambda, true).grads;
}

std::vector<GradCheckEntry> gradient_check(const GenerativeParams& gen, const RecognitionParams& rec,
                                           const Matrix& batch, const EpsBundle& eps, double lambda, double h) {
  const GradientSet grads = grad_free_energy(gen, rec, batch, eps, lambda);
  GenerativeParams g = gen;
  RecognitionParams r = rec;
  std::vector<GradCheckEntry> out;
  auto probe = [&](ParamSet& values) {
    for (auto& e : values) {
      const Matrix& analytic = grads.at(e.name);
      for (std::size_t i = 0; i < e.value.size(); ++i) {
        double& x = e.value.data()[i];
        const double x0 = x;
        x = x0 + h;
        const double fp = free_energy(g, r, batch, eps, lambda).total;
        x = x0 - h;
        const double fm = free_energy(g, r, batch, eps, lambda).total;
        x = x0;
        if (!std::isfinite(fp) || !std::isfinite(fm)) throw NumericError("non-finite objective probing " + e.name);
        const double numeric = (fp - fm) / (2.0 * h);
        const double a = analytic.data()[i];
        const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
        out.push_back({e.name, i, a, numeric, std::abs(a - numeric) / denom});
      }
    }
  };
  probe(g.values);
  probe(r.values);
  return out;
}

namespace reference {

Evaluation evaluate_free_energy_serial(const GenerativeParams& gen, const RecognitionParams& rec,
                                       const Matrix& batch, const EpsBundle& eps, double lambda,
                                       bool with_gradients) {
  check_lambda(lambda);
  check_eps_bundle(gen, batch, eps);
  Evaluation out;
  if (with_gradients) out.grads = zero_gradients(gen, rec);
  for (std::size_t i = 0; i < batch.rows(); ++i) {
    const LatentSample* jit = eps.jitter.empty() ? nullptr : &eps.jitter[i];
    accumulate_point(gen, rec, batch.row_vector(i), eps.eps[i], jit, lambda,
                     with_gradients ? &out.grads : nullptr, out.terms.recon, out.terms.latent_kl);
  }
  finish_terms(out.terms, gen, lambda);
  if (with_gradients) add_prior_grad(gen, out.grads);
  return out;
}

}  // namespace reference

// ---------------------------------------------------------------------------
// Variational Bayes over generative parameters

ParamPosterior ParamPosterior::around(const GenerativeParams& gen, double tau0) {
  ParamPosterior p{gen.values, gen.values.zeros_like()};
  for (auto& e : p.tau)
    for (double& x : e.value.data()) x = tau0;
  p.validate();
  return p;
}

void ParamPosterior::validate() const {
  if (!m.same_layout(tau)) throw DimensionError("posterior mean and variance layouts differ");
  for (const auto& e : tau)
    for (double x : e.value.data())
      if (!(x > 0.0)) throw DomainError("parameter posterior variance tau must be positive");
}

double vb_param_term(const ParamPosterior& post, double kappa) {
  post.validate();
  const double log_kappa = std::log(kappa);
  double acc = 0.0;
  auto mi = post.m.begin();
  for (auto ti = post.tau.begin(); ti != post.tau.end(); ++ti, ++mi) {
    const auto& mv = mi->value.data();
    const auto& tv = ti->value.data();
    for (std::size_t j = 0; j < tv.size(); ++j)
      acc += mv[j] * mv[j] / kappa + tv[j] / kappa + log_kappa - std::log(tv[j]) - 1.0;
  }
  return 0.5 * acc;
}

ParamSet vb_draw(const ParamPosterior& post, const ParamSet& eps_theta) {
  post.validate();
  if (!post.m.same_layout(eps_theta)) throw DimensionError("eps_theta layout");
  ParamSet theta = post.m;
  auto ti = post.tau.begin();
  auto ei = eps_theta.begin();
  for (auto& e : theta) {
    auto& x = e.value.data();
    for (std::size_t j = 0; j < x.size(); ++j) x[j] += std::sqrt(ti->value.data()[j]) * ei->value.data()[j];
    ++ti;
    ++ei;
  }
  return theta;
}

namespace {

GenerativeParams with_values(const GenerativeParams& shape, ParamSet values) {
  GenerativeParams g = shape;
  if (!g.values.same_layout(values)) throw DimensionError("parameter draw layout");
  g.values = std::move(values);
  return g;
}

}  // namespace

VbTerms vb_free_energy(const GenerativeParams& gen_shape, const ParamPosterior& post, const RecognitionParams& rec,
                       const Matrix& batch, const EpsBundle& eps, const ParamSet& eps_theta, double lambda) {
  const GenerativeParams gen = with_values(gen_shape, vb_draw(post, eps_theta));
  VbTerms out;
  out.data = evaluate_free_energy(gen, rec, batch, eps, lambda, false).terms;
  out.data.param_reg = 0.0;
  out.data.total = lambda * (out.data.recon + out.data.latent_kl);
  out.param_term = vb_param_term(post, gen_shape.kappa);
  out.total = out.data.total + out.param_term;
  return out;
}

VbGradients vb_grad(const GenerativeParams& gen_shape, const ParamPosterior& post, const RecognitionParams& rec,
                    const Matrix& batch, const EpsBundle& eps, const ParamSet& eps_theta, double lambda) {
  const GenerativeParams gen = with_values(gen_shape, vb_draw(post, eps_theta));
  Evaluation ev = evaluate_free_energy(gen, rec, batch, eps, lambda, true);
  // strip the point-estimate prior gradient theta / kappa added by the evaluation
  ev.grads.axpy(-1.0 / gen.kappa, gen.values);

  VbGradients out{post.m.zeros_like(), post.tau.zeros_like(), rec.values.zeros_like()};
  for (const auto& e : rec.values) out.d_rec.at(e.name) = ev.grads.at(e.name);

  const double kappa = gen.kappa;
  auto mi = post.m.begin();
  auto ti = post.tau.begin();
  auto ei = eps_theta.begin();
  auto dm = out.d_m.begin();
  auto dt = out.d_tau.begin();
  for (; mi != post.m.end(); ++mi, ++ti, ++ei, ++dm, ++dt) {
    const auto& g = ev.grads.at(mi->name).data();  // d(data terms)/d(theta)
    for (std::size_t j = 0; j < g.size(); ++j) {
      const double tau = ti->value.data()[j];
      // d theta / d tau = (theta - m) / (2 tau) = eps / (2 sqrt(tau))
      const double dtheta_dtau = ei->value.data()[j] / (2.0 * std::sqrt(tau));
      dm->value.data()[j] = g[j] + mi->value.data()[j] / kappa;
      dt->value.data()[j] = g[j] * dtheta_dtau + 0.5 / kappa - 0.5 / tau;
    }
  }
  return out;
}

}  // namespace dlgm
