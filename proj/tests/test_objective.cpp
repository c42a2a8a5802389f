#include <omp.h>

#include <cmath>
#include <numbers>

#include "doctest.h"
#include "dlgm/objective.hpp"
#include "dlgm/trainer.hpp"
#include "oracles.hpp"

using namespace dlgm;

namespace {

double max_rel(const std::vector<GradCheckEntry>& entries) {
  double worst = 0.0;
  for (const auto& e : entries) worst = std::max(worst, e.rel_err);
  return worst;
}

Matrix rows_of(const Matrix& m, std::size_t from, std::size_t to) {
  Matrix out(to - from, m.cols());
  for (std::size_t i = from; i < to; ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out(i - from, j) = m(i, j);
  return out;
}

EpsBundle eps_of(const EpsBundle& e, std::size_t from, std::size_t to) {
  EpsBundle out{{e.eps.begin() + from, e.eps.begin() + to}, {}};
  if (!e.jitter.empty()) out.jitter.assign(e.jitter.begin() + from, e.jitter.begin() + to);
  return out;
}

double softplus_ref(double a) { return a > 0 ? a + std::log1p(std::exp(-a)) : std::log1p(std::exp(a)); }

}  // namespace

TEST_CASE("latent KL vanishes for a standard-normal encoder") {
  GradCheckProblem p = make_gradcheck_problem(CovarianceMode::rank_one, 1);
  for (auto& e : p.rec.values)
    for (double& x : e.value.data()) x = 0.0;
  const FreeEnergyTerms t = free_energy(p.gen, p.rec, p.batch, p.eps, 1.0);
  CHECK(t.latent_kl == 0.0);
}

TEST_CASE("likelihood constant in xi") {
  GradCheckProblem p = make_gradcheck_problem(CovarianceMode::rank_one, 2);
  p.gen.values.at(gen_noise_name(0)) = Matrix(3, 3);
  p.gen.kappa = 1e300;
  for (auto& e : p.rec.values)
    for (double& x : e.value.data()) x = 0.0;
  // logits are the constant output of the decoder at xi = 0
  const Vector logits = top_down(p.gen, {Vector(3, 0.0)}).outputs.back();
  double log_lik = 0.0;
  for (std::size_t n = 0; n < p.batch.rows(); ++n)
    for (std::size_t i = 0; i < 4; ++i) log_lik += p.batch(n, i) * logits[i] - softplus_ref(logits[i]);
  const double lambda = 3.0;
  const FreeEnergyTerms t = free_energy(p.gen, p.rec, p.batch, p.eps, lambda);
  CHECK(t.total == doctest::Approx(-lambda * log_lik).epsilon(1e-12));

  SUBCASE("mu gradient reduces to the KL term") {
    GradCheckProblem q = make_gradcheck_problem(CovarianceMode::rank_one, 3);
    q.gen.values.at(gen_noise_name(0)) = Matrix(3, 3);
    const Matrix one = rows_of(q.batch, 0, 1);
    const EpsBundle e1 = eps_of(q.eps, 0, 1);
    const GradientSet g = grad_free_energy(q.gen, q.rec, one, e1, 1.0);
    const Vector mu = encode(q.rec, one.row_vector(0))[0].mu;
    const Matrix& gb = g.at(rec_head_name(0, "mu", "b"));
    for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(gb(i, 0) - mu[i]) < 1e-12 * std::max(1.0, std::abs(mu[i])));
  }
}

TEST_CASE("linear-Gaussian model against a straight-line evaluation") {
  const std::size_t D = 5, K = 3;
  const oracle::LinearGaussianToy toy = oracle::linear_gaussian_toy(D, K, 4);
  RngStream s(5);
  Matrix batch(4, D);
  for (double& x : batch.data()) x = 2.0 * s.normal();
  const EpsBundle eps = EpsBundle::draw({K}, 4, s);
  const double lambda = 1.7;

  // q has d = 1 and precision I + u u^T, so R = I - ((1 - sqrt(eta)) / s) u u^T
  const Vector u = toy.rec.values.at(rec_head_name(0, "u", "b")).data();
  const double su = squared_norm(u), eta = 1.0 / (1.0 + su);
  const double coef = (1.0 - std::sqrt(eta)) / su;
  double recon = 0.0, kl = 0.0;
  for (std::size_t n = 0; n < 4; ++n) {
    const Vector v = batch.row_vector(n);
    const Vector m = toy.post_mean(v);
    const Vector& e = eps.eps[n][0];
    const double ue = dot(u, e);
    Vector xi(K);
    for (std::size_t i = 0; i < K; ++i) xi[i] = m[i] + e[i] - coef * u[i] * ue;
    for (std::size_t j = 0; j < D; ++j) {
      double mean = toy.b[j];
      for (std::size_t i = 0; i < K; ++i) mean += toy.A(j, i) * xi[i];
      const double r = v[j] - mean;
      recon += 0.5 * (std::log(2.0 * std::numbers::pi * toy.sig2[j]) + r * r / toy.sig2[j]);
    }
    kl += oracle::kl_dense(m, toy.post_cov);
  }
  double sq = static_cast<double>(K);  // G = I
  for (double x : toy.A.data()) sq += x * x;
  for (double x : toy.b) sq += x * x;
  for (double x : toy.sig2) sq += std::log(x) * std::log(x);
  const double reg = sq / (2.0 * toy.gen.kappa);

  const FreeEnergyTerms t = free_energy(toy.gen, toy.rec, batch, eps, lambda);
  CHECK(std::abs(t.recon - recon) <= 1e-10 * std::abs(recon));
  CHECK(std::abs(t.latent_kl - kl) <= 1e-10 * std::max(1.0, kl));
  CHECK(std::abs(t.param_reg - reg) <= 1e-10 * reg);
  const double total = lambda * (recon + kl) + reg;
  CHECK(std::abs(t.total - total) <= 1e-10 * std::abs(total));
  CHECK(t.total == t.lambda * (t.recon + t.latent_kl) + t.param_reg);
}

TEST_CASE("gradients match finite differences") {
  for (CovarianceMode mode : {CovarianceMode::diagonal, CovarianceMode::rank_one})
    for (ObsFamily obs : {ObsFamily::bernoulli_logits, ObsFamily::gaussian_diagonal})
      for (Activation act : {Activation::rectifier, Activation::tanh}) {
        CAPTURE(to_string(mode));
        CAPTURE(to_string(obs));
        CAPTURE(to_string(act));
        const GradCheckProblem p = make_gradcheck_problem(mode, 6, obs, act);
        const auto entries = gradient_check(p.gen, p.rec, p.batch, p.eps, p.lambda);
        CHECK(entries.size() == p.gen.values.total_size() + p.rec.values.total_size());
        CHECK(max_rel(entries) <= 1e-6);
      }
}

TEST_CASE("lambda scales only the data terms") {
  const GradCheckProblem p = make_gradcheck_problem(CovarianceMode::rank_one, 7);
  const FreeEnergyTerms a = free_energy(p.gen, p.rec, p.batch, p.eps, 1.5);
  const FreeEnergyTerms b = free_energy(p.gen, p.rec, p.batch, p.eps, 3.0);
  CHECK(a.param_reg == b.param_reg);
  CHECK(b.total - b.param_reg == doctest::Approx(2.0 * (a.total - a.param_reg)).epsilon(1e-13));

  GradientSet ga = grad_free_energy(p.gen, p.rec, p.batch, p.eps, 1.5);
  GradientSet gb = grad_free_energy(p.gen, p.rec, p.batch, p.eps, 3.0);
  ParamSet prior = p.gen.values;
  prior.scale(1.0 / p.gen.kappa);
  ga.axpy(-1.0, prior);
  gb.axpy(-1.0, prior);
  const Vector fa = ga.flatten(), fb = gb.flatten();
  for (std::size_t i = 0; i < fa.size(); ++i)
    CHECK(std::abs(fb[i] - 2.0 * fa[i]) <= 1e-12 * std::max(1.0, std::abs(fb[i])));

  CHECK_THROWS_AS(free_energy(p.gen, p.rec, p.batch, p.eps, 0.0), DomainError);
  CHECK_THROWS_AS(free_energy(p.gen, p.rec, p.batch, p.eps, -1.0), DomainError);
}

TEST_CASE("dimension mismatches are rejected") {
  const GradCheckProblem p = make_gradcheck_problem(CovarianceMode::rank_one, 8);
  CHECK_THROWS_AS(free_energy(p.gen, p.rec, Matrix(3, 5), p.eps, 1.0), DimensionError);
  CHECK_THROWS_AS(free_energy(p.gen, p.rec, rows_of(p.batch, 0, 2), p.eps, 1.0), DimensionError);
  EpsBundle bad = p.eps;
  bad.eps[0][0].pop_back();
  CHECK_THROWS_AS(free_energy(p.gen, p.rec, p.batch, bad, 1.0), DimensionError);
}

TEST_CASE("partition of the data set") {
  const GradCheckProblem p = make_gradcheck_problem(CovarianceMode::rank_one, 9);
  const FreeEnergyTerms full = free_energy(p.gen, p.rec, p.batch, p.eps, 1.0);
  const FreeEnergyTerms a = free_energy(p.gen, p.rec, rows_of(p.batch, 0, 1), eps_of(p.eps, 0, 1), 1.0);
  const FreeEnergyTerms b = free_energy(p.gen, p.rec, rows_of(p.batch, 1, 3), eps_of(p.eps, 1, 3), 1.0);
  CHECK(a.total + b.total == doctest::Approx(full.total + full.param_reg).epsilon(1e-13));
}

TEST_CASE("block-parallel evaluation") {
  GradCheckProblem p = make_gradcheck_problem(CovarianceMode::rank_one, 10);
  RngStream s(11);
  p.batch = Matrix(37, 4);
  for (double& x : p.batch.data()) x = s.uniform() < 0.5 ? 1.0 : 0.0;
  p.eps = EpsBundle::draw({3}, 37, s, 0.05);

  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  const Evaluation one = evaluate_free_energy(p.gen, p.rec, p.batch, p.eps, 2.0, true);
  omp_set_num_threads(4);
  const Evaluation four = evaluate_free_energy(p.gen, p.rec, p.batch, p.eps, 2.0, true);
  omp_set_num_threads(saved);
  CHECK(one.terms.total == four.terms.total);
  CHECK(one.grads == four.grads);

  const Evaluation ref = reference::evaluate_free_energy_serial(p.gen, p.rec, p.batch, p.eps, 2.0, true);
  CHECK(ref.terms.total == doctest::Approx(one.terms.total).epsilon(1e-13));
  const Vector a = one.grads.flatten(), b = ref.grads.flatten();
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= 1e-12 * std::max(1.0, std::abs(b[i])));
}

TEST_CASE("Jensen bound on the three-pixel model") {
  const oracle::BernoulliToy toy = oracle::bernoulli_toy();
  RngStream s(12);
  const std::size_t n = 1000;
  for (std::size_t c = 0; c < 8; ++c) {
    CAPTURE(c);
    const Matrix v(1, 3, oracle::BernoulliToy::config(c));
    double sum = 0.0, sum2 = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      const FreeEnergyTerms f = free_energy(toy.gen, toy.rec, v, EpsBundle::draw({1}, 1, s), 1.0);
      const double x = f.recon + f.latent_kl;
      sum += x;
      sum2 += x * x;
    }
    const double mean = sum / n;
    const double sd = std::sqrt((sum2 - n * mean * mean) / (n - 1));
    CHECK(mean >= -std::log(toy.p[c]) - 4.0 * sd / std::sqrt(static_cast<double>(n)));
  }
}

TEST_CASE("averaged gradient estimates are unbiased") {
  TrainConfig cfg;
  cfg.latent_dims = {1};
  cfg.gen_hidden = {4};
  cfg.rec_hidden = {4};
  cfg.activation = Activation::tanh;
  GenerativeParams gen = build_generative(cfg, 3);
  RecognitionParams rec = build_recognition(cfg, 3);
  RngStream s(13);
  for (ParamSet* ps : {&gen.values, &rec.values})
    for (auto& e : *ps)
      for (double& x : e.value.data()) x = 0.5 * s.normal();
  const Matrix v(1, 3, Vector{1, 0, 1});

  // expected free energy over the single 1-D eps by Simpson quadrature
  auto expected = [&](const GenerativeParams& g, const RecognitionParams& r) {
    return oracle::integrate(
        [&](double e) {
          return free_energy(g, r, v, EpsBundle{{{Vector{e}}}, {}}, 1.0).total * oracle::std_normal_pdf(e);
        },
        -9.0, 9.0, 400);
  };
  const std::size_t ng = gen.values.total_size();
  const Vector theta_g = gen.values.flatten(), theta_r = rec.values.flatten();
  Vector numeric(ng + theta_r.size());
  const double h = 1e-5;
  for (std::size_t i = 0; i < numeric.size(); ++i) {
    GenerativeParams g = gen;
    RecognitionParams r = rec;
    Vector tg = theta_g, tr = theta_r;
    double& x = i < ng ? tg[i] : tr[i - ng];
    const double x0 = x;
    x = x0 + h;
    g.values.assign_flat(tg);
    r.values.assign_flat(tr);
    const double fp = expected(g, r);
    x = x0 - h;
    g.values.assign_flat(tg);
    r.values.assign_flat(tr);
    const double fm = expected(g, r);
    numeric[i] = (fp - fm) / (2.0 * h);
  }

  const std::size_t n = 1000;
  Vector sum(numeric.size(), 0.0), sum2(numeric.size(), 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    const Vector g = grad_free_energy(gen, rec, v, EpsBundle::draw({1}, 1, s), 1.0).flatten();
    for (std::size_t i = 0; i < g.size(); ++i) {
      sum[i] += g[i];
      sum2[i] += g[i] * g[i];
    }
  }
  for (std::size_t i = 0; i < numeric.size(); ++i) {
    const double mean = sum[i] / n;
    const double sd = std::sqrt(std::max(0.0, (sum2[i] - n * mean * mean) / (n - 1)));
    CHECK(std::abs(mean - numeric[i]) <= 4.0 * sd / std::sqrt(static_cast<double>(n)) + 1e-6);
  }
}

TEST_CASE("variational Bayes over generative parameters") {
  const GradCheckProblem p = make_gradcheck_problem(CovarianceMode::rank_one, 14);
  const double kappa = p.gen.kappa;
  const double count = static_cast<double>(p.gen.values.total_size());

  ParamPosterior post = ParamPosterior::around(p.gen, kappa);
  for (auto& e : post.m)
    for (double& x : e.value.data()) x = 0.0;
  CHECK(std::abs(vb_param_term(post, kappa)) < 1e-12 * count);
  for (auto& e : post.tau)
    for (double& x : e.value.data()) x = kappa / std::numbers::e;
  CHECK(vb_param_term(post, kappa) == doctest::Approx(count / (2.0 * std::numbers::e)).epsilon(1e-12));

  for (auto& e : post.tau) e.value.data()[0] = 0.0;
  CHECK_THROWS_AS(post.validate(), DomainError);
  CHECK_THROWS_AS(vb_param_term(post, kappa), DomainError);

  SUBCASE("gradients match finite differences") {
    ParamPosterior q = ParamPosterior::around(p.gen, 0.01);
    RngStream s(15);
    for (auto& e : q.tau)
      for (double& x : e.value.data()) x = 0.005 + 0.02 * s.uniform();
    ParamSet eps_theta = p.gen.values.zeros_like();
    for (auto& e : eps_theta)
      for (double& x : e.value.data()) x = s.normal();
    const VbGradients g = vb_grad(p.gen, q, p.rec, p.batch, p.eps, eps_theta, p.lambda);

    auto check_block = [&](ParamSet& target, const ParamSet& analytic, auto objective) {
      Vector flat = target.flatten();
      const Vector a = analytic.flatten();
      for (std::size_t i = 0; i < flat.size(); ++i) {
        const double x0 = flat[i], h = 1e-6 * std::max(1.0, std::abs(x0));
        flat[i] = x0 + h;
        target.assign_flat(flat);
        const double fp = objective();
        flat[i] = x0 - h;
        target.assign_flat(flat);
        const double fm = objective();
        flat[i] = x0;
        target.assign_flat(flat);
        const double numeric = (fp - fm) / (2.0 * h);
        CHECK(std::abs(a[i] - numeric) <= 1e-6 * std::max({1.0, std::abs(a[i]), std::abs(numeric)}));
      }
    };
    RecognitionParams rec = p.rec;
    auto total = [&] { return vb_free_energy(p.gen, q, rec, p.batch, p.eps, eps_theta, p.lambda).total; };
    check_block(q.m, g.d_m, total);
    check_block(q.tau, g.d_tau, total);
    check_block(rec.values, g.d_rec, total);
  }
}
