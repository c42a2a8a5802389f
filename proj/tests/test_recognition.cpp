#include <cmath>

#include "doctest.h"
#include "dlgm/recognition.hpp"
#include "dlgm/trainer.hpp"
#include "oracles.hpp"

using namespace dlgm;

TEST_CASE("encode with zero weights returns the head biases") {
  RecognitionParams r = RecognitionParams::create(4, {5}, Activation::rectifier, {3}, CovarianceMode::rank_one);
  r.values.at(rec_head_name(0, "mu", "b")) = Matrix(3, 1, Vector{1, 2, 3});
  r.values.at(rec_head_name(0, "logd", "b")) = Matrix(3, 1, Vector{0, std::log(2.0), -1});
  r.values.at(rec_head_name(0, "u", "b")) = Matrix(3, 1, Vector{0.5, 0, -0.5});
  for (const Vector& v : {Vector{0, 1, 0, 1}, Vector{3, -2, 1, 0}}) {
    const Posterior q = encode(r, v);
    CHECK(q[0].mu == Vector{1, 2, 3});
    CHECK(q[0].d[0] == 1.0);
    CHECK(q[0].d[1] == doctest::Approx(2.0));
    CHECK(q[0].u == Vector{0.5, 0, -0.5});
  }
}

TEST_CASE("diagonal mode has no u head and returns u = 0") {
  const GradCheckProblem p = make_gradcheck_problem(CovarianceMode::diagonal, 1);
  CHECK_FALSE(p.rec.values.contains(rec_head_name(0, "u", "W")));
  const Posterior q = encode(p.rec, p.batch.row_vector(0));
  CHECK(q[0].u == Vector(3, 0.0));
  for (double d : q[0].d) CHECK(d > 0.0);
}

TEST_CASE("encode is sensitive to its input") {
  const GradCheckProblem p = make_gradcheck_problem(CovarianceMode::rank_one, 2);
  Vector a = p.batch.row_vector(0), b = a;
  b[2] = 1.0 - b[2];
  const Posterior qa = encode(p.rec, a), qb = encode(p.rec, b);
  CHECK((qa[0].mu != qb[0].mu || qa[0].d != qb[0].d || qa[0].u != qb[0].u));
  CHECK_THROWS_AS(encode(p.rec, Vector{1.0, 0.0}), DimensionError);
}

TEST_CASE("sample_posterior") {
  const GradCheckProblem p = make_gradcheck_problem(CovarianceMode::rank_one, 3);
  const Vector v = p.batch.row_vector(1);
  const Posterior q = encode(p.rec, v);
  CHECK(sample_posterior(p.rec, v, {Vector(3, 0.0)})[0] == q[0].mu);

  RngStream s(4);
  const LatentSample eps{s.standard_normal(3)};
  CHECK(sample_posterior(p.rec, v, eps) == sample_posterior(p.rec, v, eps));

  const Matrix c = oracle::dense_covariance(q[0]);
  const std::size_t n = 1000000;
  Matrix acc(3, 3);
  for (std::size_t t = 0; t < n; ++t) {
    const Vector x = sample_posterior(p.rec, v, {s.standard_normal(3)})[0];
    const Vector dx = sub(x, q[0].mu);
    add_outer(acc, dx, dx, 1.0 / n);
  }
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      CHECK(std::abs(acc(i, j) - c(i, j)) < 0.02 * std::sqrt(c(i, i) * c(j, j)));
}

TEST_CASE("corrupt") {
  RngStream s(5);
  const Vector v{1, 0, 1, 1, 0};
  SUBCASE("rate 0 is the identity") {
    CHECK(corrupt(CorruptionSpec::parse("bitflip:0"), v, s) == v);
    CHECK(corrupt(CorruptionSpec::parse("dropout:0"), v, s) == v);
    CHECK(corrupt(CorruptionSpec::parse("none"), v, s) == v);
  }
  SUBCASE("bitflip rate 1 is the complement") {
    CHECK(corrupt(CorruptionSpec::parse("bitflip:1"), v, s) == Vector{0, 1, 0, 0, 1});
  }
  SUBCASE("flip and drop fractions") {
    const Vector ones(100000, 1.0);
    double flipped = 0, dropped = 0;
    for (double x : corrupt(CorruptionSpec::parse("bitflip:0.1"), ones, s)) flipped += 1.0 - x;
    for (double x : corrupt(CorruptionSpec::parse("dropout:0.2"), ones, s)) dropped += 1.0 - x;
    CHECK(std::abs(flipped / 1e5 - 0.1) < 0.005);
    CHECK(std::abs(dropped / 1e5 - 0.2) < 0.005);
  }
  SUBCASE("gaussian jitter spread") {
    const Vector z(100000, 0.0);
    double ss = 0;
    for (double x : corrupt(CorruptionSpec::parse("jitter:0.5"), z, s)) ss += x * x;
    CHECK(std::abs(std::sqrt(ss / 1e5) - 0.5) < 0.01);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(corrupt(CorruptionSpec::parse("bitflip:0.1"), Vector{0.5}, s), DomainError);
    CHECK_THROWS_AS(CorruptionSpec::parse("bitflip:1.5"), DomainError);
    CHECK_THROWS_AS(CorruptionSpec::parse("jitter:-1"), DomainError);
    CHECK_THROWS_AS(CorruptionSpec::parse("smear:0.1"), UsageError);
    CHECK_THROWS_AS(CorruptionSpec::parse("bitflip:abc"), UsageError);
    CHECK_THROWS_AS(CorruptionSpec::parse("bitflip"), UsageError);
  }
  SUBCASE("text round trip") {
    const CorruptionSpec c = CorruptionSpec::parse("dropout:0.123456789");
    CHECK(CorruptionSpec::parse(c.to_string()).rate == c.rate);
  }
}

TEST_CASE("encode after rate-0 corruption equals encode") {
  const GradCheckProblem p = make_gradcheck_problem(CovarianceMode::rank_one, 6);
  RngStream s(7);
  const Vector v = p.batch.row_vector(2);
  const Posterior a = encode(p.rec, v);
  const Posterior b = encode(p.rec, corrupt(CorruptionSpec::parse("bitflip:0"), v, s));
  CHECK(a[0].mu == b[0].mu);
  CHECK(a[0].d == b[0].d);
  CHECK(a[0].u == b[0].u);
}

TEST_CASE("encode_backward matches finite differences") {
  for (CovarianceMode mode : {CovarianceMode::diagonal, CovarianceMode::rank_one}) {
    const GradCheckProblem p = make_gradcheck_problem(mode, 8, ObsFamily::bernoulli_logits, Activation::tanh);
    const Vector v = p.batch.row_vector(0);
    RngStream s(9);
    const Vector a = s.standard_normal(3), b = s.standard_normal(3), c = s.standard_normal(3);
    // scalar of the head outputs: a.mu + b.log d + c.u
    RecognitionParams r = p.rec;
    auto f = [&](const Vector& theta) {
      r.values.assign_flat(theta);
      const RankOneGaussian q = encode(r, v)[0];
      double out = dot(a, q.mu) + dot(c, q.u);
      for (std::size_t i = 0; i < 3; ++i) out += b[i] * std::log(q.d[i]);
      return out;
    };
    const Vector numeric = finite_diff_grad(f, p.rec.values.flatten());
    ParamSet grads = p.rec.values.zeros_like();
    const EncodeTrace tr = encode_forward(p.rec, v);
    encode_backward(p.rec, v, tr, {HeadGradient{a, b, c}}, grads);
    const Vector analytic = grads.flatten();
    for (std::size_t i = 0; i < analytic.size(); ++i)
      CHECK(std::abs(analytic[i] - numeric[i]) <= 1e-6 * std::max(1.0, std::abs(numeric[i])));
  }
}

TEST_CASE("mode strings and validation") {
  CHECK(covariance_mode_from_string("rank-one") == CovarianceMode::rank_one);
  CHECK(to_string(CovarianceMode::diagonal) == "diagonal");
  CHECK_THROWS_AS(covariance_mode_from_string("full"), UsageError);
  RecognitionParams r = RecognitionParams::create(4, {5}, Activation::rectifier, {3}, CovarianceMode::rank_one);
  r.mode = CovarianceMode::diagonal;
  CHECK_THROWS_AS(r.validate(), DimensionError);
}
