#pragma once

#include <string>
#include <vector>

#include "dlgm/generative.hpp"
#include "dlgm/recognition.hpp"

namespace dlgm {

struct Mask {
  std::vector<bool> observed;

  std::size_t size() const { return observed.size(); }
  std::size_t missing_count() const;
};

struct MaskSpec {
  enum class Kind { mar, square };
  Kind kind = Kind::mar;
  double rate = 0.6;
  std::size_t top = 0, left = 0, side = 0;

  // "mar:<rate>" or "square:<top>,<left>,<size>"
  static MaskSpec parse(const std::string& text);
};

// MAR drops each pixel independently with probability rate; square drops
// exactly the side x side block at (top, left) of a rows x cols image.
Mask make_mask(const MaskSpec& spec, std::size_t rows, std::size_t cols, RngStream& stream);

// log p(v | h(xi)) + log N(xi | 0, I) - log q(xi | v) for xi = mu + R eps.
double importance_log_weight(const GenerativeParams& gen, const Posterior& q, const Vector& v,
                             const LatentSample& eps);

// log of the S-sample importance estimate of p(v), via max-shifted
// log-sum-exp. Draws one u64 from stream; sample s uses a stream derived from
// it with tag s, so the result does not depend on thread count.
double marginal_ll_is(const GenerativeParams& gen, const RecognitionParams& rec, const Vector& v, std::size_t S,
                      RngStream& stream);

struct ImputeTrace {
  std::vector<Vector> samples;  // chain states, samples[0] is the initialised input
  std::vector<Vector> means;    // same states with missing entries set to their expected value
};

struct ImputeStep {
  Vector sample;  // observed entries copied from the input, missing ones drawn from p(v | h(xi))
  Vector mean;    // same, with missing entries at their expected value
};

// One kernel step from state v: xi ~ q(. | v), v' ~ p(v | h(xi)).
ImputeStep impute_step(const GenerativeParams& gen, const RecognitionParams& rec, const Vector& v, const Mask& mask,
                       RngStream& stream);

// Markov chain on the missing entries: xi ~ q(. | v), v' ~ p(v | h(xi)),
// v_m <- v'_m, observed entries held at v0. Missing entries of v0 are first
// replaced by random values. Returns iters + 1 states.
ImputeTrace impute_chain(const GenerativeParams& gen, const RecognitionParams& rec, const Vector& v0,
                         const Mask& mask, std::size_t iters, RngStream& stream);

struct GridSpec {
  double lo = -5.0;
  double hi = 5.0;
  std::size_t resolution = 51;

  void validate() const;
  double coord(std::size_t i) const;
  static GridSpec parse(const std::string& text);  // "lo,hi,res"
};

// Normalised weights proportional to p(v | h(xi)) N(xi | 0, I) on a
// resolution x resolution grid over a 2-D stochastic layer; entry (i, j) is
// xi = (coord(j), coord(i)). Other stochastic layers are held at 0.
Matrix posterior_grid(const GenerativeParams& gen, const Vector& v, const GridSpec& grid, std::size_t layer = 0);

// Posterior means of the (2-D) stochastic layer `layer`, one row per datapoint.
Matrix embed(const RecognitionParams& rec, const Matrix& batch, std::size_t layer = 0);

namespace reference {

double marginal_ll_is_serial(const GenerativeParams& gen, const RecognitionParams& rec, const Vector& v,
                             std::size_t S, RngStream& stream);

}  // namespace reference

}  // namespace dlgm
