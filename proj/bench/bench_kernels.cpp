// Times the OpenMP kernels against their serial reference versions and checks
// that both give the same numbers. --quick shrinks the workloads for ctest.
#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <vector>

#include "dlgm/estimators.hpp"
#include "dlgm/eval.hpp"
#include "dlgm/objective.hpp"
#include "dlgm/trainer.hpp"

using namespace dlgm;

namespace {

double median_ms(const std::function<void()>& fn, int reps) {
  std::vector<double> ms;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  std::sort(ms.begin(), ms.end());
  return ms[ms.size() / 2];
}

void report(const char* name, double par, double ser, double diff) {
  std::printf("%-28s parallel %9.2f ms  serial %9.2f ms  speedup %5.2fx  max |diff| %.2e\n", name, par, ser,
              ser / par, diff);
}

}  // namespace

int main(int argc, char** argv) {
  const bool quick = argc > 1 && std::strcmp(argv[1], "--quick") == 0;
  const int reps = quick ? 1 : 5;
  std::printf("threads: %d%s\n", omp_get_max_threads(), quick ? " (quick)" : "");

  TrainConfig cfg;
  cfg.seed = 7;
  cfg.covariance = CovarianceMode::rank_one;
  const std::size_t D = quick ? 64 : 784;
  const std::size_t N = quick ? 16 : 200;
  TrainState st = TrainState::initial(cfg, D);
  RngStream s(8);
  for (ParamSet* ps : {&st.gen.values, &st.rec.values})
    for (auto& e : *ps)
      for (double& x : e.value.data()) x = 0.05 * s.normal();
  Matrix batch(N, D);
  for (double& x : batch.data()) x = s.uniform() < 0.3 ? 1.0 : 0.0;
  const EpsBundle eps = EpsBundle::draw(cfg.latent_dims, N, s, cfg.jitter_sigma);

  Evaluation par, ser;
  const double t_par = median_ms([&] { par = evaluate_free_energy(st.gen, st.rec, batch, eps, 5.0, true); }, reps);
  const double t_ser =
      median_ms([&] { ser = reference::evaluate_free_energy_serial(st.gen, st.rec, batch, eps, 5.0, true); }, reps);
  double diff = std::abs(par.terms.total - ser.terms.total);
  const Vector a = par.grads.flatten(), b = ser.grads.flatten();
  for (std::size_t i = 0; i < a.size(); ++i) diff = std::max(diff, std::abs(a[i] - b[i]));
  report("free energy + gradients", t_par, t_ser, diff);

  const std::size_t trials = quick ? 20000 : 2000000;
  const RngStream base(9);
  double vp = 0.0, vs = 0.0;
  const auto est = reinforce_single(1.0, 0.5, 1.0);
  const double e_par = median_ms([&] { vp = empirical_variance(est, trials, base); }, reps);
  const double e_ser = median_ms([&] { vs = reference::empirical_variance_serial(est, trials, base); }, reps);
  report("empirical variance", e_par, e_ser, std::abs(vp - vs));

  const std::size_t S = quick ? 50 : 2000;
  const Vector v = batch.row_vector(0);
  double lp = 0.0, ls = 0.0;
  const double m_par = median_ms([&] { RngStream r(10); lp = marginal_ll_is(st.gen, st.rec, v, S, r); }, reps);
  const double m_ser =
      median_ms([&] { RngStream r(10); ls = reference::marginal_ll_is_serial(st.gen, st.rec, v, S, r); }, reps);
  report("importance-sampled log p(v)", m_par, m_ser, std::abs(lp - ls));

  // parallel and serial paths must agree; free-energy sums differ only in order
  const bool ok = diff <= 1e-9 * std::max(1.0, std::abs(ser.terms.total)) && vp == vs && lp == ls;
  std::printf("%s\n", ok ? "agreement: ok" : "agreement: MISMATCH");
  return ok ? 0 : 1;
}
