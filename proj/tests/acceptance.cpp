// Acceptance suite. `lsc_acceptance N` runs criterion N; without arguments
// every criterion runs in order. Each prints one PASS/FAIL line; the exit
// status is non-zero if any selected criterion fails.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "lsc/data.hpp"
#include "lsc/dynamics.hpp"
#include "lsc/io.hpp"
#include "lsc/learning.hpp"
#include "lsc/metrics.hpp"
#include "lsc/model.hpp"
#include "lsc/runfiles.hpp"

using namespace lsc;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Matrix randn(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

Matrix fd_gradient(const std::function<double(const Matrix&)>& f, Matrix m, double h) {
  Matrix g(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    const double keep = m.data()[i];
    m.data()[i] = keep + h;
    const double up = f(m);
    m.data()[i] = keep - h;
    const double down = f(m);
    m.data()[i] = keep;
    g.data()[i] = (up - down) / (2 * h);
  }
  return g;
}

double rel_error(const Matrix& a, const Matrix& b) {
  return (a - b).norm() / std::max({a.norm(), b.norm(), 1e-12});
}

void avoid_kinks(Matrix& m, std::initializer_list<double> kinks, double gap) {
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    double& v = m.data()[i];
    for (double k : kinks) {
      if (std::abs(std::abs(v) - k) < gap) v += (v >= 0 ? 1 : -1) * 3 * gap;
    }
  }
}

TrainConfig bars_config(SolverKind kind) {
  TrainConfig c;
  c.solver = kind;
  c.params.u0 = u0_from_pi(0.3, 1.0);
  return c;
}

double log_norm_slope(const std::vector<TraceRecord>& tr, double tau_a) {
  std::vector<double> t, y;
  for (std::size_t i = tr.size() - std::max<std::size_t>(2, tr.size() / 5); i < tr.size(); ++i) {
    t.push_back(tr[i].t / tau_a);
    y.push_back(std::log(tr[i].norm_median));
  }
  return linear_slope(t, y);
}

// ---------------------------------------------------------------------------

Outcome gradients() {
  const Stopwatch clock;
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> unit(0.5, 1.5);
  double worst = 0;
  const double h = 1e-5;
  for (int i = 0; i < 100; ++i) {
    const Matrix a = randn(6, 4, rng), x = randn(6, 3, rng);
    Matrix s = randn(4, 3, rng);
    ModelParams p;
    p.sigma = unit(rng);
    p.lambda = unit(rng);
    p.u0 = unit(rng) - 0.4;
    avoid_kinks(s, {0.0, p.u0}, 1e-3);
    const Matrix u = s;
    const double n = static_cast<double>(x.cols()), d = static_cast<double>(x.rows());

    worst = std::max(worst, rel_error(grad_s_l1(a, s, x, p),
                                      fd_gradient([&](const Matrix& m) { return energy_l1(a, m, x, p).total; }, s, h)));
    worst = std::max(worst, rel_error(grad_u_l0(a, u, x, p),
                                      fd_gradient([&](const Matrix& m) { return energy_l0(a, m, x, p).total; }, u, h)));
    worst = std::max(worst, rel_error(grad_a(a, s, x, p),
                                      fd_gradient([&](const Matrix& m) { return energy_l1(m, s, x, p).total; }, a, h)));

    auto e_u0 = [&](double v) {
      ModelParams q = p;
      q.u0 = v;
      return energy_l0(a, u, x, q).total;
    };
    const double fd_u0 = -(e_u0(p.u0 + h) - e_u0(p.u0 - h)) / (2 * h) / n;
    worst = std::max(worst, rel_error(Matrix::Constant(1, 1, grad_u0(a, threshold_f(u, p.u0), x, p)),
                                      Matrix::Constant(1, 1, fd_u0)));

    auto nll = [&](double sg) { return (x - a * s).squaredNorm() / (2 * sg * sg) / n + d * std::log(sg); };
    const double fd_sigma = -(p.sigma * p.sigma * p.sigma / d) * (nll(p.sigma + h) - nll(p.sigma - h)) / (2 * h);
    worst = std::max(worst, rel_error(Matrix::Constant(1, 1, grad_sigma(a, s, x, p)), Matrix::Constant(1, 1, fd_sigma)));

    auto nlp = [&](double l) { return l * s.cwiseAbs().sum() / static_cast<double>(s.size()) - std::log(l / 2); };
    const double fd_lambda = (nlp(p.lambda + h) - nlp(p.lambda - h)) / (2 * h);
    worst = std::max(worst, rel_error(Matrix::Constant(1, 1, grad_lambda_l1(s, p)), Matrix::Constant(1, 1, fd_lambda)));
  }
  const double secs = clock.seconds();
  return {worst <= 1e-5 && secs < 5,
          "max relative error " + fmt("%.2e", worst) + " over 100 instances x 6 gradients (<= 1e-5), " +
              fmt("%.2f", secs) + " s (< 5 s)"};
}

Outcome ou_calibration() {
  // E = u^2 / 2 expressed as A = 1, x = 0, sigma = 1, lambda = 0.
  const Stopwatch clock;
  const Eigen::Index chains = 16;
  const Matrix a = Matrix::Ones(1, 1), x = Matrix::Zero(1, chains);
  ModelParams p;
  p.sigma = 1;
  p.lambda = 0;
  p.dt = 1e-3;
  const NoiseSource noise(2, streams::kLatentNoise);
  LatentState lat{Matrix::Zero(1, chains), Matrix::Zero(1, chains)};
  const std::uint64_t burn = 10000, steps = 10'000'000;
  double sq = 0;
  for (std::uint64_t i = 0; i < burn + steps; ++i) {
    lat = step_latents_langevin(lat, a, x, p, noise, i, SolverKind::LSC_L1);
    if (i >= burn) sq += lat.u.squaredNorm();
  }
  const double var = sq / static_cast<double>(steps * chains);
  const double secs = clock.seconds();
  return {std::abs(var - 1.0) <= 0.03 && secs < 30,
          "stationary variance " + fmt("%.4f", var) + " (1.00 +- 0.03), 16 chains x 1e7 steps, " +
              fmt("%.1f", secs) + " s (< 30 s)"};
}

Outcome prior_realization() {
  // No data term: A = 0, so the L0 sampler sees only lambda |u|.
  const Eigen::Index chains = 100000;
  ModelParams p;
  p.lambda = 1.0;
  p.u0 = std::log(2.0);
  const Matrix a = Matrix::Zero(1, 1), x = Matrix::Zero(1, chains);
  const NoiseSource noise(3, streams::kLatentNoise);
  LatentState lat;
  lat.u = NoiseSource(3, streams::kLatentInit).normal(0, 1, chains);
  lat.s = threshold_f(lat.u, p.u0);
  for (std::uint64_t i = 0; i < 2000; ++i) lat = step_latents_langevin(lat, a, x, p, noise, i);
  std::vector<double> all(lat.s.data(), lat.s.data() + lat.s.size()), slab;
  for (double v : all) {
    if (v > 0) slab.push_back(v);
  }
  const double pi_hat = activity_estimate(all);
  const KsResult ks = ks_one_sample(slab, [](double v) { return v <= 0 ? 0.0 : 1.0 - std::exp(-v); });
  return {std::abs(pi_hat - 0.5) <= 0.02 && ks.p_value > 0.01,
          "pi_hat " + fmt("%.4f", pi_hat) + " (0.50 +- 0.02), slab KS vs Exp(1) p = " + fmt("%.3f", ks.p_value) +
              " (> 0.01), " + std::to_string(chains) + " independent chains"};
}

Outcome bars_recovery() {
  const BarsSource src(BarsSpec{});
  bool pass = true;
  std::string detail;
  for (SolverKind kind : {SolverKind::DSC, SolverKind::LCA, SolverKind::LSC_L0}) {
    const Stopwatch clock;
    const RunArtifact art = train(bars_config(kind), src);
    const double cos = dictionary_recovery(art.dict.a(), bars_dictionary(8).a()).mean_best_cosine;
    const double secs = clock.seconds();
    pass = pass && cos >= 0.95 && secs <= 600;
    detail += (detail.empty() ? "" : "; ") + to_string(kind) + " cos " + fmt("%.4f", cos) + " in " +
              fmt("%.0f", secs) + " s";
  }
  return {pass, detail + " (each >= 0.95, <= 600 s)"};
}

Outcome posterior_matches_prior() {
  const Stopwatch clock;
  const BarsSource src(BarsSpec{});
  // 100 presentations of the same batch sequence for every solver.
  std::vector<std::pair<SolverKind, double>> kl;
  for (SolverKind kind : {SolverKind::LSC_L0, SolverKind::DSC, SolverKind::LCA}) {
    TrainConfig c = bars_config(kind);
    c.learn.dictionary = false;
    c.t_max = 100 * c.params.tau_x;
    c.nested.outer = 100;
    const RunArtifact art = train(c, src, bars_dictionary(8));
    const double tol = art.sampled ? 0.0 : kZeroTolerance;
    kl.emplace_back(kind, kl_to_prior(art.reservoir.values, art.params, 0.0, tol));
  }
  const double secs = clock.seconds();
  const bool pass = kl[0].second < 0.05 && kl[0].second < kl[1].second && kl[0].second < kl[2].second && secs <= 600;
  return {pass, "KL l0lsc " + fmt("%.2e", kl[0].second) + " (< 0.05), dsc " + fmt("%.3f", kl[1].second) + ", lca " +
                    fmt("%.3f", kl[2].second) + " (l0lsc smallest), " + fmt("%.0f", secs) + " s"};
}

Outcome pi_learning() {
  const Stopwatch clock;
  const BarsSource src(BarsSpec{});
  TrainConfig c = bars_config(SolverKind::LSC_L0);
  c.params.u0 = std::log(2.0);  // start at pi = 0.5
  c.learn.u0 = true;
  const RunArtifact art = train(c, src);
  const Spread pi = converged_pi(art.traces);
  const double secs = clock.seconds();
  return {pi.mean >= 0.25 && pi.mean <= 0.35 && secs <= 600,
          "converged pi " + fmt("%.4f", pi.mean) + " (in [0.25, 0.35]) from 0.5, " + fmt("%.0f", secs) + " s"};
}

// 2x overcomplete L0 runs. The presentation is long enough for the sampler
// to mix between competing elements; the larger batch and tau_a lower the
// stochastic-gradient noise that keeps decaying columns away from zero, and
// the coarser step pays for both (see README: overcomplete runs).
TrainConfig overcomplete_config(bool learn_u0) {
  TrainConfig c = bars_config(SolverKind::LSC_L0);
  c.k = 32;
  c.normalize = false;
  c.learn.u0 = learn_u0;
  c.params.tau_x = 100;
  c.params.tau_a = 1000;
  c.params.tau_u0 = 1000;
  c.params.dt = 0.05;
  c.batch_size = 400;
  c.t_max = 40000;
  c.eval_period = 400;
  return c;
}

Outcome norm_bifurcation() {
  const Stopwatch clock;
  const BarsSource src(BarsSpec{});
  const RunArtifact art = train(overcomplete_config(false), src);
  const Vector n = art.dict.column_norms();
  std::vector<Eigen::Index> big;
  Eigen::Index small = 0;
  for (Eigen::Index j = 0; j < n.size(); ++j) {
    if (n(j) > 0.5) big.push_back(j);
    if (n(j) < 0.1) ++small;
  }
  double cos = 0;
  if (!big.empty() && big.size() >= 16) {
    Matrix kept(art.dict.d(), static_cast<Eigen::Index>(big.size()));
    for (std::size_t i = 0; i < big.size(); ++i) kept.col(static_cast<Eigen::Index>(i)) = art.dict.a().col(big[i]);
    cos = dictionary_recovery(kept, bars_dictionary(8).a()).mean_best_cosine;
  }
  std::vector<double> sorted(n.data(), n.data() + n.size());
  std::sort(sorted.begin(), sorted.end());
  const double secs = clock.seconds();
  return {big.size() == 16 && small == 16 && cos >= 0.95 && secs <= 900,
          std::to_string(big.size()) + " norms > 0.5 (16), " + std::to_string(small) +
              " < 0.1 (16), 16 smallest norms in [" + fmt("%.3f", sorted[0]) + ", " + fmt("%.3f", sorted[15]) +
              "], surviving cos " +
              fmt("%.4f", cos) + " (>= 0.95), " + fmt("%.0f", secs) + " s (<= 900 s)"};
}

Outcome duplication_halving() {
  const Stopwatch clock;
  const BarsSource src(BarsSpec{});
  const RunArtifact art = train(overcomplete_config(true), src);
  const Spread pi = converged_pi(art.traces);
  const auto pairs = duplicate_pairs(art.dict.a(), 0.95);
  // Count bars that are covered by at least one duplicate pair.
  const Matrix truth = bars_dictionary(8).a();
  const Matrix c = abs_cosines(truth, art.dict.a());
  std::vector<bool> covered(16, false);
  for (const auto& [i, j] : pairs) {
    Eigen::Index bar = 0;
    c.col(i).maxCoeff(&bar);
    if (c(bar, i) > 0.95 && c(bar, j) > 0.95) covered[static_cast<std::size_t>(bar)] = true;
  }
  const auto n_covered = std::count(covered.begin(), covered.end(), true);
  const double secs = clock.seconds();
  const double lo = 0.3 / 2 * 0.75, hi = 0.3 / 2 * 1.25;
  return {n_covered >= 1 && pi.mean >= lo && pi.mean <= hi && secs <= 900,
          std::to_string(n_covered) + "/16 bars duplicated (|cos| > 0.95 pairs: " + std::to_string(pairs.size()) +
              "), converged pi " + fmt("%.4f", pi.mean) + " (in [" + fmt("%.4f", lo) + ", " + fmt("%.4f", hi) +
              "]), " + fmt("%.0f", secs) + " s (<= 900 s)"};
}

Outcome time_scale_invariance() {
  const Stopwatch clock;
  const BarsSource src(BarsSpec{});
  auto samples = [&](double scale, std::uint64_t seed) {
    TrainConfig c = bars_config(SolverKind::LSC_L0);
    c.learn.dictionary = false;
    c.seed = seed;
    c.params.tau_s *= scale;
    c.params.dt *= scale;
    c.params.tau_x = 20 * scale;
    c.t_max = 10 * c.params.tau_x;
    c.eval_period = c.params.tau_x;
    c.reservoir_thin = 2;
    return train(c, src, bars_dictionary(8)).reservoir.values;
  };
  const std::vector<double> a = samples(1, 1), b = samples(10, 2);
  const KsResult ks = ks_two_sample(a, b);
  const double secs = clock.seconds();
  return {ks.p_value > 0.01 && secs < 120,
          "two-sample KS p = " + fmt("%.3f", ks.p_value) + " (> 0.01), D = " + fmt("%.4f", ks.statistic) + ", " +
              std::to_string(a.size()) + " vs " + std::to_string(b.size()) + " samples, " + fmt("%.0f", secs) +
              " s (< 120 s)"};
}

Outcome norm_drift() {
  const Stopwatch clock;
  const BarsSource src(BarsSpec{});
  TrainConfig dsc = bars_config(SolverKind::DSC);
  dsc.nested.normalize = false;
  const RunArtifact d = train(dsc, src);
  const double dsc_slope = log_norm_slope(d.traces, dsc.params.tau_a);

  const TrainConfig lsc = bars_config(SolverKind::LSC_L0);
  const RunArtifact l = train(lsc, src);
  const double lsc_slope = log_norm_slope(l.traces, lsc.params.tau_a);
  const double secs = clock.seconds();
  return {dsc_slope > 0 && std::abs(lsc_slope) <= 1e-3 && secs <= 600,
          "final-20% log-norm slope per tau_a: dsc (unnormalized) " + fmt("%.3e", dsc_slope) + " (> 0), l0lsc " +
              fmt("%.3e", lsc_slope) + " (|.| <= 1e-3), " + fmt("%.0f", secs) + " s"};
}

Outcome determinism() {
  const BarsSource src(BarsSpec{});
  bool pass = true;
  std::string detail;
  for (SolverKind kind : {SolverKind::LSC_L0, SolverKind::DSC}) {
    TrainConfig c = bars_config(kind);
    c.learn.u0 = kind == SolverKind::LSC_L0;
    c.t_max = 100;
    c.nested.outer = 40;
    c.nested.inner = 250;
    c.snapshot_period = 50;
    std::vector<Checkpoint> snaps;
    Trainer first(c, src);
    first.run([&](const Checkpoint& cp) { snaps.push_back(cp); });
    const RunArtifact a = first.artifact();
    const RunArtifact b = train(c, src);
    const bool same = trace_csv(a.traces) == trace_csv(b.traces) && a.dict.a() == b.dict.a();

    bool resumed_same = false;
    if (!snaps.empty()) {
      const auto dir = std::filesystem::temp_directory_path() / ("lsc_acceptance_snap_" + to_string(kind));
      save_checkpoint(dir, snaps.front());
      Trainer resumed(c, src, load_checkpoint(dir));
      resumed.run();
      const RunArtifact r = resumed.artifact();
      resumed_same = trace_csv(r.traces) == trace_csv(a.traces) &&
                     std::memcmp(r.dict.a().data(), a.dict.a().data(), sizeof(double) * a.dict.a().size()) == 0 &&
                     r.reservoir.values == a.reservoir.values && r.params.u0 == a.params.u0;
      std::filesystem::remove_all(dir);
    }
    pass = pass && same && resumed_same;
    detail += (detail.empty() ? "" : "; ") + to_string(kind) + ": rerun " + (same ? "identical" : "DIFFERS") +
              ", resume from disk snapshot " + (resumed_same ? "bit-exact" : "DIFFERS");
  }
  return {pass, detail};
}

struct Criterion {
  const char* name;
  Outcome (*run)();
};

const Criterion kCriteria[] = {
    {"gradient suite", gradients},
    {"sampler calibration (OU)", ou_calibration},
    {"prior realization", prior_realization},
    {"bars recovery", bars_recovery},
    {"posterior matches prior", posterior_matches_prior},
    {"pi learning", pi_learning},
    {"norm bifurcation", norm_bifurcation},
    {"duplication halving", duplication_halving},
    {"time-scale invariance", time_scale_invariance},
    {"unbounded-growth contrast", norm_drift},
    {"determinism", determinism},
};

}  // namespace

int main(int argc, char** argv) {
  constexpr int count = static_cast<int>(std::size(kCriteria));
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) {
    const int n = std::atoi(argv[i]);
    if (n < 1 || n > count) {
      std::fprintf(stderr, "usage: %s [criterion 1..%d ...]\n", argv[0], count);
      return 2;
    }
    selected.push_back(n);
  }
  if (selected.empty()) {
    for (int i = 1; i <= count; ++i) selected.push_back(i);
  }
  int failures = 0;
  for (int n : selected) {
    const Criterion& c = kCriteria[n - 1];
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    std::printf("%s %d %s: %s\n", o.pass ? "PASS" : "FAIL", n, c.name, o.detail.c_str());
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
