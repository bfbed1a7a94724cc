#pragma once

// Time integration for all solver variants.
//
//   DSC, LCA   nested loop: N_s latent steps per batch, then one dictionary step
//   SSC        simultaneous Euler steps of S and A, A renormalized every step
//   LSC_L1     Euler-Maruyama on the L1 energy, S = U
//   LSC_L0     Euler-Maruyama on the L0 energy in U, S = f(|U|)
//
// Latent steps advance by h = dt / tau_s; the Langevin noise has per-step
// variance 2 T h. Dictionary steps advance by dt / tau_a and use the batch
// mean of dE/dA.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include "lsc/data.hpp"
#include "lsc/metrics.hpp"
#include "lsc/model.hpp"
#include "lsc/noise.hpp"
#include "lsc/types.hpp"

namespace lsc {

struct StepReport {
  double t = 0;
  EnergyBreakdown energy;
  double latent_update_norm = 0;
  double dictionary_update_norm = 0;
};

namespace detail {

inline double latent_rate(const ModelParams& p) { return p.dt / p.tau_s; }

inline double noise_amplitude(const ModelParams& p) { return std::sqrt(2.0 * p.temperature * p.dt / p.tau_s); }

// Batch-mean dictionary increment -(dt/tau_a) (A S - X) S^T / (N sigma^2).
inline Matrix dictionary_increment(const Matrix& r, const Matrix& s, const ModelParams& p) {
  const double n = static_cast<double>(std::max<Eigen::Index>(s.cols(), 1));
  return -(p.dt / p.tau_a) * grad_a_from_residual(r, s, p.sigma) / n;
}

inline void require_ode_kind(SolverKind kind) {
  if (kind != SolverKind::DSC && kind != SolverKind::SSC && kind != SolverKind::LCA) {
    throw UsageError("deterministic latent step supports dsc, ssc and lca only, not " + to_string(kind));
  }
}

inline void require_sampler_kind(SolverKind kind) {
  if (!is_sampler(kind)) throw UsageError("Langevin latent step supports lsc and l0lsc only, not " + to_string(kind));
}

}  // namespace detail

// One deterministic latent step.
//   DSC/SSC: S <- S - h dE/dS.
//   LCA:     U <- U + h (-A^T(A S - X)/sigma^2 - (U - S)), S = g(U; lambda).
inline LatentState step_latents_ode(const LatentState& state, const Matrix& a, const Matrix& x, const ModelParams& p,
                                    SolverKind kind) {
  detail::require_ode_kind(kind);
  detail::require_shapes(a, state.s, x);
  const double h = detail::latent_rate(p);
  const Matrix back = detail::backproject(a, detail::residual(a, state.s, x), p.sigma);
  LatentState next;
  if (kind == SolverKind::LCA) {
    next.u = state.u + h * (-back - (state.u - state.s));
    next.s = threshold_g_lca(next.u, p.lambda);
  } else {
    next.s = state.s - h * detail::grad_s_from_back(state.s, back, p.lambda);
    next.u = next.s;
  }
  return next;
}

// One Euler-Maruyama latent step:
//   U <- U - h dE/dU + sqrt(2 T h) Z,  Z drawn from noise at `step`.
// With T == 0 no noise is drawn and the update is the plain gradient step.
inline LatentState step_latents_langevin(const LatentState& state, const Matrix& a, const Matrix& x,
                                         const ModelParams& p, const NoiseSource& noise, std::uint64_t step,
                                         SolverKind kind = SolverKind::LSC_L0) {
  detail::require_sampler_kind(kind);
  detail::require_shapes(a, state.u, x);
  const double h = detail::latent_rate(p);
  LatentState next;
  if (kind == SolverKind::LSC_L0) {
    const Matrix s = threshold_f(state.u, p.u0);
    const Matrix back = detail::backproject(a, detail::residual(a, s, x), p.sigma);
    next.u = state.u - h * detail::grad_u_from_back(state.u, back, p.u0, p.lambda);
  } else {
    const Matrix back = detail::backproject(a, detail::residual(a, state.u, x), p.sigma);
    next.u = state.u - h * detail::grad_s_from_back(state.u, back, p.lambda);
  }
  if (p.temperature > 0) {
    Matrix z(next.u.rows(), next.u.cols());
    noise.fill_normal(step, z);
    next.u += detail::noise_amplitude(p) * z;
  }
  next.s = kind == SolverKind::LSC_L0 ? threshold_f(next.u, p.u0) : next.u;
  return next;
}

// A <- A - (dt/tau_a) (A S - X) S^T / (N sigma^2).
inline Dictionary step_dictionary(const Dictionary& dict, const LatentState& state, const Matrix& x,
                                  const ModelParams& p) {
  detail::require_shapes(dict.a(), state.s, x);
  Dictionary next = dict;
  next.a() += detail::dictionary_increment(detail::residual(dict.a(), state.s, x), state.s, p);
  return next;
}

// Random N(0, 1/D) dictionary with unit-norm columns.
inline Dictionary random_dictionary(Eigen::Index d, Eigen::Index k, std::uint64_t seed) {
  Matrix a = NoiseSource(seed, streams::kDictionaryInit).normal(0, d, k) / std::sqrt(static_cast<double>(d));
  Dictionary dict(std::move(a));
  dict.normalize();
  return dict;
}

// Snapshot of the evaluation metrics; one row of the trace CSV.
struct TraceRecord {
  double t = 0;
  double energy_recon = 0;   // per datum
  double energy_sparse = 0;  // per datum
  double nl_mse = 0;
  double mean_cosine = std::numeric_limits<double>::quiet_NaN();
  double pi_hat = 0;  // fraction of active coefficients in the current latents
  double u0 = 0;
  double sigma = 0;
  double lambda = 0;
  double norm_min = 0;
  double norm_median = 0;
  double norm_max = 0;
};

inline TraceRecord make_trace(double t, SolverKind kind, const Dictionary& dict, const ModelParams& p,
                              const LatentState& latents, const Matrix& x, const std::optional<Dictionary>& truth) {
  TraceRecord r;
  r.t = t;
  const double n = static_cast<double>(std::max<Eigen::Index>(x.cols(), 1));
  if (x.cols() > 0) {
    const EnergyBreakdown e =
        kind == SolverKind::LSC_L0 ? energy_l0(dict.a(), latents.u, x, p) : energy_l1(dict.a(), latents.s, x, p);
    r.energy_recon = e.recon / n;
    r.energy_sparse = e.sparsity / n;
    r.nl_mse = nl_mse(dict.a(), latents.s, x);
    r.pi_hat = activity_estimate(latents.s, kind == SolverKind::LSC_L0 ? 0.0 : kZeroTolerance);
  }
  if (truth && truth->d() == dict.d() && truth->k() <= dict.k()) {
    r.mean_cosine = dictionary_recovery(dict.a(), truth->a()).mean_best_cosine;
  }
  r.u0 = p.u0;
  r.sigma = p.sigma;
  r.lambda = p.lambda;
  const Vector norms = dict.column_norms();
  std::vector<double> v(norms.data(), norms.data() + norms.size());
  r.norm_min = *std::min_element(v.begin(), v.end());
  r.norm_max = *std::max_element(v.begin(), v.end());
  r.norm_median = quantile(v, 0.5);
  return r;
}

struct LearnFlags {
  bool dictionary = true;
  bool u0 = false;
  bool sigma = false;
  bool lambda = false;
};

struct SimulationOptions {
  SolverKind kind = SolverKind::LSC_L0;
  LearnFlags learn;
  Eigen::Index batch_size = 100;
  std::uint64_t seed = 1;
  std::optional<bool> normalize;  // default: SSC normalizes, samplers do not
  bool warm_start = false;        // keep latents across batch presentations
  double eval_period = 0;         // trace period in time units; 0 disables

  bool normalizes() const { return normalize.value_or(kind == SolverKind::SSC); }
};

struct SimulationState {
  Dictionary dict;
  ModelParams params;
  LatentState latents;
  Batch batch;
  std::uint64_t step = 0;         // absolute step index; t = step * dt
  std::uint64_t batch_index = 0;  // presentation currently on the input
};

inline constexpr double kParamFloor = 1e-6;

// Simultaneous continuous-time solver (SSC, LSC_L1, LSC_L0). A fresh batch is
// presented every tau_x; latents, dictionary and the enabled scalar
// parameters all advance by dt per step.
class Simulator {
 public:
  Simulator(const DataSource& source, SimulationOptions opt, const ModelParams& p, Dictionary init)
      : source_(source), opt_(opt) {
    check_config(p, init);
    state_.dict = std::move(init);
    state_.params = p;
    present(0, true);
  }

  // Resumes from a saved state. The batch is regenerated from its index.
  Simulator(const DataSource& source, SimulationOptions opt, SimulationState saved)
      : source_(source), opt_(opt), state_(std::move(saved)) {
    check_config(state_.params, state_.dict);
    state_.batch = source_.batch(state_.batch_index, opt_.batch_size);
  }

  const SimulationState& state() const { return state_; }
  const SimulationOptions& options() const { return opt_; }
  double time() const { return static_cast<double>(state_.step) * state_.params.dt; }

  std::uint64_t steps_per_batch() const {
    return std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::llround(state_.params.tau_x / state_.params.dt)));
  }

  // Steps since the current batch was presented (1 right after the first step).
  std::uint64_t position_in_batch() const { return state_.step - state_.batch_index * steps_per_batch(); }

  StepReport step() {
    const std::uint64_t spb = steps_per_batch();
    if (state_.step > 0 && state_.step % spb == 0) present(state_.step / spb, !opt_.warm_start);

    ModelParams& p = state_.params;
    const Matrix& a = state_.dict.a();
    const Matrix& x = state_.batch.x;
    LatentState& lat = state_.latents;
    const bool l0 = opt_.kind == SolverKind::LSC_L0;

    const Matrix r = detail::residual(a, lat.s, x);
    const Matrix back = detail::backproject(a, r, p.sigma);

    StepReport rep;
    rep.t = time();
    rep.energy = detail::make_energy(r.squaredNorm() / (2 * p.sigma * p.sigma),
                                     p.lambda * (l0 ? lat.u : lat.s).cwiseAbs().sum());

    const double h = detail::latent_rate(p);
    Matrix du = l0 ? Matrix(-h * detail::grad_u_from_back(lat.u, back, p.u0, p.lambda))
                   : Matrix(-h * detail::grad_s_from_back(lat.s, back, p.lambda));
    if (is_sampler(opt_.kind) && p.temperature > 0) {
      Matrix z(du.rows(), du.cols());
      noise_.fill_normal(state_.step, z);
      du += detail::noise_amplitude(p) * z;
    }

    const double n = static_cast<double>(std::max<Eigen::Index>(x.cols(), 1));
    const double g_u0 = opt_.learn.u0 ? detail::u0_from_back(lat.s, back) : 0.0;
    const double g_sigma = opt_.learn.sigma ? r.squaredNorm() / n / static_cast<double>(x.rows()) - p.sigma * p.sigma : 0.0;
    const double g_lambda =
        opt_.learn.lambda ? (l0 ? lat.u : lat.s).cwiseAbs().sum() / static_cast<double>(lat.s.size()) - 1.0 / p.lambda
                          : 0.0;

    if (opt_.learn.dictionary) {
      const Matrix da = detail::dictionary_increment(r, lat.s, p);
      rep.dictionary_update_norm = da.norm();
      state_.dict.a() += da;
      if (opt_.normalizes()) state_.dict.normalize();
    }

    if (l0) {
      lat.u += du;
    } else {
      lat.s += du;
      lat.u = lat.s;
    }
    rep.latent_update_norm = du.norm();

    if (opt_.learn.u0) p.u0 = std::max(0.0, p.u0 + (p.dt / p.tau_u0) * g_u0);
    if (opt_.learn.sigma) p.sigma = std::max(kParamFloor, p.sigma + (p.dt / p.tau_a) * g_sigma);
    if (opt_.learn.lambda) p.lambda = std::max(kParamFloor, p.lambda - (p.dt / p.tau_a) * g_lambda);
    if (l0) lat.s = threshold_f(lat.u, p.u0);

    ++state_.step;
    return rep;
  }

  TraceRecord trace(const std::optional<Dictionary>& truth) const {
    return make_trace(time(), opt_.kind, state_.dict, state_.params, state_.latents, state_.batch.x, truth);
  }

 private:
  void check_config(const ModelParams& p, const Dictionary& dict) {
    if (opt_.kind == SolverKind::DSC || opt_.kind == SolverKind::LCA) {
      throw UsageError("simultaneous solver supports ssc, lsc and l0lsc; use run_dsc for " + to_string(opt_.kind));
    }
    p.validate();
    if (opt_.learn.u0 && opt_.kind != SolverKind::LSC_L0) throw ConfigError("learn_u0 requires the l0lsc solver");
    if ((opt_.learn.sigma || opt_.learn.lambda) && !is_sampler(opt_.kind)) {
      throw ConfigError("sigma/lambda learning requires a sampling solver (lsc or l0lsc)");
    }
    if (opt_.learn.lambda && !(p.lambda > 0)) throw ConfigError("lambda learning needs lambda > 0");
    if (opt_.batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (dict.d() != source_.dim()) throw DimensionError("dictionary rows do not match data dimension");
    noise_ = NoiseSource(opt_.seed, streams::kLatentNoise);
  }

  void present(std::uint64_t index, bool reinit) {
    state_.batch_index = index;
    state_.batch = source_.batch(index, opt_.batch_size);
    if (state_.batch.d() != state_.dict.d()) throw DimensionError("batch dimension does not match dictionary");
    if (!reinit && state_.latents.u.cols() == state_.batch.n()) return;
    const Eigen::Index k = state_.dict.k(), n = state_.batch.n();
    if (is_sampler(opt_.kind)) {
      state_.latents.u = NoiseSource(opt_.seed, streams::kLatentInit).normal(index, k, n);
    } else {
      state_.latents.u = Matrix::Zero(k, n);
    }
    state_.latents.s =
        opt_.kind == SolverKind::LSC_L0 ? threshold_f(state_.latents.u, state_.params.u0) : state_.latents.u;
  }

  const DataSource& source_;
  SimulationOptions opt_;
  SimulationState state_;
  NoiseSource noise_{0, streams::kLatentNoise};
};

struct SimulationResult {
  Dictionary dict;
  ModelParams params;
  std::vector<TraceRecord> traces;
};

namespace detail {

inline std::uint64_t period_steps(double period, double dt) {
  if (period <= 0) return 0;
  return std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::llround(period / dt)));
}

inline std::uint64_t total_steps(double t_max, double dt) {
  return static_cast<std::uint64_t>(std::llround(t_max / dt));
}

}  // namespace detail

// Runs a simultaneous solver from `init` until t_max. `on_step` (optional)
// sees the simulator after every step.
inline SimulationResult run_simultaneous(const DataSource& source, const ModelParams& p, SolverKind kind,
                                         double t_max, LearnFlags learn, SimulationOptions opt, Dictionary init,
                                         const std::function<void(const Simulator&)>& on_step = {}) {
  if (!(t_max > 0)) throw UsageError("t_max must be > 0");
  opt.kind = kind;
  opt.learn = learn;
  Simulator sim(source, opt, p, std::move(init));
  const auto truth = source.truth();
  const std::uint64_t steps = detail::total_steps(t_max, p.dt);
  const std::uint64_t every = detail::period_steps(opt.eval_period, p.dt);
  SimulationResult out;
  if (every) out.traces.push_back(sim.trace(truth));
  for (std::uint64_t i = 0; i < steps; ++i) {
    sim.step();
    if (on_step) on_step(sim);
    if (every && sim.state().step % every == 0) out.traces.push_back(sim.trace(truth));
  }
  out.dict = sim.state().dict;
  out.params = sim.state().params;
  return out;
}

struct NestedSchedule {
  std::uint64_t outer = 1000;  // N_A
  std::uint64_t inner = 1000;  // N_s
  bool normalize = true;
};

struct NestedOptions {
  SolverKind kind = SolverKind::DSC;
  Eigen::Index batch_size = 100;
  std::uint64_t seed = 1;
  std::uint64_t eval_every = 1;  // outer iterations between trace records; 0 disables
};

// Infers MAP latents for a single batch with N_s deterministic steps from zero.
inline LatentState infer_map(const Matrix& a, const Matrix& x, const ModelParams& p, SolverKind kind,
                             std::uint64_t inner) {
  LatentState lat{Matrix::Zero(a.cols(), x.cols()), Matrix::Zero(a.cols(), x.cols())};
  for (std::uint64_t i = 0; i < inner; ++i) lat = step_latents_ode(lat, a, x, p, kind);
  return lat;
}

// One outer iteration of the nested solver: latents from zero, N_s inner
// steps, one dictionary step, optional renormalization. The dictionary step
// spans the inner loop's elapsed time, N_s * dt.
inline LatentState nested_iteration(Dictionary& dict, const Matrix& x, const ModelParams& p, SolverKind kind,
                                    const NestedSchedule& schedule) {
  LatentState lat = infer_map(dict.a(), x, p, kind, schedule.inner);
  ModelParams outer = p;
  outer.dt = p.dt * static_cast<double>(schedule.inner);
  dict = step_dictionary(dict, lat, x, outer);
  if (schedule.normalize) dict.normalize();
  return lat;
}

inline SimulationResult run_dsc(const DataSource& source, const ModelParams& p, const NestedSchedule& schedule,
                                const NestedOptions& opt, Dictionary init,
                                const std::function<void(std::uint64_t, const Dictionary&, const LatentState&,
                                                         const Batch&)>& on_outer = {}) {
  if (opt.kind != SolverKind::DSC && opt.kind != SolverKind::LCA) {
    throw UsageError("nested solver supports dsc and lca only");
  }
  p.validate();
  if (schedule.inner < 1) throw ConfigError("N_s must be >= 1");
  if (init.d() != source.dim()) throw DimensionError("dictionary rows do not match data dimension");
  const auto truth = source.truth();
  SimulationResult out;
  out.dict = std::move(init);
  out.params = p;
  const double span = p.dt * static_cast<double>(schedule.inner);
  for (std::uint64_t k = 0; k < schedule.outer; ++k) {
    const Batch b = source.batch(k, opt.batch_size);
    const LatentState lat = nested_iteration(out.dict, b.x, p, opt.kind, schedule);
    if (on_outer) on_outer(k, out.dict, lat, b);
    if (opt.eval_every && (k + 1) % opt.eval_every == 0) {
      out.traces.push_back(make_trace(span * static_cast<double>(k + 1), opt.kind, out.dict, p, lat, b.x, truth));
    }
  }
  return out;
}

}  // namespace lsc
