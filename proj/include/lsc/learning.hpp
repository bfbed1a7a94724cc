#pragma once

// Training orchestration: one TrainConfig drives any solver, records traces
// and a thinned latent-sample reservoir, emits resumable checkpoints, and
// backs the lambda / u0 / overcompleteness sweeps.

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lsc/data.hpp"
#include "lsc/dynamics.hpp"
#include "lsc/metrics.hpp"
#include "lsc/noise.hpp"
#include "lsc/types.hpp"

namespace lsc {

struct NonFiniteError : NumericError {
  NonFiniteError(std::string tensor_name, std::uint64_t at_step)
      : NumericError("non-finite value in " + tensor_name + " at step " + std::to_string(at_step)),
        tensor(std::move(tensor_name)),
        step(at_step) {}
  std::string tensor;
  std::uint64_t step;
};

struct TrainConfig {
  SolverKind solver = SolverKind::LSC_L0;
  ModelParams params;
  LearnFlags learn;
  double t_max = 3000;                   // simultaneous solvers
  NestedSchedule nested{1000, 1000, true};  // dsc / lca
  std::optional<bool> normalize;         // simultaneous solvers; default per SimulationOptions
  Eigen::Index batch_size = 100;
  Eigen::Index k = 0;  // dictionary size; 0 = the source's truth size, else D
  std::uint64_t seed = 1;
  bool warm_start = false;
  double eval_period = 10;
  double snapshot_period = 0;  // 0 disables snapshots
  double reservoir_burn_in = 5;  // in units of tau_s, per batch presentation
  double reservoir_thin = 1;     // in units of tau_s
  std::uint64_t reservoir_cap = 1'000'000;

  bool nested_solver() const { return solver == SolverKind::DSC || solver == SolverKind::LCA; }

  // Simulated time covered by one outer iteration of the nested solvers.
  double outer_span() const { return params.dt * static_cast<double>(nested.inner); }

  void validate() const {
    params.validate();
    auto multiple_of_dt = [&](double v) {
      const double r = v / params.dt;
      return std::abs(r - std::round(r)) <= 1e-9 * std::max(1.0, r);
    };
    if (!(eval_period > 0) || !multiple_of_dt(eval_period)) {
      throw ConfigError("eval_period must be a positive multiple of dt");
    }
    if (snapshot_period < 0 || (snapshot_period > 0 && !multiple_of_dt(snapshot_period))) {
      throw ConfigError("snapshot_period must be a positive multiple of dt (or 0 to disable)");
    }
    if (!(t_max >= 0) || !std::isfinite(t_max)) throw ConfigError("t_max must be >= 0");
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (k < 0) throw ConfigError("k must be >= 0");
    if (nested_solver() && nested.inner < 1) throw ConfigError("n_s must be >= 1");
    if (!(reservoir_burn_in >= 0) || !(reservoir_thin > 0)) throw ConfigError("invalid reservoir schedule");
    if (reservoir_cap < 1) throw ConfigError("reservoir_cap must be >= 1");
    if (learn.u0 && solver != SolverKind::LSC_L0) throw ConfigError("learn_u0 requires the l0lsc solver");
    if ((learn.sigma || learn.lambda) && !is_sampler(solver)) {
      throw ConfigError("sigma/lambda learning requires a sampling solver (lsc or l0lsc)");
    }
  }
};

// Uniform reservoir of scalar latent samples with their simulation times.
// Replacement draws are keyed by the running sample count, so the content is
// a pure function of the sample sequence.
struct Reservoir {
  std::uint64_t cap = 1'000'000;
  std::uint64_t seed = 0;
  std::uint64_t seen = 0;
  std::vector<double> values;
  std::vector<double> times;

  void add(double t, double v) {
    if (values.size() < cap) {
      values.push_back(v);
      times.push_back(t);
    } else {
      Xoshiro256 eng(hash_key({seed, streams::kReservoir, seen}));
      const std::uint64_t j = std::uniform_int_distribution<std::uint64_t>(0, seen)(eng);
      if (j < cap) {
        values[j] = v;
        times[j] = t;
      }
    }
    ++seen;
  }

  void add(double t, const Matrix& s) {
    for (Eigen::Index i = 0; i < s.size(); ++i) add(t, s.data()[i]);
  }
};

struct Checkpoint {
  std::uint64_t step = 0;  // simultaneous: absolute step; nested: completed outer iterations
  std::uint64_t batch_index = 0;
  Dictionary dict;
  ModelParams params;
  LatentState latents;
  Reservoir reservoir;
  std::vector<TraceRecord> traces;
};

struct RunArtifact {
  Dictionary dict;
  ModelParams params;
  std::vector<TraceRecord> traces;
  Reservoir reservoir;
  bool sampled = false;  // reservoir holds posterior samples rather than MAP codes
};

namespace detail {

inline void require_finite_state(const Dictionary& dict, const LatentState& lat, const ModelParams& p,
                                 std::uint64_t step) {
  if (!dict.a().allFinite()) throw NonFiniteError("dictionary", step);
  if (!lat.u.allFinite()) throw NonFiniteError("latents.u", step);
  if (!lat.s.allFinite()) throw NonFiniteError("latents.s", step);
  if (!std::isfinite(p.u0)) throw NonFiniteError("u0", step);
  if (!std::isfinite(p.sigma)) throw NonFiniteError("sigma", step);
  if (!std::isfinite(p.lambda)) throw NonFiniteError("lambda", step);
}

}  // namespace detail

inline Eigen::Index resolve_k(const TrainConfig& cfg, const DataSource& source) {
  if (cfg.k > 0) return cfg.k;
  if (auto t = source.truth()) return t->k();
  return source.dim();
}

class Trainer {
 public:
  using SnapshotSink = std::function<void(const Checkpoint&)>;

  Trainer(TrainConfig cfg, const DataSource& source, std::optional<Dictionary> init = std::nullopt)
      : cfg_(std::move(cfg)), source_(source), truth_(source.truth()) {
    cfg_.validate();
    Dictionary dict = init ? std::move(*init) : random_dictionary(source.dim(), resolve_k(cfg_, source), cfg_.seed);
    if (dict.d() != source.dim()) throw DimensionError("dictionary rows do not match data dimension");
    reservoir_ = {cfg_.reservoir_cap, cfg_.seed, 0, {}, {}};
    if (cfg_.nested_solver()) {
      dict_ = std::move(dict);
      params_ = cfg_.params;
      traces_.push_back(make_trace(0.0, cfg_.solver, dict_, params_, {}, Matrix(dict_.d(), 0), truth_));
    } else {
      sim_.emplace(source_, sim_options(), cfg_.params, std::move(dict));
      traces_.push_back(sim_->trace(truth_));
    }
  }

  Trainer(TrainConfig cfg, const DataSource& source, Checkpoint resume)
      : cfg_(std::move(cfg)), source_(source), truth_(source.truth()) {
    cfg_.validate();
    reservoir_ = std::move(resume.reservoir);
    traces_ = std::move(resume.traces);
    if (cfg_.nested_solver()) {
      dict_ = std::move(resume.dict);
      params_ = resume.params;
      outer_done_ = resume.step;
    } else {
      SimulationState st;
      st.dict = std::move(resume.dict);
      st.params = resume.params;
      st.latents = std::move(resume.latents);
      st.step = resume.step;
      st.batch_index = resume.batch_index;
      sim_.emplace(source_, sim_options(), std::move(st));
    }
  }

  const TrainConfig& config() const { return cfg_; }

  void run(const SnapshotSink& on_snapshot = {}) {
    if (cfg_.nested_solver()) {
      run_nested(on_snapshot);
    } else {
      run_simultaneous(on_snapshot);
    }
  }

  Checkpoint checkpoint() const {
    Checkpoint c;
    c.reservoir = reservoir_;
    c.traces = traces_;
    if (sim_) {
      const auto& st = sim_->state();
      c.step = st.step;
      c.batch_index = st.batch_index;
      c.dict = st.dict;
      c.params = st.params;
      c.latents = st.latents;
    } else {
      c.step = outer_done_;
      c.batch_index = outer_done_;
      c.dict = dict_;
      c.params = params_;
    }
    return c;
  }

  RunArtifact artifact() const {
    RunArtifact a;
    a.dict = sim_ ? sim_->state().dict : dict_;
    a.params = sim_ ? sim_->state().params : params_;
    a.traces = traces_;
    a.reservoir = reservoir_;
    a.sampled = is_sampler(cfg_.solver);
    return a;
  }

 private:
  SimulationOptions sim_options() const {
    SimulationOptions o;
    o.kind = cfg_.solver;
    o.learn = cfg_.learn;
    o.batch_size = cfg_.batch_size;
    o.seed = cfg_.seed;
    o.normalize = cfg_.normalize;
    o.warm_start = cfg_.warm_start;
    o.eval_period = cfg_.eval_period;
    return o;
  }

  void run_simultaneous(const SnapshotSink& on_snapshot) {
    Simulator& sim = *sim_;
    const double dt = cfg_.params.dt;
    const std::uint64_t total = detail::total_steps(cfg_.t_max, dt);
    const std::uint64_t every = detail::period_steps(cfg_.eval_period, dt);
    const std::uint64_t snap = detail::period_steps(cfg_.snapshot_period, dt);
    const std::uint64_t burn = static_cast<std::uint64_t>(std::llround(cfg_.reservoir_burn_in * cfg_.params.tau_s / dt));
    const std::uint64_t thin =
        std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::llround(cfg_.reservoir_thin * cfg_.params.tau_s / dt)));
    const bool sampler = is_sampler(cfg_.solver);
    while (sim.state().step < total) {
      sim.step();
      const auto& st = sim.state();
      detail::require_finite_state(st.dict, st.latents, st.params, st.step);
      if (sampler) {
        const std::uint64_t pos = sim.position_in_batch();
        if (pos >= burn && (pos - burn) % thin == 0) reservoir_.add(sim.time(), st.latents.s);
      }
      if (st.step % every == 0) traces_.push_back(sim.trace(truth_));
      if (snap && on_snapshot && st.step % snap == 0 && st.step < total) on_snapshot(checkpoint());
    }
  }

  void run_nested(const SnapshotSink& on_snapshot) {
    const double span = cfg_.outer_span();
    const std::uint64_t every = std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::llround(cfg_.eval_period / span)));
    const std::uint64_t snap =
        cfg_.snapshot_period > 0
            ? std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::llround(cfg_.snapshot_period / span)))
            : 0;
    NestedSchedule schedule = cfg_.nested;
    if (cfg_.normalize) schedule.normalize = *cfg_.normalize;
    while (outer_done_ < schedule.outer) {
      const Batch b = source_.batch(outer_done_, cfg_.batch_size);
      if (b.d() != dict_.d()) throw DimensionError("batch dimension does not match dictionary");
      const LatentState lat = cfg_.learn.dictionary
                                  ? nested_iteration(dict_, b.x, params_, cfg_.solver, schedule)
                                  : infer_map(dict_.a(), b.x, params_, cfg_.solver, schedule.inner);
      ++outer_done_;
      detail::require_finite_state(dict_, lat, params_, outer_done_ * schedule.inner);
      const double t = span * static_cast<double>(outer_done_);
      reservoir_.add(t, lat.s);
      if (outer_done_ % every == 0) traces_.push_back(make_trace(t, cfg_.solver, dict_, params_, lat, b.x, truth_));
      if (snap && on_snapshot && outer_done_ % snap == 0 && outer_done_ < schedule.outer) on_snapshot(checkpoint());
    }
  }

  TrainConfig cfg_;
  const DataSource& source_;
  std::optional<Dictionary> truth_;
  std::optional<Simulator> sim_;
  Dictionary dict_;  // nested solvers
  ModelParams params_;
  std::uint64_t outer_done_ = 0;
  Reservoir reservoir_;
  std::vector<TraceRecord> traces_;
};

inline RunArtifact train(const TrainConfig& cfg, const DataSource& source, std::optional<Dictionary> init = std::nullopt,
                         const Trainer::SnapshotSink& on_snapshot = {}) {
  Trainer t(cfg, source, std::move(init));
  t.run(on_snapshot);
  return t.artifact();
}

// ---------------------------------------------------------------------------
// Summaries

struct Spread {
  double mean = std::numeric_limits<double>::quiet_NaN();
  double p10 = std::numeric_limits<double>::quiet_NaN();
  double p90 = std::numeric_limits<double>::quiet_NaN();
};

inline Spread spread_of(const std::vector<double>& v) {
  if (v.empty()) return {};
  Spread s;
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  s.p10 = quantile(v, 0.1);
  s.p90 = quantile(v, 0.9);
  return s;
}

// Values of `get` over the final `fraction` of the trace records (at least one).
template <class Getter>
std::vector<double> final_window(const std::vector<TraceRecord>& traces, double fraction, Getter get) {
  if (traces.empty()) return {};
  const auto n = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(traces.size()))));
  std::vector<double> out;
  for (std::size_t i = traces.size() - std::min(n, traces.size()); i < traces.size(); ++i) out.push_back(get(traces[i]));
  return out;
}

// Prior activation probability exp(-lambda u0) over the final 10% of the run.
inline Spread converged_pi(const std::vector<TraceRecord>& traces, double fraction = 0.1) {
  return spread_of(final_window(traces, fraction, [](const TraceRecord& r) { return pi_from_u0(r.u0, r.lambda); }));
}

// Column pairs (i < j) with |cosine| above the threshold; zero columns never match.
inline std::vector<std::pair<Eigen::Index, Eigen::Index>> duplicate_pairs(const Matrix& a, double threshold = 0.95) {
  const Matrix c = abs_cosines(a, a);
  std::vector<std::pair<Eigen::Index, Eigen::Index>> out;
  for (Eigen::Index i = 0; i < a.cols(); ++i) {
    for (Eigen::Index j = i + 1; j < a.cols(); ++j) {
      if (c(i, j) > threshold) out.emplace_back(i, j);
    }
  }
  return out;
}

// Fraction of |s| > kZeroTolerance in MAP codes of held-out batches, one
// value per batch. Held-out batch indices come from their own stream.
inline std::vector<double> heldout_activity(const DataSource& source, const Dictionary& dict, const ModelParams& p,
                                            SolverKind kind, std::uint64_t inner, std::uint64_t batches,
                                            Eigen::Index batch_size) {
  std::vector<double> out;
  for (std::uint64_t i = 0; i < batches; ++i) {
    const Batch b = source.batch(hash_key({streams::kHeldOut, i}), batch_size);
    out.push_back(activity_estimate(infer_map(dict.a(), b.x, p, kind, inner).s, kZeroTolerance));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sweeps

enum class SweepParam { Lambda, U0, Overcompleteness };

inline std::string to_string(SweepParam p) {
  switch (p) {
    case SweepParam::Lambda: return "lambda";
    case SweepParam::U0: return "u0";
    case SweepParam::Overcompleteness: return "overcompleteness";
  }
  return "?";
}

inline SweepParam parse_sweep_param(const std::string& s) {
  if (s == "lambda") return SweepParam::Lambda;
  if (s == "u0") return SweepParam::U0;
  if (s == "overcompleteness") return SweepParam::Overcompleteness;
  throw ConfigError("unknown sweep parameter '" + s + "' (expected lambda, u0 or overcompleteness)");
}

struct SweepSpec {
  SweepParam param = SweepParam::Lambda;
  std::vector<double> values;
  TrainConfig base;
  Eigen::Index base_k = 0;  // overcompleteness unit: K = round(value * base_k); 0 = D
  std::uint64_t heldout_batches = 10;

  void validate() const {
    if (values.empty()) throw ConfigError("sweep grid is empty");
    const bool up = values.size() < 2 || values[1] > values[0];
    for (std::size_t i = 1; i < values.size(); ++i) {
      if (up ? !(values[i] > values[i - 1]) : !(values[i] < values[i - 1])) {
        throw ConfigError("sweep grid must be strictly monotone");
      }
    }
    for (double v : values) {
      if (!std::isfinite(v)) throw ConfigError("sweep grid has a non-finite value");
    }
    switch (param) {
      case SweepParam::Lambda:
        if (!base.nested_solver()) throw ConfigError("lambda sweep requires the dsc or lca solver");
        break;
      case SweepParam::U0:
        if (base.solver != SolverKind::LSC_L0) throw ConfigError("u0 sweep requires the l0lsc solver");
        break;
      case SweepParam::Overcompleteness:
        if (base.solver != SolverKind::LSC_L0 || !base.learn.u0) {
          throw ConfigError("overcompleteness sweep requires l0lsc with learn_u0");
        }
        for (double v : values) {
          if (!(v > 0)) throw ConfigError("overcompleteness must be > 0");
        }
        break;
    }
  }

  // Config for one grid point.
  TrainConfig point_config(double value, Eigen::Index d) const {
    TrainConfig c = base;
    switch (param) {
      case SweepParam::Lambda: c.params.lambda = value; break;
      case SweepParam::U0: c.params.u0 = value; break;
      case SweepParam::Overcompleteness:
        c.k = std::max<Eigen::Index>(1, static_cast<Eigen::Index>(std::llround(value * static_cast<double>(base_k > 0 ? base_k : d))));
        break;
    }
    return c;
  }
};

struct SweepPoint {
  double value = 0;
  bool ok = false;
  std::string error;
  Spread summary;  // lambda: held-out activity; u0: measured activity; overcompleteness: converged pi
  double mean_active = std::numeric_limits<double>::quiet_NaN();  // overcompleteness: pi * K
};

struct MonotonicityReport {
  std::size_t increases = 0;        // adjacent pairs where activity rose
  std::size_t large_increases = 0;  // rises beyond the tolerance
  bool monotone = true;
};

// Non-increasing along the grid, tolerating one adjacent rise of at most `tol`.
inline MonotonicityReport check_non_increasing(const std::vector<double>& v, double tol = 0.01) {
  MonotonicityReport r;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[i - 1]) {
      ++r.increases;
      if (v[i] - v[i - 1] > tol) ++r.large_increases;
    }
  }
  r.monotone = r.large_increases == 0 && r.increases <= 1;
  return r;
}

struct SweepResult {
  SweepParam param = SweepParam::Lambda;
  std::vector<SweepPoint> points;
  std::optional<MonotonicityReport> monotonicity;  // lambda sweeps
};

using SweepPointSink = std::function<void(std::size_t, const TrainConfig&, const RunArtifact*, const SweepPoint&)>;

// Trains every grid point and summarizes it. A failing point is recorded
// and the sweep moves on.
inline SweepResult run_sweep(const SweepSpec& spec, const DataSource& source, const SweepPointSink& on_point = {}) {
  spec.validate();
  SweepResult out;
  out.param = spec.param;
  for (std::size_t i = 0; i < spec.values.size(); ++i) {
    SweepPoint pt;
    pt.value = spec.values[i];
    const TrainConfig cfg = spec.point_config(pt.value, source.dim());
    std::optional<RunArtifact> art;
    try {
      art = train(cfg, source);
      switch (spec.param) {
        case SweepParam::Lambda:
          pt.summary = spread_of(heldout_activity(source, art->dict, art->params, cfg.solver, cfg.nested.inner,
                                                  spec.heldout_batches, cfg.batch_size));
          break;
        case SweepParam::U0:
          pt.summary = spread_of(final_window(art->traces, 0.1, [](const TraceRecord& r) { return r.pi_hat; }));
          break;
        case SweepParam::Overcompleteness:
          pt.summary = converged_pi(art->traces);
          pt.mean_active = pt.summary.mean * static_cast<double>(art->dict.k());
          break;
      }
      pt.ok = true;
    } catch (const Error& e) {
      pt.error = e.what();
    }
    if (on_point) on_point(i, cfg, art ? &*art : nullptr, pt);
    out.points.push_back(pt);
  }
  if (spec.param == SweepParam::Lambda) {
    std::vector<double> act;
    for (const auto& p : out.points) {
      if (p.ok) act.push_back(p.summary.mean);
    }
    out.monotonicity = check_non_increasing(act);
  }
  return out;
}

inline SweepResult sweep_lambda_vs_pi(SweepSpec spec, const DataSource& source, const SweepPointSink& on_point = {}) {
  spec.param = SweepParam::Lambda;
  return run_sweep(spec, source, on_point);
}

inline SweepResult sweep_overcompleteness(SweepSpec spec, const DataSource& source,
                                          const SweepPointSink& on_point = {}) {
  spec.param = SweepParam::Overcompleteness;
  return run_sweep(spec, source, on_point);
}

}  // namespace lsc
