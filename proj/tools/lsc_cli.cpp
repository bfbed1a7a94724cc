// lsc: command-line driver for training, evaluation, sweeps and data prep.
//
// Exit codes: 0 success, 1 usage/config error, 2 I/O or format error,
// 3 numerical failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "lsc/data.hpp"
#include "lsc/io.hpp"
#include "lsc/learning.hpp"
#include "lsc/metrics.hpp"
#include "lsc/runfiles.hpp"

namespace fs = std::filesystem;
using namespace lsc;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitIo = 2;
constexpr int kExitNumeric = 3;

std::string fmt(double v) { return KeyValues::format_double(v); }

void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec || !fs::is_directory(p)) throw IoError("cannot create directory " + p.string());
}

// ---------------------------------------------------------------------------

struct GenBarsArgs {
  int p = 8;
  double pi = 0.3;
  double lambda = 1.0;
  double sigma = 0.5;
  std::int64_t n = 10000;
  std::uint64_t seed = 1;
  std::string out;
};

int cmd_gen_bars(const GenBarsArgs& a) {
  BarsSpec spec{a.p, a.pi, a.lambda, a.sigma, a.seed};
  const Batch b = generate_bars(spec, a.n);
  ensure_dir(a.out);
  const fs::path out(a.out);
  write_samples(out / "x.lsct", b.x);
  write_samples(out / "s.lsct", *b.ground_truth);
  write_tensor(out / "dictionary.lsct", to_tensor<float>(bars_dictionary(a.p).a()));
  KeyValues kv;
  kv.set("p", static_cast<std::uint64_t>(a.p));
  kv.set("pi", a.pi);
  kv.set("lambda", a.lambda);
  kv.set("sigma", a.sigma);
  kv.set("n", static_cast<std::uint64_t>(a.n));
  kv.set("seed", a.seed);
  kv.set("x", "x.lsct");
  kv.set("s", "s.lsct");
  kv.set("dictionary", "dictionary.lsct");
  kv.set("x_hash", git_blob_hash(read_file(out / "x.lsct")));
  kv.set("s_hash", git_blob_hash(read_file(out / "s.lsct")));
  write_file(out / "manifest.txt", kv.serialize());
  std::cout << "wrote " << a.n << " samples (D=" << b.d() << ") to " << out.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string solver;
  std::string config;
  std::string data;
  std::string out;
  std::string init = "random";
  std::string resume;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> set;
};

std::string data_hash(const std::string& spec, const DataSource& source) {
  if (fs::is_regular_file(spec)) return git_blob_hash(read_file(spec));
  return git_blob_hash(source.describe());
}

std::optional<Dictionary> resolve_init(const std::string& init, const DataSource& source) {
  if (init == "random") return std::nullopt;
  if (init == "truth") {
    auto t = source.truth();
    if (!t) throw UsageError("--init truth needs a data source with a known dictionary");
    return t;
  }
  return Dictionary(to_matrix(read_tensor<float>(init)));
}

void fill_metrics(Manifest& m, const Trainer& trainer) {
  const RunArtifact art = trainer.artifact();
  m.run.set("final_sigma", art.params.sigma);
  m.run.set("final_lambda", art.params.lambda);
  m.run.set("final_u0", art.params.u0);
  m.run.set("sampled", art.sampled);
  if (!art.traces.empty()) {
    const TraceRecord& last = art.traces.back();
    m.metric.set("t", last.t);
    m.metric.set("nl_mse", last.nl_mse);
    if (!std::isnan(last.mean_cosine)) m.metric.set("mean_cosine", last.mean_cosine);
    m.metric.set("pi_hat", last.pi_hat);
    if (m.config.learn.u0) {
      const Spread pi = converged_pi(art.traces);
      m.metric.set("converged_pi", pi.mean);
      m.metric.set("converged_pi_p10", pi.p10);
      m.metric.set("converged_pi_p90", pi.p90);
    }
  }
  if (art.sampled && art.params.lambda > 0 && !art.reservoir.values.empty()) {
    m.metric.set("reservoir_kl", kl_to_prior(art.reservoir.values, art.params));
  }
}

void write_run_outputs(const fs::path& out, const Trainer& trainer) {
  const RunArtifact art = trainer.artifact();
  write_file(out / "trace.csv", trace_csv(art.traces));
  write_tensor(out / "dictionary.lsct", to_tensor<float>(art.dict.a()));
  Tensor32 r;
  r.dims = {static_cast<std::uint32_t>(art.reservoir.values.size()), 2};
  for (std::size_t i = 0; i < art.reservoir.values.size(); ++i) {
    r.data.push_back(static_cast<float>(art.reservoir.times[i]));
    r.data.push_back(static_cast<float>(art.reservoir.values[i]));
  }
  write_tensor(out / "reservoir.lsct", r);
}

int cmd_train(const TrainArgs& a) {
  Manifest m;
  std::optional<Checkpoint> resume;
  if (!a.resume.empty()) {
    const Manifest prior = Manifest::load(fs::path(a.resume) / "manifest.txt");
    m.config = prior.config;
    m.run.set("data", prior.run.get("data"));
    m.run.set("init", prior.run.get("init", "random"));
    resume = load_checkpoint(a.resume);
  }
  if (!a.config.empty()) {
    const Manifest given = Manifest::parse(read_file(a.config));
    m.config = given.config;
    if (given.run.has("data")) m.run.set("data", given.run.get("data"));
    if (given.run.has("init")) m.run.set("init", given.run.get("init"));
  }
  if (!a.set.empty()) {
    KeyValues overrides;
    for (const auto& kv : a.set) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
      overrides.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    m.config = config_from_keyvalues(overrides, m.config);
  }
  if (!a.solver.empty()) m.config.solver = parse_solver(a.solver);
  if (a.seed) m.config.seed = *a.seed;
  if (!a.data.empty()) m.run.set("data", a.data);
  if (!m.run.has("data")) throw UsageError("--data is required");
  if (!a.resume.empty() && a.init != "random") throw UsageError("--init cannot be combined with --resume");
  if (!m.run.has("init")) m.run.set("init", a.init);
  m.config.validate();
  if (is_sampler(m.config.solver) && m.config.reservoir_burn_in * m.config.params.tau_s >= m.config.params.tau_x) {
    std::cerr << "warning: reservoir burn-in spans the whole presentation; no samples will be recorded\n";
  }

  const std::string data_spec = m.run.get("data");
  const auto source = make_source(data_spec, m.config.seed);
  m.run.set("data_hash", data_hash(data_spec, *source));
  m.run.set("trace", "trace.csv");
  m.run.set("dictionary", "dictionary.lsct");
  m.run.set("reservoir", "reservoir.lsct");

  const fs::path out(a.out);
  ensure_dir(out);
  std::vector<std::string> snapshots;
  auto sink = [&](const Checkpoint& c) {
    char name[40];
    std::snprintf(name, sizeof name, "step_%012llu", static_cast<unsigned long long>(c.step));
    const fs::path dir = out / "snapshots" / name;
    save_checkpoint(dir, c);
    Manifest snap = m;
    snap.run.set("status", "snapshot");
    write_file(dir / "manifest.txt", snap.serialize());
    snapshots.push_back((fs::path("snapshots") / name).string());
  };

  std::optional<Trainer> trainer;
  if (resume) {
    trainer.emplace(m.config, *source, std::move(*resume));
  } else {
    trainer.emplace(m.config, *source, resolve_init(m.run.get("init"), *source));
  }
  int code = kExitOk;
  try {
    trainer->run(sink);
    m.run.set("status", "ok");
  } catch (const NonFiniteError& e) {
    m.run.set("status", "failed");
    m.run.set("failure_step", e.step);
    m.run.set("failure_tensor", e.tensor);
    std::cerr << "error: " << e.what() << "\n";
    code = kExitNumeric;
  }
  std::string snap_list;
  for (const auto& s : snapshots) snap_list += (snap_list.empty() ? "" : ";") + s;
  m.run.set("snapshots", snap_list);
  write_run_outputs(out, *trainer);
  fill_metrics(m, *trainer);
  write_file(out / "manifest.txt", m.serialize());
  if (code == kExitOk) {
    std::cout << "trained " << to_string(m.config.solver) << " -> " << out.string() << "\n";
    for (const auto& k : m.metric.keys()) std::cout << "  " << k << " = " << m.metric.get(k) << "\n";
  }
  return code;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string run;
  std::string mode;
  std::string truth;
  std::size_t windows = 10;
};

struct RunFiles {
  Manifest manifest;
  std::vector<double> times;
  std::vector<double> values;
  ModelParams final_params;
};

RunFiles load_run(const fs::path& dir) {
  RunFiles r;
  r.manifest = Manifest::load(dir / "manifest.txt");
  const Tensor32 res = read_tensor<float>(dir / r.manifest.run.get("reservoir", "reservoir.lsct"));
  if (res.dims.size() != 2 || res.dims[1] != 2) throw FormatError("reservoir tensor must be n x 2");
  for (std::size_t i = 0; i < res.dims[0]; ++i) {
    r.times.push_back(res.data[2 * i]);
    r.values.push_back(res.data[2 * i + 1]);
  }
  r.final_params = r.manifest.config.params;
  r.final_params.sigma = r.manifest.run.get_double("final_sigma", r.final_params.sigma);
  r.final_params.lambda = r.manifest.run.get_double("final_lambda", r.final_params.lambda);
  r.final_params.u0 = r.manifest.run.get_double("final_u0", r.final_params.u0);
  return r;
}

int cmd_eval(const EvalArgs& a) {
  const fs::path dir(a.run);
  if (a.mode == "recovery") {
    const Manifest m = Manifest::load(dir / "manifest.txt");
    const Matrix learned = to_matrix(read_tensor<float>(dir / m.run.get("dictionary", "dictionary.lsct")));
    Matrix truth;
    if (!a.truth.empty() && !(a.truth == "bars" || a.truth.rfind("bars:", 0) == 0)) {
      truth = to_matrix(read_tensor<float>(a.truth));
    } else {
      const auto src = make_source(a.truth.empty() ? m.run.get("data") : a.truth, m.config.seed);
      auto t = src->truth();
      if (!t) throw UsageError("no truth dictionary known for this run; pass --truth FILE");
      truth = t->a();
    }
    const RecoveryResult r = dictionary_recovery(learned, truth);
    std::cout << "mean_best_cosine," << fmt(r.mean_best_cosine) << "\n";
    return kExitOk;
  }

  const RunFiles run = load_run(dir);
  const ModelParams& p = run.final_params;
  if (!(p.lambda > 0)) throw UsageError("histograms need lambda > 0");
  const double width = 0.1 / p.lambda;
  const std::size_t bins = slab_bin_count(p.lambda, width);
  const bool sampled = run.manifest.run.get_bool("sampled", false);
  const double zero_tol = sampled ? 0.0 : kZeroTolerance;

  if (a.mode == "kl") {
    if (!sampled) {
      throw UsageError("kl mode needs posterior samples, but solver " + to_string(run.manifest.config.solver) +
                       " stores MAP codes; use --mode distr to inspect their histogram");
    }
    if (run.values.empty()) throw UsageError("empty sample reservoir");
    if (a.windows < 1) throw UsageError("--windows must be >= 1");
    const auto [lo_it, hi_it] = std::minmax_element(run.times.begin(), run.times.end());
    const double lo = *lo_it, hi = *hi_it;
    const double span = (hi - lo) / static_cast<double>(a.windows);
    std::cout << "t_start,t_end,samples,kl\n";
    for (std::size_t w = 0; w < a.windows; ++w) {
      const double t0 = lo + span * static_cast<double>(w);
      const double t1 = w + 1 == a.windows ? hi : lo + span * static_cast<double>(w + 1);
      std::vector<double> vals;
      for (std::size_t i = 0; i < run.values.size(); ++i) {
        const bool inside = run.times[i] >= t0 && (run.times[i] < t1 || (w + 1 == a.windows && run.times[i] <= t1));
        if (inside) vals.push_back(run.values[i]);
      }
      if (vals.empty()) continue;
      const Histogram h = coefficient_histogram(vals, width, bins, zero_tol);
      std::cout << fmt(t0) << "," << fmt(t1) << "," << vals.size() << ","
                << fmt(kl_to_prior(h, pi_from_u0(p.u0, p.lambda), p.lambda)) << "\n";
    }
    return kExitOk;
  }

  if (a.mode == "distr") {
    if (run.values.empty()) throw UsageError("empty sample reservoir");
    const Histogram h = coefficient_histogram(run.values, width, bins, zero_tol);
    const double kl = kl_to_prior(h, pi_from_u0(p.u0, p.lambda), p.lambda);
    std::cout << "# solver=" << to_string(run.manifest.config.solver) << " total=" << h.total()
              << " zero_atom=" << h.zero_atom << " underflow=" << h.underflow << " kl=" << fmt(kl) << "\n";
    std::cout << "bin_lo,bin_hi,count\n";
    std::cout << "0,0," << h.zero_atom << "\n";
    for (std::size_t i = 0; i < h.counts.size(); ++i) {
      const double b0 = width * static_cast<double>(i);
      const std::string b1 = i + 1 == h.counts.size() ? "inf" : fmt(width * static_cast<double>(i + 1));
      std::cout << fmt(b0) << "," << b1 << "," << h.counts[i] << "\n";
    }
    return kExitOk;
  }
  throw UsageError("--mode must be one of kl, recovery, distr");
}

// ---------------------------------------------------------------------------

struct SweepArgs {
  std::string spec;
  std::string out;
};

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> v;
  std::string cell;
  std::istringstream in(text);
  while (std::getline(in, cell, ',')) {
    try {
      v.push_back(std::stod(cell));
    } catch (const std::exception&) {
      throw ConfigError("sweep values: cannot parse '" + cell + "'");
    }
  }
  return v;
}

int cmd_sweep(const SweepArgs& a) {
  const KeyValues all = KeyValues::load(a.spec);
  KeyValues cfg;
  SweepSpec spec;
  std::string data;
  for (const auto& k : all.keys()) {
    if (k == "param") {
      spec.param = parse_sweep_param(all.get(k));
    } else if (k == "values") {
      spec.values = parse_grid(all.get(k));
    } else if (k == "data") {
      data = all.get(k);
    } else if (k == "base_k") {
      spec.base_k = static_cast<Eigen::Index>(all.get_uint(k));
    } else if (k == "heldout_batches") {
      spec.heldout_batches = all.get_uint(k);
    } else {
      cfg.set(k, all.get(k));
    }
  }
  if (data.empty()) throw ConfigError("sweep spec needs a 'data' key");
  spec.base = config_from_keyvalues(cfg);
  spec.validate();
  const auto source = make_source(data, spec.base.seed);
  const fs::path out(a.out);
  ensure_dir(out);

  std::size_t failures = 0;
  auto on_point = [&](std::size_t i, const TrainConfig& c, const RunArtifact* art, const SweepPoint& pt) {
    char name[32];
    std::snprintf(name, sizeof name, "point_%03zu", i);
    const fs::path dir = out / name;
    ensure_dir(dir);
    Manifest m;
    m.config = c;
    m.run.set("data", data);
    m.run.set("sweep_param", to_string(spec.param));
    m.run.set("sweep_value", pt.value);
    m.run.set("status", pt.ok ? "ok" : "failed");
    if (!pt.ok) {
      m.run.set("error", pt.error);
      ++failures;
      std::cerr << "warning: sweep point " << i << " (" << fmt(pt.value) << ") failed: " << pt.error << "\n";
    }
    if (art) {
      write_file(dir / "trace.csv", trace_csv(art->traces));
      write_tensor(dir / "dictionary.lsct", to_tensor<float>(art->dict.a()));
      m.run.set("final_sigma", art->params.sigma);
      m.run.set("final_lambda", art->params.lambda);
      m.run.set("final_u0", art->params.u0);
    }
    if (pt.ok) {
      m.metric.set("summary", pt.summary.mean);
      m.metric.set("p10", pt.summary.p10);
      m.metric.set("p90", pt.summary.p90);
    }
    write_file(dir / "manifest.txt", m.serialize());
    std::cout << to_string(spec.param) << "=" << fmt(pt.value) << " summary=" << fmt(pt.summary.mean) << "\n";
  };
  const SweepResult result = run_sweep(spec, *source, on_point);

  std::string csv = "value,summary,p10,p90,mean_active,status\n";
  for (const auto& pt : result.points) {
    auto cell = [](double v) { return std::isnan(v) ? std::string() : fmt(v); };
    csv += fmt(pt.value) + "," + cell(pt.summary.mean) + "," + cell(pt.summary.p10) + "," + cell(pt.summary.p90) + "," +
           cell(pt.mean_active) + "," + (pt.ok ? "ok" : "failed") + "\n";
  }
  write_file(out / "aggregate.csv", csv);
  if (result.monotonicity) {
    const auto& mr = *result.monotonicity;
    const std::string report = std::string("monotone = ") + (mr.monotone ? "true" : "false") +
                               "\nincreases = " + std::to_string(mr.increases) +
                               "\nlarge_increases = " + std::to_string(mr.large_increases) + "\n";
    write_file(out / "monotonicity.txt", report);
    std::cout << report;
  }
  if (failures) std::cerr << "warning: " << failures << " sweep point(s) failed\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct WhitenArgs {
  std::string in;
  std::string out;
  std::optional<double> eps;
};

int cmd_whiten(const WhitenArgs& a) {
  const Matrix x = read_samples(a.in);
  if (x.cols() < x.rows()) throw UsageError("insufficient patches for covariance estimate");
  const double eps = a.eps ? *a.eps : default_zca_eps(x);
  const Whitened w = whiten_zca(x, eps);
  write_samples(a.out, w.x);
  write_tensor(a.out + ".mean.lsct", to_tensor<float>(Matrix(w.transform.mean.transpose())));
  write_tensor(a.out + ".w.lsct", to_tensor<float>(w.transform.w));
  KeyValues kv;
  kv.set("eps", eps);
  kv.set("input", a.in);
  kv.set("input_hash", git_blob_hash(read_file(a.in)));
  kv.set("mean", fs::path(a.out + ".mean.lsct").filename().string());
  kv.set("w", fs::path(a.out + ".w.lsct").filename().string());
  write_file(a.out + ".transform.txt", kv.serialize());
  std::cout << "whitened " << x.cols() << " patches (D=" << x.rows() << ", eps=" << fmt(eps) << ")\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse coding with Langevin posterior sampling"};
  app.require_subcommand(1);

  GenBarsArgs gen;
  auto* g = app.add_subcommand("gen-bars", "generate bars data");
  g->add_option("--p", gen.p, "grid side length")->check(CLI::Range(2, 1 << 15));
  g->add_option("--pi", gen.pi, "activation probability")
      ->check(CLI::Validator(
          [](std::string& v) {
            double x = 0;
            return CLI::detail::lexical_cast(v, x) && x > 0 && x <= 1 ? std::string() : std::string("must lie in (0, 1]");
          },
          "(0,1]"));
  g->add_option("--lambda", gen.lambda, "slab rate")->check(CLI::PositiveNumber);
  g->add_option("--sigma", gen.sigma, "noise std")->check(CLI::NonNegativeNumber);
  g->add_option("--n", gen.n, "number of samples")->check(CLI::NonNegativeNumber);
  g->add_option("--seed", gen.seed, "seed");
  g->add_option("--out", gen.out, "output directory")->required();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train a dictionary");
  t->add_option("--solver", tr.solver, "dsc, lca, ssc, lsc or l0lsc")
      ->check(CLI::IsMember({"dsc", "lca", "ssc", "lsc", "l0lsc"}));
  t->add_option("--config", tr.config, "key=value config file (a run manifest also works)");
  t->add_option("--data", tr.data, "sample tensor file or bars:p=8,pi=0.3,...");
  t->add_option("--out", tr.out, "output run directory")->required();
  t->add_option("--init", tr.init, "random, truth or a D x K tensor file");
  t->add_option("--resume", tr.resume, "snapshot directory to resume from");
  t->add_option("--seed", tr.seed, "seed (overrides the config)");
  t->add_option("--set", tr.set, "config override key=value (repeatable)");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "evaluate a run");
  e->add_option("--run", ev.run, "run directory")->required();
  e->add_option("--mode", ev.mode, "kl, recovery or distr")->required()->check(CLI::IsMember({"kl", "recovery", "distr"}));
  e->add_option("--truth", ev.truth, "truth dictionary tensor or bars spec (recovery)");
  e->add_option("--windows", ev.windows, "time windows for kl mode");

  SweepArgs sw;
  auto* s = app.add_subcommand("sweep", "run a parameter sweep");
  s->add_option("--spec", sw.spec, "sweep spec file")->required();
  s->add_option("--out", sw.out, "output directory")->required();

  WhitenArgs wh;
  auto* w = app.add_subcommand("whiten", "ZCA-whiten a patch tensor");
  w->add_option("--in", wh.in, "input N x D tensor")->required();
  w->add_option("--out", wh.out, "output tensor")->required();
  w->add_option("--eps", wh.eps, "regularizer (default: 1% of the mean eigenvalue)")->check(CLI::NonNegativeNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return kExitUsage;
  }

  try {
    if (g->parsed()) return cmd_gen_bars(gen);
    if (t->parsed()) return cmd_train(tr);
    if (e->parsed()) return cmd_eval(ev);
    if (s->parsed()) return cmd_sweep(sw);
    if (w->parsed()) return cmd_whiten(wh);
  } catch (const IoError& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kExitIo;
  } catch (const FormatError& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kExitIo;
  } catch (const NumericError& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kExitNumeric;
  } catch (const Error& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kExitUsage;
  } catch (const std::filesystem::filesystem_error& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kExitIo;
  }
  return kExitUsage;
}
