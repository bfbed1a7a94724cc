#pragma once

// Run directories: TrainConfig <-> key=value text, data-source specs,
// checkpoints for bit-exact resume, and the run manifest.
//
// A run directory holds
//   manifest.txt      config keys plus run.* and metric.* entries
//   trace.csv         one TraceRecord per eval period
//   dictionary.lsct   final dictionary (D x K, float32)
//   reservoir.lsct    latent samples, rows (t, s)
//   snapshots/NNNN/   checkpoints (float64 state, see save_checkpoint)

#include <openssl/evp.h>

#include <filesystem>
#include <memory>
#include <string>

#include "lsc/data.hpp"
#include "lsc/io.hpp"
#include "lsc/learning.hpp"

namespace lsc {

// ---------------------------------------------------------------------------
// Config

inline std::string format_normalize(const std::optional<bool>& v) {
  return v ? (*v ? "true" : "false") : "auto";
}

// Canonical serialization: every key, fixed order, resolved values.
inline KeyValues config_to_keyvalues(const TrainConfig& c) {
  KeyValues kv;
  kv.set("solver", to_string(c.solver));
  kv.set("seed", c.seed);
  kv.set("sigma", c.params.sigma);
  kv.set("lambda", c.params.lambda);
  kv.set("u0", c.params.u0);
  kv.set("temperature", c.params.temperature);
  kv.set("tau_s", c.params.tau_s);
  kv.set("tau_a", c.params.tau_a);
  kv.set("tau_u0", c.params.tau_u0);
  kv.set("tau_x", c.params.tau_x);
  kv.set("dt", c.params.dt);
  kv.set("learn_a", c.learn.dictionary);
  kv.set("learn_u0", c.learn.u0);
  kv.set("learn_sigma", c.learn.sigma);
  kv.set("learn_lambda", c.learn.lambda);
  kv.set("t_max", c.t_max);
  kv.set("n_a", c.nested.outer);
  kv.set("n_s", c.nested.inner);
  kv.set("normalize", format_normalize(c.normalize));
  kv.set("batch", static_cast<std::uint64_t>(c.batch_size));
  kv.set("k", static_cast<std::uint64_t>(c.k));
  kv.set("warm_start", c.warm_start);
  kv.set("eval_period", c.eval_period);
  kv.set("snapshot_period", c.snapshot_period);
  kv.set("reservoir_burn_in", c.reservoir_burn_in);
  kv.set("reservoir_thin", c.reservoir_thin);
  kv.set("reservoir_cap", c.reservoir_cap);
  return kv;
}

inline const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = config_to_keyvalues(TrainConfig{}).keys();
  return keys;
}

// Parses a config on top of `base`. Unknown keys are errors. `pi` is accepted
// as an alternative to u0 (u0 = -ln(pi) / lambda).
inline TrainConfig config_from_keyvalues(const KeyValues& kv, TrainConfig base = {}) {
  const auto& known = config_keys();
  for (const auto& key : kv.keys()) {
    if (key != "pi" && std::find(known.begin(), known.end(), key) == known.end()) {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
  TrainConfig c = std::move(base);
  if (kv.has("solver")) c.solver = parse_solver(kv.get("solver"));
  c.seed = kv.get_uint("seed", c.seed);
  c.params.sigma = kv.get_double("sigma", c.params.sigma);
  c.params.lambda = kv.get_double("lambda", c.params.lambda);
  c.params.u0 = kv.get_double("u0", c.params.u0);
  c.params.temperature = kv.get_double("temperature", c.params.temperature);
  c.params.tau_s = kv.get_double("tau_s", c.params.tau_s);
  c.params.tau_a = kv.get_double("tau_a", c.params.tau_a);
  c.params.tau_u0 = kv.get_double("tau_u0", c.params.tau_u0);
  c.params.tau_x = kv.get_double("tau_x", c.params.tau_x);
  c.params.dt = kv.get_double("dt", c.params.dt);
  if (kv.has("pi")) {
    if (kv.has("u0")) throw ConfigError("give either pi or u0, not both");
    c.params.u0 = u0_from_pi(kv.get_double("pi"), c.params.lambda);
  }
  c.learn.dictionary = kv.get_bool("learn_a", c.learn.dictionary);
  c.learn.u0 = kv.get_bool("learn_u0", c.learn.u0);
  c.learn.sigma = kv.get_bool("learn_sigma", c.learn.sigma);
  c.learn.lambda = kv.get_bool("learn_lambda", c.learn.lambda);
  c.t_max = kv.get_double("t_max", c.t_max);
  c.nested.outer = kv.get_uint("n_a", c.nested.outer);
  c.nested.inner = kv.get_uint("n_s", c.nested.inner);
  if (kv.has("normalize")) {
    const auto v = kv.get("normalize");
    if (v == "auto") {
      c.normalize.reset();
    } else {
      c.normalize = kv.get_bool("normalize");
    }
  }
  c.batch_size = static_cast<Eigen::Index>(kv.get_uint("batch", static_cast<std::uint64_t>(c.batch_size)));
  c.k = static_cast<Eigen::Index>(kv.get_uint("k", static_cast<std::uint64_t>(c.k)));
  c.warm_start = kv.get_bool("warm_start", c.warm_start);
  c.eval_period = kv.get_double("eval_period", c.eval_period);
  c.snapshot_period = kv.get_double("snapshot_period", c.snapshot_period);
  c.reservoir_burn_in = kv.get_double("reservoir_burn_in", c.reservoir_burn_in);
  c.reservoir_thin = kv.get_double("reservoir_thin", c.reservoir_thin);
  c.reservoir_cap = kv.get_uint("reservoir_cap", c.reservoir_cap);
  return c;
}

inline bool operator==(const TrainConfig& a, const TrainConfig& b) {
  return config_to_keyvalues(a).serialize() == config_to_keyvalues(b).serialize();
}

// ---------------------------------------------------------------------------
// Data sources

// "bars:p=8,pi=0.3,lambda=1,sigma=0.5,seed=1" (all fields optional) or the
// path of an N x D sample tensor.
inline std::unique_ptr<DataSource> make_source(const std::string& spec, std::uint64_t seed) {
  if (spec == "bars" || spec.rfind("bars:", 0) == 0) {
    BarsSpec b;
    b.seed = seed;
    if (spec.size() > 5) {
      std::string body = spec.substr(5);
      std::replace(body.begin(), body.end(), ',', '\n');
      const KeyValues kv = KeyValues::parse(body, "bars spec");
      for (const auto& key : kv.keys()) {
        if (key != "p" && key != "pi" && key != "lambda" && key != "sigma" && key != "seed") {
          throw ConfigError("unknown bars field '" + key + "'");
        }
      }
      b.p = static_cast<int>(kv.get_uint("p", static_cast<std::uint64_t>(b.p)));
      b.pi = kv.get_double("pi", b.pi);
      b.lambda = kv.get_double("lambda", b.lambda);
      b.sigma = kv.get_double("sigma", b.sigma);
      b.seed = kv.get_uint("seed", b.seed);
    }
    return std::make_unique<BarsSource>(b);
  }
  return std::make_unique<MatrixSource>(read_samples(spec), seed, spec);
}

// ---------------------------------------------------------------------------
// Hashing

inline std::string sha1_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha1(), nullptr) != 1) {
    throw Error("SHA-1 digest failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

// Same digest as `git hash-object`.
inline std::string git_blob_hash(std::string_view content) {
  std::string blob = "blob " + std::to_string(content.size());
  blob.push_back('\0');
  blob.append(content);
  return sha1_hex(blob);
}

// ---------------------------------------------------------------------------
// Checkpoints

inline Tensor64 reservoir_tensor(const Reservoir& r) {
  Tensor64 t;
  t.dims = {static_cast<std::uint32_t>(r.values.size()), 2};
  t.data.reserve(r.values.size() * 2);
  for (std::size_t i = 0; i < r.values.size(); ++i) {
    t.data.push_back(r.times[i]);
    t.data.push_back(r.values[i]);
  }
  return t;
}

inline void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& c) {
  std::filesystem::create_directories(dir);
  KeyValues kv;
  kv.set("step", c.step);
  kv.set("batch_index", c.batch_index);
  kv.set("sigma", c.params.sigma);
  kv.set("lambda", c.params.lambda);
  kv.set("u0", c.params.u0);
  kv.set("temperature", c.params.temperature);
  kv.set("tau_s", c.params.tau_s);
  kv.set("tau_a", c.params.tau_a);
  kv.set("tau_u0", c.params.tau_u0);
  kv.set("tau_x", c.params.tau_x);
  kv.set("dt", c.params.dt);
  kv.set("reservoir_cap", c.reservoir.cap);
  kv.set("reservoir_seed", c.reservoir.seed);
  kv.set("reservoir_seen", c.reservoir.seen);
  kv.set("has_latents", c.latents.u.size() > 0);
  write_file(dir / "checkpoint.txt", kv.serialize());
  write_tensor(dir / "dictionary.lscd", to_tensor<double>(c.dict.a()));
  if (c.latents.u.size() > 0) {
    write_tensor(dir / "u.lscd", to_tensor<double>(c.latents.u));
    write_tensor(dir / "s.lscd", to_tensor<double>(c.latents.s));
  }
  write_tensor(dir / "reservoir.lscd", reservoir_tensor(c.reservoir));
  write_file(dir / "trace.csv", trace_csv(c.traces));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const KeyValues kv = KeyValues::load(dir / "checkpoint.txt");
  Checkpoint c;
  c.step = kv.get_uint("step");
  c.batch_index = kv.get_uint("batch_index");
  c.params.sigma = kv.get_double("sigma");
  c.params.lambda = kv.get_double("lambda");
  c.params.u0 = kv.get_double("u0");
  c.params.temperature = kv.get_double("temperature");
  c.params.tau_s = kv.get_double("tau_s");
  c.params.tau_a = kv.get_double("tau_a");
  c.params.tau_u0 = kv.get_double("tau_u0");
  c.params.tau_x = kv.get_double("tau_x");
  c.params.dt = kv.get_double("dt");
  c.dict = Dictionary(to_matrix(read_tensor<double>(dir / "dictionary.lscd")));
  if (kv.get_bool("has_latents")) {
    c.latents.u = to_matrix(read_tensor<double>(dir / "u.lscd"));
    c.latents.s = to_matrix(read_tensor<double>(dir / "s.lscd"));
  }
  const Tensor64 r = read_tensor<double>(dir / "reservoir.lscd");
  if (r.dims.size() != 2 || r.dims[1] != 2) throw FormatError("reservoir tensor must be n x 2");
  c.reservoir.cap = kv.get_uint("reservoir_cap");
  c.reservoir.seed = kv.get_uint("reservoir_seed");
  c.reservoir.seen = kv.get_uint("reservoir_seen");
  for (std::size_t i = 0; i < r.dims[0]; ++i) {
    c.reservoir.times.push_back(r.data[2 * i]);
    c.reservoir.values.push_back(r.data[2 * i + 1]);
  }
  c.traces = parse_trace_csv(read_file(dir / "trace.csv"));
  return c;
}

// ---------------------------------------------------------------------------
// Manifest: config keys followed by run.* and metric.* entries.

struct Manifest {
  TrainConfig config;
  KeyValues run;     // keys without the "run." prefix
  KeyValues metric;  // keys without the "metric." prefix

  std::string serialize() const {
    std::string out = config_to_keyvalues(config).serialize();
    for (const auto& k : run.keys()) out += "run." + k + " = " + run.get(k) + "\n";
    for (const auto& k : metric.keys()) out += "metric." + k + " = " + metric.get(k) + "\n";
    return out;
  }

  static Manifest parse(std::string_view text) {
    const KeyValues all = KeyValues::parse(text, "manifest");
    KeyValues cfg;
    Manifest m;
    for (const auto& k : all.keys()) {
      if (k.rfind("run.", 0) == 0) {
        m.run.set(k.substr(4), all.get(k));
      } else if (k.rfind("metric.", 0) == 0) {
        m.metric.set(k.substr(7), all.get(k));
      } else {
        cfg.set(k, all.get(k));
      }
    }
    m.config = config_from_keyvalues(cfg);
    return m;
  }

  static Manifest load(const std::filesystem::path& path) { return parse(read_file(path)); }
};

}  // namespace lsc
