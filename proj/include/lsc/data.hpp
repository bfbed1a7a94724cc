#pragma once

// Synthetic bars data, spike-and-slab coefficient sampling, data streams and
// ZCA whitening.

#include <cmath>
#include <memory>
#include <random>
#include <string>

#include <Eigen/Eigenvalues>

#include "lsc/model.hpp"
#include "lsc/noise.hpp"
#include "lsc/types.hpp"

namespace lsc {

struct BarsSpec {
  int p = 8;
  double pi = 0.3;
  double lambda = 1.0;
  double sigma = 0.5;
  std::uint64_t seed = 1;

  void validate() const {
    if (p < 2) throw ConfigError("bars grid side p must be >= 2");
    if (!(pi > 0 && pi <= 1)) throw ConfigError("bars pi must lie in (0, 1]");
    if (!(lambda > 0) || !std::isfinite(lambda)) throw ConfigError("bars lambda must be > 0");
    if (!(sigma >= 0) || !std::isfinite(sigma)) throw ConfigError("bars sigma must be >= 0");
  }

  int d() const { return p * p; }
  int k() const { return 2 * p; }
};

// 2p unit-norm bars on a p x p grid (pixel index r * p + c). Columns 0..p-1
// are vertical bars (column c), p..2p-1 horizontal bars (row r).
inline Dictionary bars_dictionary(int p) {
  if (p < 2) throw ConfigError("bars grid side p must be >= 2");
  const double v = 1.0 / std::sqrt(static_cast<double>(p));
  Matrix a = Matrix::Zero(p * p, 2 * p);
  for (int line = 0; line < p; ++line) {
    for (int t = 0; t < p; ++t) {
      a(t * p + line, line) = v;
      a(line * p + t, p + line) = v;
    }
  }
  Dictionary dict(std::move(a));
  dict.normalize();
  return dict;
}

// Each entry is 0 with probability 1 - pi, otherwise Exponential(lambda).
inline Matrix sample_spike_slab(Eigen::Index k, Eigen::Index n, double pi, double lambda, std::uint64_t seed) {
  if (!(pi >= 0 && pi <= 1)) throw ConfigError("pi must lie in [0, 1]");
  if (!(lambda > 0)) throw ConfigError("lambda must be > 0");
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution active(pi);
  std::exponential_distribution<double> slab(lambda);
  Matrix s(k, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < k; ++i) s(i, j) = active(rng) ? slab(rng) : 0.0;
  }
  return s;
}

// X = A_bars S + sigma Z with S drawn from the spike-and-slab prior.
inline Batch generate_bars(const BarsSpec& spec, Eigen::Index n) {
  spec.validate();
  if (n < 0) throw UsageError("batch size must be >= 0");
  const Dictionary dict = bars_dictionary(spec.p);
  Batch b;
  Matrix s = sample_spike_slab(dict.k(), n, spec.pi, spec.lambda, hash_key({spec.seed, 0}));
  std::mt19937_64 rng(hash_key({spec.seed, 1}));
  std::normal_distribution<double> normal;
  Matrix z(dict.d(), n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < dict.d(); ++i) z(i, j) = normal(rng);
  }
  b.x = dict.a() * s + spec.sigma * z;
  b.ground_truth = std::move(s);
  ModelParams gen;
  gen.sigma = spec.sigma > 0 ? spec.sigma : 1.0;
  gen.lambda = spec.lambda;
  gen.u0 = u0_from_pi(spec.pi, spec.lambda);
  b.generator_params = gen;
  b.dictionary_id = "bars:p=" + std::to_string(spec.p);
  return b;
}

// Random-access batch stream: batch(i) is a pure function of i, which keeps
// training resumable from any presentation.
class DataSource {
 public:
  virtual ~DataSource() = default;
  virtual Eigen::Index dim() const = 0;
  virtual Batch batch(std::uint64_t index, Eigen::Index n) const = 0;
  virtual std::optional<Dictionary> truth() const { return std::nullopt; }
  virtual std::string describe() const = 0;
};

class BarsSource : public DataSource {
 public:
  explicit BarsSource(BarsSpec spec) : spec_(spec) { spec_.validate(); }

  Eigen::Index dim() const override { return spec_.d(); }
  Batch batch(std::uint64_t index, Eigen::Index n) const override {
    BarsSpec s = spec_;
    s.seed = hash_key({spec_.seed, streams::kData, index});
    return generate_bars(s, n);
  }
  std::optional<Dictionary> truth() const override { return bars_dictionary(spec_.p); }
  std::string describe() const override {
    return "bars:p=" + std::to_string(spec_.p) + ",pi=" + fmt(spec_.pi) + ",lambda=" + fmt(spec_.lambda) +
           ",sigma=" + fmt(spec_.sigma) + ",seed=" + std::to_string(spec_.seed);
  }
  const BarsSpec& spec() const { return spec_; }

 private:
  static std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
  }
  BarsSpec spec_;
};

// Draws batches (with replacement) from a fixed pool of D x M samples.
class MatrixSource : public DataSource {
 public:
  MatrixSource(Matrix pool, std::uint64_t seed, std::string name = "matrix")
      : pool_(std::move(pool)), seed_(seed), name_(std::move(name)) {
    if (pool_.cols() < 1) throw UsageError("data pool is empty");
  }

  Eigen::Index dim() const override { return pool_.rows(); }
  Batch batch(std::uint64_t index, Eigen::Index n) const override {
    Xoshiro256 eng(hash_key({seed_, streams::kData, index}));
    std::uniform_int_distribution<Eigen::Index> pick(0, pool_.cols() - 1);
    Batch b;
    b.x.resize(pool_.rows(), n);
    for (Eigen::Index j = 0; j < n; ++j) b.x.col(j) = pool_.col(pick(eng));
    return b;
  }
  std::string describe() const override { return name_; }

 private:
  Matrix pool_;
  std::uint64_t seed_;
  std::string name_;
};

// Always returns the same batch (used for fixed-data inference).
class FixedSource : public DataSource {
 public:
  explicit FixedSource(Batch b) : b_(std::move(b)) {}
  Eigen::Index dim() const override { return b_.d(); }
  Batch batch(std::uint64_t, Eigen::Index) const override { return b_; }
  std::string describe() const override { return "fixed"; }

 private:
  Batch b_;
};

struct WhiteningTransform {
  Vector mean;  // D
  Matrix w;     // D x D, symmetric
  double eps = 0;
};

// Sample covariance (1/N normalization) of the columns of x.
inline Matrix covariance(const Matrix& x) {
  const Vector mean = x.rowwise().mean();
  const Matrix c = x.colwise() - mean;
  return c * c.transpose() / static_cast<double>(x.cols());
}

// Default regularizer: 1% of the mean covariance eigenvalue.
inline double default_zca_eps(const Matrix& x) {
  const Matrix c = covariance(x);
  return 1e-2 * c.trace() / static_cast<double>(c.rows());
}

struct Whitened {
  Matrix x;
  WhiteningTransform transform;
};

// ZCA whitening of the D x N sample matrix x:
//   W = V diag((e + eps)^-1/2) V^T applied to mean-subtracted data.
inline Whitened whiten_zca(const Matrix& x, double eps) {
  if (x.cols() < x.rows()) throw UsageError("insufficient patches for covariance estimate");
  if (!(eps >= 0) || !std::isfinite(eps)) throw ConfigError("whitening eps must be >= 0");
  detail::require_finite(x, "patches");
  Whitened out;
  out.transform.mean = x.rowwise().mean();
  out.transform.eps = eps;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(covariance(x));
  const Vector scale = (eig.eigenvalues().array().max(0.0) + eps).rsqrt().matrix();
  if (!scale.allFinite()) throw NumericError("singular covariance; use eps > 0");
  out.transform.w = eig.eigenvectors() * scale.asDiagonal() * eig.eigenvectors().transpose();
  out.x = out.transform.w * (x.colwise() - out.transform.mean);
  return out;
}

}  // namespace lsc
