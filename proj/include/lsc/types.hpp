#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace lsc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Error categories. The CLI maps these onto its exit codes.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DimensionError : Error {
  using Error::Error;
};
struct NumericError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct UsageError : Error {
  using Error::Error;
};
struct FormatError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};

// Scalar model and integration parameters. All time constants share one
// (arbitrary) time unit; only ratios matter to the dynamics.
struct ModelParams {
  double sigma = 0.5;
  double lambda = 1.0;
  double u0 = 0.0;
  double temperature = 1.0;
  double tau_s = 1.0;
  double tau_a = 100.0;
  double tau_u0 = 100.0;
  double tau_x = 10.0;
  double dt = 0.01;

  // Throws ConfigError on a hard violation. Returns human-readable warnings
  // for soft ones (tau_a < tau_s).
  std::vector<std::string> validate() const {
    auto bad = [](const std::string& what) { throw ConfigError("invalid model parameter: " + what); };
    const double all[] = {sigma, lambda, u0, temperature, tau_s, tau_a, tau_u0, tau_x, dt};
    for (double v : all) {
      if (!std::isfinite(v)) bad("non-finite value");
    }
    if (!(sigma > 0)) bad("sigma must be > 0");
    // lambda == 0 is admitted so that pure quadratic energies can be built.
    if (!(lambda >= 0)) bad("lambda must be >= 0");
    if (!(u0 >= 0)) bad("u0 must be >= 0");
    if (!(temperature >= 0)) bad("temperature must be >= 0");
    if (!(tau_s > 0) || !(tau_a > 0) || !(tau_u0 > 0) || !(tau_x > 0)) bad("time constants must be > 0");
    if (!(dt > 0)) bad("dt must be > 0");
    if (!(dt < tau_s)) bad("dt must be < tau_s");
    std::vector<std::string> warnings;
    if (tau_a < tau_s) warnings.emplace_back("tau_a < tau_s: two-timescale separation violated");
    return warnings;
  }
};

// D x K dictionary; columns are elements.
class Dictionary {
 public:
  Dictionary() = default;
  explicit Dictionary(Matrix a) : a_(std::move(a)) {
    if (a_.rows() < 1 || a_.cols() < 1) throw DimensionError("dictionary needs D >= 1 and K >= 1");
  }

  const Matrix& a() const { return a_; }
  Matrix& a() { return a_; }
  Eigen::Index d() const { return a_.rows(); }
  Eigen::Index k() const { return a_.cols(); }

  Vector column_norms() const { return a_.colwise().norm().transpose(); }

  // Scales every column to unit Euclidean norm. Zero columns are left alone.
  void normalize() {
    for (Eigen::Index j = 0; j < a_.cols(); ++j) {
      const double n = a_.col(j).norm();
      if (n > 0) a_.col(j) /= n;
    }
  }

 private:
  Matrix a_;
};

// Auxiliary variables U and coefficients S, both K x N. L1 solvers keep
// u == s (LSC_L1) or ignore u (DSC); L0 solvers keep s = f(|u|).
struct LatentState {
  Matrix u;
  Matrix s;
};

struct Batch {
  Matrix x;                            // D x N
  std::optional<Matrix> ground_truth;  // K x N
  std::optional<ModelParams> generator_params;
  std::string dictionary_id;

  Eigen::Index d() const { return x.rows(); }
  Eigen::Index n() const { return x.cols(); }
};

struct EnergyBreakdown {
  double recon = 0;
  double sparsity = 0;
  double total = 0;
};

enum class SolverKind { DSC, LCA, SSC, LSC_L1, LSC_L0 };

inline bool is_sampler(SolverKind k) { return k == SolverKind::LSC_L1 || k == SolverKind::LSC_L0; }
inline bool is_l0(SolverKind k) { return k == SolverKind::LSC_L0; }

inline std::string to_string(SolverKind k) {
  switch (k) {
    case SolverKind::DSC: return "dsc";
    case SolverKind::LCA: return "lca";
    case SolverKind::SSC: return "ssc";
    case SolverKind::LSC_L1: return "lsc";
    case SolverKind::LSC_L0: return "l0lsc";
  }
  return "?";
}

inline SolverKind parse_solver(const std::string& s) {
  if (s == "dsc") return SolverKind::DSC;
  if (s == "lca") return SolverKind::LCA;
  if (s == "ssc") return SolverKind::SSC;
  if (s == "lsc") return SolverKind::LSC_L1;
  if (s == "l0lsc") return SolverKind::LSC_L0;
  throw ConfigError("unknown solver '" + s + "' (expected dsc, lca, ssc, lsc, l0lsc)");
}

namespace detail {

inline void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) throw NumericError(std::string("non-finite entries in ") + what);
}

inline void require_shapes(const Matrix& a, const Matrix& s, const Matrix& x) {
  if (a.cols() != s.rows() || a.rows() != x.rows() || s.cols() != x.cols()) {
    throw DimensionError("shape mismatch: A is " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                         ", S is " + std::to_string(s.rows()) + "x" + std::to_string(s.cols()) + ", X is " +
                         std::to_string(x.rows()) + "x" + std::to_string(x.cols()));
  }
}

}  // namespace detail
}  // namespace lsc
