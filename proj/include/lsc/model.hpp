#pragma once

// Energies, threshold nonlinearities and analytic gradients of the sparse
// coding model x = A s + n, n ~ N(0, sigma^2 I).
//
// Conventions used throughout:
//   sign(0) = 0, heaviside(0) = 1 (a unit sitting exactly on the threshold
//   counts as active).
//   Gradients returned here are gradients of the energy (ascent direction);
//   integrators apply the negation.

#include <cmath>
#include <string>

#include "lsc/types.hpp"

namespace lsc {

inline double sign(double v) { return (v > 0) - (v < 0); }
inline double heaviside(double v) { return v >= 0 ? 1.0 : 0.0; }

// Biased ReLU on magnitudes: 0 below u0, |u| - u0 above.
inline double threshold_f(double u, double u0) {
  const double m = std::abs(u);
  return m < u0 ? 0.0 : m - u0;
}

inline Matrix threshold_f(const Matrix& u, double u0) {
  return u.unaryExpr([u0](double v) { return threshold_f(v, u0); });
}

// Signed soft threshold used by LCA.
inline double threshold_g_lca(double u, double lambda) {
  const double m = std::abs(u);
  return m < lambda ? 0.0 : sign(u) * (m - lambda);
}

inline Matrix threshold_g_lca(const Matrix& u, double lambda) {
  return u.unaryExpr([lambda](double v) { return threshold_g_lca(v, lambda); });
}

namespace detail {

inline EnergyBreakdown make_energy(double recon, double sparsity) {
  EnergyBreakdown e;
  e.recon = recon;
  e.sparsity = sparsity;
  e.total = e.recon + e.sparsity;
  return e;
}

inline void check_inputs(const Matrix& a, const Matrix& s, const Matrix& x) {
  require_shapes(a, s, x);
  require_finite(a, "dictionary");
  require_finite(s, "latents");
  require_finite(x, "data");
}

}  // namespace detail

// Batch energy with an L1 cost: ||X - A S||_F^2 / (2 sigma^2) + lambda ||S||_1.
inline EnergyBreakdown energy_l1(const Matrix& a, const Matrix& s, const Matrix& x, const ModelParams& p) {
  detail::check_inputs(a, s, x);
  const double recon = (x - a * s).squaredNorm() / (2 * p.sigma * p.sigma);
  return detail::make_energy(recon, p.lambda * s.cwiseAbs().sum());
}

// Batch energy in the auxiliary variables of the L0 prior.
inline EnergyBreakdown energy_l0(const Matrix& a, const Matrix& u, const Matrix& x, const ModelParams& p) {
  detail::check_inputs(a, u, x);
  const double recon = (x - a * threshold_f(u, p.u0)).squaredNorm() / (2 * p.sigma * p.sigma);
  return detail::make_energy(recon, p.lambda * u.cwiseAbs().sum());
}

namespace detail {

// Shared kernels. The integrators call these directly so that a fused step
// produces the same bits as the public gradient functions below.

inline Matrix residual(const Matrix& a, const Matrix& s, const Matrix& x) { return a * s - x; }

// A^T R / sigma^2.
inline Matrix backproject(const Matrix& a, const Matrix& r, double sigma) {
  return a.transpose() * r / (sigma * sigma);
}

inline Matrix grad_s_from_back(const Matrix& s, const Matrix& back, double lambda) {
  return back + lambda * s.unaryExpr([](double v) { return sign(v); });
}

inline Matrix grad_u_from_back(const Matrix& u, const Matrix& back, double u0, double lambda) {
  return u.binaryExpr(back, [u0, lambda](double ui, double bi) {
    const double sg = sign(ui);
    return sg * heaviside(std::abs(ui) - u0) * bi + lambda * sg;
  });
}

inline double u0_from_back(const Matrix& s, const Matrix& back) {
  if (s.cols() == 0) return 0.0;
  return (s.array() > 0).select(back.array(), 0.0).sum() / static_cast<double>(s.cols());
}

inline Matrix grad_a_from_residual(const Matrix& r, const Matrix& s, double sigma) {
  return r * s.transpose() / (sigma * sigma);
}

}  // namespace detail

// dE/dS = -A^T (X - A S) / sigma^2 + lambda sign(S).
inline Matrix grad_s_l1(const Matrix& a, const Matrix& s, const Matrix& x, const ModelParams& p) {
  detail::require_shapes(a, s, x);
  return detail::grad_s_from_back(s, detail::backproject(a, detail::residual(a, s, x), p.sigma), p.lambda);
}

// Exact dE/dU of energy_l0:
//   sign(u) * heaviside(|u| - u0) * [A^T (A f(|u|) - X)]/sigma^2 + lambda sign(u).
inline Matrix grad_u_l0(const Matrix& a, const Matrix& u, const Matrix& x, const ModelParams& p) {
  detail::require_shapes(a, u, x);
  const Matrix back = detail::backproject(a, detail::residual(a, threshold_f(u, p.u0), x), p.sigma);
  return detail::grad_u_from_back(u, back, p.u0, p.lambda);
}

// dE/dA = (A S - X) S^T / sigma^2, summed over the batch.
inline Matrix grad_a(const Matrix& a, const Matrix& s, const Matrix& x, const ModelParams& p) {
  detail::require_shapes(a, s, x);
  return detail::grad_a_from_residual(detail::residual(a, s, x), s, p.sigma);
}

// -dE/du0 at fixed U, averaged over the batch. s must equal f(|u|; u0).
// Positive values mean the energy decreases when u0 grows.
inline double grad_u0(const Matrix& a, const Matrix& s, const Matrix& x, const ModelParams& p) {
  detail::require_shapes(a, s, x);
  return detail::u0_from_back(s, detail::backproject(a, detail::residual(a, s, x), p.sigma));
}

// Direction of increasing likelihood for sigma: mean ||x - A s||^2 / D - sigma^2.
inline double grad_sigma(const Matrix& a, const Matrix& s, const Matrix& x, const ModelParams& p) {
  detail::require_shapes(a, s, x);
  if (x.cols() == 0) return 0.0;
  const double mean_sq = (x - a * s).squaredNorm() / static_cast<double>(x.cols());
  return mean_sq / static_cast<double>(x.rows()) - p.sigma * p.sigma;
}

// Prior families whose mean cost <C> = <|s|> has a closed form.
enum class PriorKind {
  Laplacian,    // p(s) ~ exp(-lambda |s|), signed s
  Exponential,  // auxiliary u of the L0 prior, |u| ~ Exp(lambda)
  SpikeSlab,    // (1 - pi) delta(s) + pi Exp(lambda)
};

inline PriorKind parse_prior(const std::string& name) {
  if (name == "laplacian") return PriorKind::Laplacian;
  if (name == "exponential") return PriorKind::Exponential;
  if (name == "spike_slab") return PriorKind::SpikeSlab;
  throw ConfigError("no closed-form prior expectation for prior '" + name + "'");
}

inline double prior_mean_cost(PriorKind kind, const ModelParams& p) {
  if (!(p.lambda > 0)) throw ConfigError("prior expectation needs lambda > 0");
  switch (kind) {
    case PriorKind::Laplacian:
    case PriorKind::Exponential: return 1.0 / p.lambda;
    case PriorKind::SpikeSlab: return std::exp(-p.lambda * p.u0) / p.lambda;
  }
  throw ConfigError("unsupported prior");
}

// (1/K) mean_n sum_i |s_in| - <|s|>_prior. The likelihood increases along the
// negation of this value.
inline double grad_lambda_l1(const Matrix& s, const ModelParams& p, PriorKind kind = PriorKind::Laplacian) {
  const double expected = prior_mean_cost(kind, p);
  if (s.size() == 0) return 0.0;
  return s.cwiseAbs().sum() / static_cast<double>(s.size()) - expected;
}

struct L0PriorComponents {
  double pi = 1.0;    // activation probability
  double rate = 1.0;  // slab exponential rate
};

inline L0PriorComponents prior_l0_pdf_components(const ModelParams& p) {
  return {std::exp(-p.lambda * p.u0), p.lambda};
}

inline double pi_from_u0(double u0, double lambda) { return std::exp(-lambda * u0); }

inline double u0_from_pi(double pi, double lambda) {
  if (!(pi > 0 && pi <= 1)) throw ConfigError("activation probability must lie in (0, 1]");
  if (!(lambda > 0)) throw ConfigError("lambda must be > 0 to map pi onto u0");
  return -std::log(pi) / lambda;
}

}  // namespace lsc
