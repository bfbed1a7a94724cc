#pragma once

// Evaluation quantities: coefficient histograms and their KL divergence to the
// spike-and-slab prior, reconstruction quality, dictionary recovery, activity
// and norm tracking, plus the Kolmogorov-Smirnov machinery used by the
// distribution checks.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "lsc/model.hpp"
#include "lsc/types.hpp"

namespace lsc {

// Coefficients at or below this magnitude count as exact zeros for MAP solvers.
inline constexpr double kZeroTolerance = 1e-8;

// Histogram on [0, inf) with bin width `width`, a separate atom for exact
// zeros and an underflow count for negative values (outside the support of
// the non-negative prior). The last bin collects the tail.
struct Histogram {
  double width = 0.1;
  std::uint64_t zero_atom = 0;
  std::uint64_t underflow = 0;
  std::vector<std::uint64_t> counts;

  std::uint64_t total() const {
    return zero_atom + underflow + std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
  }
};

// Number of slab bins so that the slab is covered up to its 99.9th percentile.
inline std::size_t slab_bin_count(double lambda, double width) {
  const double support = std::log(1000.0) / lambda;
  return static_cast<std::size_t>(std::ceil(support / width));
}

inline Histogram coefficient_histogram(std::span<const double> samples, double width, std::size_t bins,
                                       double zero_tol = 0.0) {
  if (!(width > 0)) throw UsageError("histogram bin width must be > 0");
  if (bins == 0) throw UsageError("histogram needs at least one bin");
  Histogram h;
  h.width = width;
  h.counts.assign(bins, 0);
  for (double s : samples) {
    if (std::abs(s) <= zero_tol) {
      ++h.zero_atom;
    } else if (s < 0) {
      ++h.underflow;
    } else {
      const auto idx = static_cast<std::size_t>(s / width);
      ++h.counts[std::min(idx, bins - 1)];
    }
  }
  return h;
}

// Bin probabilities of the spike-and-slab prior, laid out as
// [zero atom, bin 0, ..., bin B-1 (with tail)].
inline std::vector<double> prior_bin_probabilities(double pi, double lambda, double width, std::size_t bins) {
  std::vector<double> p(bins + 1);
  p[0] = 1.0 - pi;
  for (std::size_t n = 0; n < bins; ++n) {
    const double lo = std::exp(-lambda * width * static_cast<double>(n));
    const double hi = n + 1 == bins ? 0.0 : std::exp(-lambda * width * static_cast<double>(n + 1));
    p[n + 1] = pi * (lo - hi);
  }
  return p;
}

// Sum_n p_n log(p_n / q_n) in nats. Terms with p_n == 0 contribute nothing.
inline double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw DimensionError("KL inputs differ in length");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0) continue;
    if (q[i] <= 0) return std::numeric_limits<double>::infinity();
    kl += p[i] * std::log(p[i] / q[i]);
  }
  return kl;
}

// Empirical frequencies laid out like prior_bin_probabilities, smoothed by
// adding alpha = 1/total to every supported cell and renormalizing over the
// full mass (underflow included, so negative samples count against q).
inline std::vector<double> smoothed_frequencies(const Histogram& h) {
  const double total = static_cast<double>(h.total());
  const double alpha = 1.0 / total;
  std::vector<double> q(h.counts.size() + 1);
  q[0] = static_cast<double>(h.zero_atom) / total + alpha;
  for (std::size_t n = 0; n < h.counts.size(); ++n) q[n + 1] = static_cast<double>(h.counts[n]) / total + alpha;
  const double norm = 1.0 + alpha * static_cast<double>(q.size());
  for (double& v : q) v /= norm;
  return q;
}

// D_KL(prior || empirical) over the slab bins plus the zero atom.
inline double kl_to_prior(const Histogram& h, double pi, double lambda) {
  if (h.total() == 0) throw UsageError("empty sample reservoir");
  const auto p = prior_bin_probabilities(pi, lambda, h.width, h.counts.size());
  const auto q = smoothed_frequencies(h);
  return kl_divergence(p, q);
}

// Convenience overload: bins the samples with width delta (default 0.1 / lambda).
inline double kl_to_prior(std::span<const double> samples, const ModelParams& p, double delta = 0.0,
                          double zero_tol = 0.0) {
  if (samples.empty()) throw UsageError("empty sample reservoir");
  if (!(p.lambda > 0)) throw ConfigError("KL to prior needs lambda > 0");
  if (delta <= 0) delta = 0.1 / p.lambda;
  const auto h = coefficient_histogram(samples, delta, slab_bin_count(p.lambda, delta), zero_tol);
  return kl_to_prior(h, pi_from_u0(p.u0, p.lambda), p.lambda);
}

// -log(mean_n ||A s_n - x_n||^2 / D), with the mean clamped at 1e-300.
inline double nl_mse(const Matrix& a, const Matrix& s, const Matrix& x) {
  detail::require_shapes(a, s, x);
  if (x.cols() == 0) throw UsageError("empty batch");
  const double mse = (a * s - x).squaredNorm() / static_cast<double>(x.cols()) / static_cast<double>(x.rows());
  return -std::log(std::max(mse, 1e-300));
}

struct RecoveryResult {
  double mean_best_cosine = 0;
  std::vector<Eigen::Index> assignment;  // truth column -> learned column
  std::vector<double> cosines;           // matched |cosine| per truth column
};

// |cosine| between columns of two dictionaries; zero columns give 0.
inline Matrix abs_cosines(const Matrix& truth, const Matrix& learned) {
  if (truth.rows() != learned.rows()) throw DimensionError("dictionaries differ in data dimension");
  auto unit = [](const Matrix& m) {
    Matrix u = m;
    for (Eigen::Index j = 0; j < u.cols(); ++j) {
      const double n = u.col(j).norm();
      u.col(j) = n > 0 ? Vector(u.col(j) / n) : Vector::Zero(u.rows());
    }
    return u;
  };
  return (unit(truth).transpose() * unit(learned)).cwiseAbs();
}

// Greedy maximum-|cosine| matching without replacement.
inline RecoveryResult dictionary_recovery(const Matrix& learned, const Matrix& truth) {
  if (truth.cols() > learned.cols()) throw DimensionError("truth has more columns than the learned dictionary");
  Matrix c = abs_cosines(truth, learned);
  RecoveryResult r;
  r.assignment.assign(static_cast<std::size_t>(truth.cols()), -1);
  r.cosines.assign(static_cast<std::size_t>(truth.cols()), 0.0);
  for (Eigen::Index round = 0; round < truth.cols(); ++round) {
    Eigen::Index ti = 0, li = 0;
    c.maxCoeff(&ti, &li);
    r.assignment[static_cast<std::size_t>(ti)] = li;
    r.cosines[static_cast<std::size_t>(ti)] = std::max(c(ti, li), 0.0);
    c.row(ti).setConstant(-1.0);
    c.col(li).setConstant(-1.0);
  }
  r.mean_best_cosine = std::accumulate(r.cosines.begin(), r.cosines.end(), 0.0) /
                       static_cast<double>(std::max<Eigen::Index>(truth.cols(), 1));
  return r;
}

// Fraction of strictly active coefficients (|s| > tol).
inline double activity_estimate(std::span<const double> samples, double tol = 0.0) {
  if (samples.empty()) return 0.0;
  const auto active = std::count_if(samples.begin(), samples.end(), [tol](double v) { return std::abs(v) > tol; });
  return static_cast<double>(active) / static_cast<double>(samples.size());
}

inline double activity_estimate(const Matrix& s, double tol = 0.0) {
  return activity_estimate(std::span<const double>(s.data(), static_cast<std::size_t>(s.size())), tol);
}

inline Vector column_norms(const Matrix& a) { return a.colwise().norm().transpose(); }

// Linear-interpolated quantile of a copy of the data, q in [0, 1].
inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

// Least-squares slope of y against x.
inline double linear_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw UsageError("slope needs two or more paired points");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  return sxy / sxx;
}

// Asymptotic Kolmogorov survival function Q(lambda) = P(K > lambda).
inline double kolmogorov_survival(double lambda) {
  if (lambda < 0.2) return 1.0;
  double sum = 0.0;
  for (int j = 1; j <= 100; ++j) {
    const double term = 2.0 * ((j % 2) ? 1.0 : -1.0) * std::exp(-2.0 * j * j * lambda * lambda);
    sum += term;
    if (std::abs(term) < 1e-16) break;
  }
  return std::clamp(sum, 0.0, 1.0);
}

struct KsResult {
  double statistic = 0;
  double p_value = 1;
};

// One-sample KS test against a continuous CDF.
template <class Cdf>
KsResult ks_one_sample(std::vector<double> samples, Cdf cdf) {
  if (samples.empty()) throw UsageError("KS test needs samples");
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double d = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double f = cdf(samples[i]);
    d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  const double sn = std::sqrt(n);
  return {d, kolmogorov_survival((sn + 0.12 + 0.11 / sn) * d)};
}

// Two-sample KS test.
inline KsResult ks_two_sample(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw UsageError("KS test needs samples");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double v = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= v) ++i;
    while (j < b.size() && b[j] <= v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  const double ne = std::sqrt(na * nb / (na + nb));
  return {d, kolmogorov_survival((ne + 0.12 + 0.11 / ne) * d)};
}

}  // namespace lsc
