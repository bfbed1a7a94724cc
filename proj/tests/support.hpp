#pragma once

#include <cmath>
#include <functional>
#include <random>

#include "lsc/types.hpp"

namespace lsc::test {

inline Matrix randn(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// Pushes every entry at least `gap` away from each of the given kinks.
inline void avoid_kinks(Matrix& m, std::initializer_list<double> kinks, double gap) {
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    double& v = m.data()[i];
    for (double k : kinks) {
      if (std::abs(std::abs(v) - k) < gap) v += (v >= 0 ? 1 : -1) * 3 * gap;
    }
  }
}

// Central finite-difference gradient of f with respect to every entry of m.
inline Matrix fd_gradient(const std::function<double(const Matrix&)>& f, Matrix m, double h = 1e-5) {
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

inline double rel_error(const Matrix& a, const Matrix& b) {
  return (a - b).norm() / std::max({a.norm(), b.norm(), 1e-12});
}

inline double rel_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12});
}

// Exponential(rate) CDF.
inline auto exp_cdf(double rate) {
  return [rate](double x) { return x <= 0 ? 0.0 : 1.0 - std::exp(-rate * x); };
}

}  // namespace lsc::test
