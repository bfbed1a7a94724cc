#pragma once

// Counter-based Gaussian noise. A draw is a pure function of
// (seed, stream, step, column), so runs can be resumed at any step and batch
// columns can be advanced in any order without changing results.

#include <cstdint>
#include <limits>
#include <random>

#include "lsc/types.hpp"

namespace lsc {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Order-sensitive hash of a key tuple.
inline std::uint64_t hash_key(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x6a09e667f3bcc908ULL;
  for (std::uint64_t v : parts) {
    std::uint64_t st = h ^ v;
    h = splitmix64(st);
  }
  return h;
}

// xoshiro256** (Blackman & Vigna), seeded through splitmix64. Cheap to seed,
// which matters because a fresh engine is built per (step, column).
class Xoshiro256 {
 public:
  using result_type = std::uint64_t;
  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  explicit Xoshiro256(std::uint64_t seed) {
    for (auto& w : s_) w = splitmix64(seed);
  }

  result_type operator()() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  std::uint64_t s_[4];
};

// Well-known stream ids. Distinct ids give independent draws.
namespace streams {
inline constexpr std::uint64_t kLatentNoise = 1;
inline constexpr std::uint64_t kLatentInit = 2;
inline constexpr std::uint64_t kDictionaryInit = 3;
inline constexpr std::uint64_t kData = 4;
inline constexpr std::uint64_t kReservoir = 5;
inline constexpr std::uint64_t kHeldOut = 6;
}  // namespace streams

class NoiseSource {
 public:
  NoiseSource(std::uint64_t seed, std::uint64_t stream) : seed_(seed), stream_(stream) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

  Xoshiro256 engine(std::uint64_t step, std::uint64_t column) const {
    return Xoshiro256(hash_key({seed_, stream_, step, column}));
  }

  // Fills m with i.i.d. standard normals; column j draws from its own engine.
  void fill_normal(std::uint64_t step, Matrix& m) const {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      auto eng = engine(step, static_cast<std::uint64_t>(j));
      std::normal_distribution<double> normal;
      for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = normal(eng);
    }
  }

  Matrix normal(std::uint64_t step, Eigen::Index rows, Eigen::Index cols) const {
    Matrix m(rows, cols);
    fill_normal(step, m);
    return m;
  }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
};

}  // namespace lsc
