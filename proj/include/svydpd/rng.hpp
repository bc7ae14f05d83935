#ifndef SVYDPD_RNG_HPP
#define SVYDPD_RNG_HPP

#include <cmath>
#include <cstdint>
#include <random>

#include "svydpd/errors.hpp"
#include "svydpd/types.hpp"

namespace svydpd {

/// splitmix64 step: advances the state and returns a well-mixed 64-bit word.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/**
 * Derives an independent sub-stream seed from (seed, a, b), e.g. a = Monte
 * Carlo replication index and b = cluster index.  Each argument is absorbed
 * into a splitmix64 chain, so neighboring indices land on unrelated seeds
 * and the mapping never changes across runs.
 */
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  std::uint64_t s = seed;
  std::uint64_t h = splitmix64(s);
  s ^= a * 0xD6E8FEB86659FD93ULL;
  h ^= splitmix64(s);
  s ^= b * 0xCA5A826395121157ULL;
  h ^= splitmix64(s);
  return h;
}

/**
 * \brief Random variate stream with explicitly coded transformations.
 *
 * The engine is std::mt19937_64, but every distribution on top of it is
 * implemented here rather than taken from <random>, because the standard
 * leaves distribution algorithms unspecified and seeds must reproduce the
 * exact same draws everywhere the suite runs.
 */
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : eng_(seed) {}

  /// Uniform on [0, 1) with 53 random bits.
  double uniform01() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  /// Standard normal via the polar method; caches the paired deviate.
  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform01() - 1.0;
      v = 2.0 * uniform01() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    cached_ = v * f;
    have_cached_ = true;
    return u * f;
  }

  bool bernoulli(double p) {
    if (p < 0.0 || p > 1.0) throw input_error("bernoulli probability outside [0,1]");
    return uniform01() < p;
  }

  /// Binomial(m, p) as a sum of Bernoulli draws; m stays small here.
  long binomial(long m, double p) {
    if (m < 0) throw input_error("binomial count must be nonnegative");
    if (p < 0.0 || p > 1.0) throw input_error("binomial probability outside [0,1]");
    long total = 0;
    for (long j = 0; j < m; ++j)
      if (uniform01() < p) ++total;
    return total;
  }

  /// Categorical draw by cdf inversion; returns a 0-based category index.
  int categorical(const Vector& pi) {
    const double u = uniform01();
    double cum = 0.0;
    const int last = static_cast<int>(pi.size()) - 1;
    for (int s = 0; s < last; ++s) {
      cum += pi[s];
      if (u < cum) return s;
    }
    return last;
  }

  /// Gamma(shape, 1) via Marsaglia-Tsang squeeze, with the standard
  /// power-of-uniform boost for shape < 1.
  double gamma(double shape) {
    if (!(shape > 0.0)) throw input_error("gamma shape must be positive");
    if (shape < 1.0) {
      double u;
      do {
        u = uniform01();
      } while (u == 0.0);
      return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform01();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  /// Dirichlet(alpha) via normalized gamma draws.
  Vector dirichlet(const Vector& alpha) {
    Vector g(alpha.size());
    double total = 0.0;
    for (int s = 0; s < alpha.size(); ++s) {
      g[s] = gamma(alpha[s]);
      total += g[s];
    }
    if (total <= 0.0) {
      // All components underflowed to zero; fall back to the mean direction.
      for (int s = 0; s < alpha.size(); ++s) g[s] = alpha[s];
      total = alpha.sum();
    }
    return g / total;
  }

  /// Multinomial(m, pi) counts via m categorical draws.
  Vector multinomial_counts(long m, const Vector& pi) {
    Vector counts = Vector::Zero(pi.size());
    for (long j = 0; j < m; ++j) counts[categorical(pi)] += 1.0;
    return counts;
  }

 private:
  std::mt19937_64 eng_;
  bool have_cached_ = false;
  double cached_ = 0.0;
};

} // namespace svydpd

#endif // SVYDPD_RNG_HPP
