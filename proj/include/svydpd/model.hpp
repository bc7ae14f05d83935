#ifndef SVYDPD_MODEL_HPP
#define SVYDPD_MODEL_HPP

#include <atomic>
#include <cmath>
#include <cstdint>

#include "svydpd/types.hpp"

namespace svydpd {

/**
 * Global counter of probability clipping events.  Clipping is a guard
 * against literal zeros reaching downstream power/log computations; it must
 * never happen silently, so every event is counted and callers (CLI, tests)
 * can inspect or reset the tally.
 */
inline std::atomic<std::uint64_t>& clip_event_count() {
  static std::atomic<std::uint64_t> count{0};
  return count;
}

inline void reset_clip_events() { clip_event_count().store(0); }

namespace detail {

/// Floor for fitted probabilities.  Only guards against exact underflow;
/// well-conditioned problems never touch it.
constexpr double kProbFloor = 1e-300;

inline double clip_probability(double p) {
  if (p < kProbFloor) {
    clip_event_count().fetch_add(1, std::memory_order_relaxed);
    return kProbFloor;
  }
  if (p > 1.0) {
    clip_event_count().fetch_add(1, std::memory_order_relaxed);
    return 1.0;
  }
  return p;
}

} // namespace detail

/**
 * Cell probabilities of the polytomous logistic model at covariate vector x.
 *
 * pi_r = exp(x' beta_r) / (1 + sum_l exp(x' beta_l)) for the d modelled
 * categories and the complement for the reference.  The linear predictors
 * are shifted by their maximum (the reference contributes a zero predictor)
 * before exponentiation, so there is no overflow for |x' beta_r| <= 700.
 */
inline Vector model_probabilities(const Coefficients& beta, const Vector& x) {
  const int d = beta.d();
  if (x.size() != beta.beta.cols())
    throw input_error("covariate vector length " + std::to_string(x.size()) +
                      " does not match coefficient columns " +
                      std::to_string(beta.beta.cols()));
  Vector eta(d + 1);
  for (int r = 0; r < d; ++r) eta[r] = beta.beta.row(r).dot(x);
  eta[d] = 0.0;  // reference category
  const double shift = eta.maxCoeff();
  Vector pi(d + 1);
  double denom = 0.0;
  for (int r = 0; r <= d; ++r) {
    pi[r] = std::exp(eta[r] - shift);
    denom += pi[r];
  }
  for (int r = 0; r <= d; ++r) pi[r] = detail::clip_probability(pi[r] / denom);
  return pi;
}

/// Multinomial covariance kernel Delta(pi) = diag(pi) - pi pi'.
inline Matrix delta_matrix(const Vector& pi) {
  const int c = static_cast<int>(pi.size());
  Matrix delta = -pi * pi.transpose();
  for (int j = 0; j < c; ++j) delta(j, j) += pi[j];
  return delta;
}

/// First d rows of delta_matrix (the reduced, non-redundant block).
inline Matrix delta_star(const Vector& pi) {
  const int c = static_cast<int>(pi.size());
  return delta_matrix(pi).topRows(c - 1);
}

/**
 * The matrix Delta*(pi) diag^(lambda-1){pi} in its safe factorization
 *
 *   [Delta* diag^(lambda-1)]_{rs} = pi_s^lambda (delta_rs - pi_r),
 *
 * which contains no negative powers of pi for any lambda >= 0 and whose
 * lambda = 0 value is exactly the limit expression (delta_rs - pi_r).  All
 * estimating-function and information computations route through this form.
 */
inline Matrix delta_star_dpow(const Vector& pi, double lambda) {
  const int c = static_cast<int>(pi.size());
  const int d = c - 1;
  Matrix key(d, c);
  for (int s = 0; s < c; ++s) {
    const double w = (lambda == 0.0) ? 1.0 : std::pow(pi[s], lambda);
    for (int r = 0; r < d; ++r) key(r, s) = w * ((r == s ? 1.0 : 0.0) - pi[r]);
  }
  return key;
}

/**
 * Derivative of the probability vector with respect to the stacked
 * coefficients: a d(k+1) x (d+1) matrix whose block row r equals
 * x * (row r of Delta*(pi)).
 */
inline Matrix probability_jacobian(const Coefficients& beta, const Vector& x) {
  const int d = beta.d();
  const int kk = static_cast<int>(x.size());
  const Vector pi = model_probabilities(beta, x);
  const Matrix ds = delta_star(pi);
  Matrix jac(d * kk, d + 1);
  for (int r = 0; r < d; ++r)
    for (int j = 0; j < kk; ++j) jac.row(r * kk + j) = x[j] * ds.row(r);
  return jac;
}

} // namespace svydpd

#endif // SVYDPD_MODEL_HPP
