#ifndef SVYDPD_INFERENCE_HPP
#define SVYDPD_INFERENCE_HPP

#include <cmath>
#include <string>

#include "svydpd/covariance.hpp"
#include "svydpd/distributions.hpp"
#include "svydpd/fit.hpp"

namespace svydpd {

/**
 * Linear hypothesis M' beta = l on the stacked coefficient vector.
 * M is p x r with full column rank r (checked numerically), l has length r.
 */
struct LinearHypothesis {
  Matrix m_matrix;
  Vector l_vector;

  int rank() const { return static_cast<int>(m_matrix.cols()); }

  void validate(int param_dim) const {
    if (m_matrix.rows() != param_dim)
      throw input_error("hypothesis matrix has " + std::to_string(m_matrix.rows()) +
                        " rows, expected " + std::to_string(param_dim));
    if (m_matrix.cols() < 1 || m_matrix.cols() > m_matrix.rows())
      throw input_error("hypothesis rank must lie in [1, parameter dimension]");
    if (l_vector.size() != m_matrix.cols())
      throw input_error("hypothesis vector length does not match matrix columns");
    Eigen::ColPivHouseholderQR<Matrix> qr(m_matrix);
    qr.setThreshold(1e-10);
    if (qr.rank() < m_matrix.cols())
      throw input_error("hypothesis matrix is column rank deficient");
  }
};

struct TestResult {
  double statistic = 0.0;
  int dof = 0;
  double critical_value = 0.0;
  double p_value = 1.0;
  bool reject = false;
  double alpha = 0.05;
};

struct PowerResult {
  double approx_power = 0.0;
  double sigma_beta_star = 0.0;  // asymptotic sd of the quadratic form's linearization
  double l_value = 0.0;          // normalized quadratic distance from the null
  long n_used = 0;
};

namespace detail {

inline Matrix inner_inverse(const LinearHypothesis& hyp, const Matrix& q,
                            const char* what) {
  const Matrix inner = hyp.m_matrix.transpose() * q * hyp.m_matrix;
  try {
    return invert_spd(inner, what).inverse;
  } catch (const identifiability_error& e) {
    throw numeric_error(std::string(what) +
                        " is numerically singular (condition number beyond 1e12): " +
                        e.what());
  }
}

} // namespace detail

/**
 * Wald statistic of M' beta = l with the sandwich covariance:
 * W = (M' bhat - l)' (M' Q M)^{-1} (M' bhat - l), asymptotically chi-square
 * with r degrees of freedom under the null.
 */
inline TestResult wald_statistic(const FitResult& fit, const CovarianceBundle& bundle,
                                 const LinearHypothesis& hyp, double alpha = 0.05) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw input_error("alpha must lie in (0,1)");
  const Vector b = fit.beta_hat.stacked();
  hyp.validate(static_cast<int>(b.size()));
  const Vector resid = hyp.m_matrix.transpose() * b - hyp.l_vector;
  const Matrix inner_inv =
      detail::inner_inverse(hyp, bundle.q, "projected covariance M'QM");
  TestResult t;
  t.alpha = alpha;
  t.dof = hyp.rank();
  t.statistic = resid.dot(inner_inv * resid);
  if (t.statistic < 0.0 && t.statistic > -1e-12) t.statistic = 0.0;
  t.critical_value = chi_square_quantile(t.dof, alpha);
  t.p_value = chi_square_sf(t.dof, t.statistic);
  t.reject = t.statistic > t.critical_value;
  return t;
}

/**
 * Normal-approximation power of the Wald test at a fixed alternative
 * beta_star, evaluated for n clusters:
 *
 *   Po = 1 - Phi( (c_alpha / sqrt(n) - sqrt(n) l) / sigma ),
 *
 * where l is the quadratic distance (M'b* - l)'(M'QM)^{-1}(M'b* - l) on the
 * per-cluster scale (Q = n q held fixed) and sigma^2 the variance of its
 * linearization, gradient 2 M (M'QM)^{-1} (M'b* - l).
 */
inline PowerResult approximate_power(const Coefficients& beta_star,
                                     const LinearHypothesis& hyp,
                                     const CovarianceBundle& bundle, long n,
                                     double alpha = 0.05) {
  if (n < 1) throw input_error("sample size must be positive");
  if (!(alpha > 0.0 && alpha < 1.0)) throw input_error("alpha must lie in (0,1)");
  const Vector b = beta_star.stacked();
  hyp.validate(static_cast<int>(b.size()));
  const Matrix q_unit = bundle.unit_q();
  const Vector resid = hyp.m_matrix.transpose() * b - hyp.l_vector;
  if (resid.cwiseAbs().maxCoeff() == 0.0)
    throw precondition_error(
        "alternative lies on the null hypothesis; power linearization degenerates");
  const Matrix inner_inv = detail::inner_inverse(hyp, q_unit, "projected covariance M'QM");
  const double l_value = resid.dot(inner_inv * resid);
  const Vector grad = 2.0 * (hyp.m_matrix * (inner_inv * resid));
  const double sigma2 = grad.dot(q_unit * grad);
  if (!(sigma2 > 0.0))
    throw precondition_error("degenerate linearization variance at the alternative");
  const double sigma = std::sqrt(sigma2);
  const double crit = chi_square_quantile(hyp.rank(), alpha);
  const double sn = std::sqrt(static_cast<double>(n));
  PowerResult out;
  out.sigma_beta_star = sigma;
  out.l_value = l_value;
  out.n_used = n;
  out.approx_power = 1.0 - normal_cdf((crit / sn - sn * l_value) / sigma);
  return out;
}

/**
 * Smallest integer cluster count whose approximate power reaches the
 * target.  Solving Po(n) = target for sqrt(n) is a quadratic,
 *
 *   l s^2 + sigma z s - c_alpha = 0,   z = Phi^{-1}(1 - target),
 *
 * whose positive root gives n* = s^2; returned is floor(n*) + 1.  Plugging
 * the result back into approximate_power reproduces the target up to the
 * integer ceiling.
 */
inline long required_sample_size(const Coefficients& beta_star,
                                 const LinearHypothesis& hyp,
                                 const CovarianceBundle& bundle, double alpha,
                                 double target_power) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw input_error("alpha must lie in (0,1)");
  if (!(target_power > alpha && target_power < 1.0))
    throw input_error("target power must lie in (alpha, 1)");
  // Reuse the power linearization at an arbitrary valid n to get sigma and l.
  const PowerResult pr = approximate_power(beta_star, hyp, bundle, 1, alpha);
  const double sigma = pr.sigma_beta_star;
  const double l_value = pr.l_value;
  const double z = normal_quantile(1.0 - target_power);
  const double crit = chi_square_quantile(hyp.rank(), alpha);
  const double disc = sigma * sigma * z * z + 4.0 * l_value * crit;
  const double s = (-sigma * z + std::sqrt(disc)) / (2.0 * l_value);
  const double n_star = s * s;
  return static_cast<long>(std::floor(n_star)) + 1;
}

/**
 * Noncentrality of the Wald statistic under local alternatives drifting at
 * rate n^{-1/2}: shift d in the parameter gives
 * Delta = d' M (M'QM)^{-1} M' d.
 */
inline double noncentrality_parameter_shift(const LinearHypothesis& hyp,
                                            const CovarianceBundle& bundle,
                                            const Vector& d) {
  const Matrix q_unit = bundle.unit_q();
  hyp.validate(static_cast<int>(d.size()));
  const Matrix inner_inv = detail::inner_inverse(hyp, q_unit, "projected covariance M'QM");
  const Vector md = hyp.m_matrix.transpose() * d;
  return md.dot(inner_inv * md);
}

/// Same limit expressed through the drift of the hypothesis value itself:
/// Delta = delta' (M'QM)^{-1} delta.  With delta = M'd the two coincide.
inline double noncentrality_hypothesis_shift(const LinearHypothesis& hyp,
                                             const CovarianceBundle& bundle,
                                             const Vector& delta) {
  if (delta.size() != hyp.m_matrix.cols())
    throw input_error("hypothesis-scale shift has the wrong length");
  const Matrix q_unit = bundle.unit_q();
  const Matrix inner_inv = detail::inner_inverse(hyp, q_unit, "projected covariance M'QM");
  return delta.dot(inner_inv * delta);
}

} // namespace svydpd

#endif // SVYDPD_INFERENCE_HPP
