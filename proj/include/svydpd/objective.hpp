#ifndef SVYDPD_OBJECTIVE_HPP
#define SVYDPD_OBJECTIVE_HPP

#include <cmath>
#include <string>

#include "svydpd/model.hpp"
#include "svydpd/types.hpp"

namespace svydpd {

/**
 * Weighted quasi loglikelihood: sum over clusters of
 * w_hi * (log pi_hi(beta))' y_hi.
 *
 * Throws numeric_error naming the cluster if a category with positive count
 * sits on a clipped (underflowed) probability, since the log would then be
 * driven by the clipping floor rather than the model.
 */
inline double quasi_weighted_loglik(const Coefficients& beta,
                                    const SurveyDataset& data) {
  CompensatedSum acc;
  for (std::size_t idx = 0; idx < data.clusters.size(); ++idx) {
    const ClusterRecord& c = data.clusters[idx];
    const Vector pi = model_probabilities(beta, c.covariates);
    double term = 0.0;
    for (int j = 0; j <= data.d; ++j) {
      if (c.counts[j] == 0.0) continue;
      if (pi[j] <= detail::kProbFloor)
        throw numeric_error("cluster " + std::to_string(idx) + " category " +
                            std::to_string(j + 1) +
                            ": probability underflow under positive count");
      term += std::log(pi[j]) * c.counts[j];
    }
    acc.add(c.weight * term);
  }
  return acc.value();
}

/**
 * Kernel of the weighted divergence objective for lambda > 0:
 *
 *   sum_hi w_hi * pi_hi^lambda' ( m_hi pi_hi - ((lambda+1)/lambda) y_hi ).
 *
 * The lambda = 0 case is not a value of this kernel (its additive constant
 * diverges in the limit); callers minimizing at lambda = 0 use the negative
 * quasi loglikelihood instead, and this function refuses the branch.
 */
inline double dpd_kernel_objective(const Coefficients& beta,
                                   const SurveyDataset& data,
                                   const DpdConfig& cfg) {
  cfg.validate();
  if (cfg.lambda == 0.0)
    throw branch_error(
        "divergence kernel is defined for lambda > 0; "
        "minimize the negative quasi loglikelihood at lambda = 0");
  const double lam = cfg.lambda;
  const double ratio = (lam + 1.0) / lam;
  CompensatedSum acc;
  for (const ClusterRecord& c : data.clusters) {
    const Vector pi = model_probabilities(beta, c.covariates);
    double term = 0.0;
    for (int j = 0; j <= data.d; ++j) {
      const double plam = std::pow(pi[j], lam);
      term += plam * (c.unit_count * pi[j] - ratio * c.counts[j]);
    }
    acc.add(c.weight * term);
  }
  return acc.value();
}

/**
 * Single-cluster estimating contribution
 *
 *   u_lambda(beta, x_hi) = [ w_hi Delta* diag^(lambda-1){pi} (y - m pi) ] (x) x,
 *
 * stacked category-major.  At lambda = 0 the same expression reduces to the
 * weighted quasi likelihood score w (y* - m pi*) (x) x.
 */
inline Vector cluster_score(const Coefficients& beta, const ClusterRecord& rec,
                            const DpdConfig& cfg) {
  cfg.validate();
  const int d = beta.d();
  const int kk = static_cast<int>(rec.covariates.size());
  const Vector pi = model_probabilities(beta, rec.covariates);
  const Matrix key = delta_star_dpow(pi, cfg.lambda);
  const Vector resid = rec.counts - rec.unit_count * pi;
  const Vector core = rec.weight * (key * resid);  // length d
  Vector u(d * kk);
  for (int r = 0; r < d; ++r) u.segment(r * kk, kk) = core[r] * rec.covariates;
  return u;
}

/**
 * Estimating function u_lambda(beta): the sum of cluster_score over all
 * clusters, accumulated entrywise with compensation so the reduction order
 * cannot move the result.  The fitted estimator solves u_lambda = 0; for
 * lambda > 0 it equals -(lambda+1)^{-1} times the kernel gradient.
 */
inline Vector estimating_function(const Coefficients& beta,
                                  const SurveyDataset& data,
                                  const DpdConfig& cfg) {
  const int p = data.d * (data.k + 1);
  CompensatedMatrixSum acc(p, 1);
  for (const ClusterRecord& c : data.clusters) acc.add(cluster_score(beta, c, cfg));
  return acc.value().col(0);
}

/// Scalar objective the fitter minimizes: the divergence kernel for
/// lambda > 0, the negative quasi loglikelihood at lambda = 0.
inline double minimization_objective(const Coefficients& beta,
                                     const SurveyDataset& data,
                                     const DpdConfig& cfg) {
  cfg.validate();
  if (cfg.lambda == 0.0) return -quasi_weighted_loglik(beta, data);
  return dpd_kernel_objective(beta, data, cfg);
}

/// Analytic gradient of minimization_objective, valid on both branches:
/// -(lambda+1) * u_lambda(beta).
inline Vector minimization_gradient(const Coefficients& beta,
                                    const SurveyDataset& data,
                                    const DpdConfig& cfg) {
  return -(cfg.lambda + 1.0) * estimating_function(beta, data, cfg);
}

} // namespace svydpd

#endif // SVYDPD_OBJECTIVE_HPP
