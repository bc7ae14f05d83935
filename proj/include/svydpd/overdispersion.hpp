#ifndef SVYDPD_OVERDISPERSION_HPP
#define SVYDPD_OVERDISPERSION_HPP

#include <cmath>
#include <string>
#include <vector>

#include "svydpd/covariance.hpp"
#include "svydpd/fit.hpp"

namespace svydpd {

enum class NuMethod { EstimatingEquation, Moments };
enum class NuScope { Pooled, PerStratum };

/**
 * What to do about the common-cluster-size requirement of the pooled
 * estimators.  The default refuses unequal sizes rather than silently
 * substituting a mean.  The opt-in policy keeps each cluster's own size
 * inside the matrix/Pearson computations and uses the mean size only for
 * the nu -> rho^2 conversion (where it cancels out of deviation ratios).
 */
enum class MBarPolicy { RequireEqual, UseMeanM };

struct OverdispersionEstimate {
  double nu = 0.0;
  double rho_squared = 0.0;
  double m_bar = 0.0;   // common (or mean) cluster size used for conversion
  NuMethod method = NuMethod::EstimatingEquation;
  NuScope scope = NuScope::Pooled;
  int stratum_id = -1;  // set for per-stratum estimates
  bool rho_in_unit_interval = true;  // estimates are reported raw; this flags excursions
};

namespace detail {

/// Common cluster size under the given policy.  Throws precondition_error
/// when sizes differ and the policy demands equality.
inline double resolve_m_bar(const SurveyDataset& data, MBarPolicy policy) {
  double sum = 0.0;
  const double first = data.clusters.front().unit_count;
  bool equal = true;
  for (const ClusterRecord& c : data.clusters) {
    sum += c.unit_count;
    if (c.unit_count != first) equal = false;
  }
  if (!equal && policy == MBarPolicy::RequireEqual)
    throw precondition_error(
        "pooled overdispersion estimators require a common cluster size; "
        "sizes differ (pass the mean-size policy to override)");
  return equal ? first : sum / data.n_clusters();
}

inline OverdispersionEstimate finish(double nu, double m_bar, NuMethod method,
                                     NuScope scope, int stratum_id) {
  if (!(m_bar > 1.0))
    throw input_error("cluster size must exceed 1 to define an intra-cluster correlation");
  OverdispersionEstimate e;
  e.nu = nu;
  e.m_bar = m_bar;
  e.rho_squared = (nu - 1.0) / (m_bar - 1.0);
  e.method = method;
  e.scope = scope;
  e.stratum_id = stratum_id;
  e.rho_in_unit_interval = (e.rho_squared >= 0.0 && e.rho_squared <= 1.0);
  return e;
}

} // namespace detail

/**
 * Estimating-equation overdispersion estimate: the trace of the model-based
 * variability matrix inverse times its empirical counterpart, divided by
 * the parameter dimension.  Exactly 1 when the empirical matrix equals the
 * model one.  Estimates are never clipped; values below 1 (negative rho^2)
 * are reported raw with the unit-interval flag cleared.
 */
inline OverdispersionEstimate nu_estimating_equation(
    const Coefficients& beta, const SurveyDataset& data, const DpdConfig& cfg,
    MBarPolicy policy = MBarPolicy::RequireEqual) {
  data.validate();
  const double m_bar = detail::resolve_m_bar(data, policy);
  const Matrix omega_model = omega_model_multinomial(beta, data, cfg);
  const Matrix omega_hat = omega_empirical(beta, data, cfg);
  const SymmetricInverse inv = invert_spd(omega_model, "model variability matrix");
  const double nu = (inv.inverse * omega_hat).trace() / data.param_dim();
  return detail::finish(nu, m_bar, NuMethod::EstimatingEquation, NuScope::Pooled, -1);
}

inline OverdispersionEstimate nu_estimating_equation(
    const FitResult& fit, const SurveyDataset& data, const DpdConfig& cfg,
    MBarPolicy policy = MBarPolicy::RequireEqual) {
  return nu_estimating_equation(fit.beta_hat, data, cfg, policy);
}

/**
 * Moment (Pearson) overdispersion estimate: the fitted-cell chi-square sum
 * over all d+1 categories divided by n*d.  Zero on exactly fitted data.
 * Throws numeric_error naming cluster and category if a fitted cell
 * probability underflowed to the clipping floor.
 */
inline OverdispersionEstimate nu_moments(const Coefficients& beta,
                                         const SurveyDataset& data,
                                         MBarPolicy policy = MBarPolicy::RequireEqual) {
  data.validate();
  const double m_bar = detail::resolve_m_bar(data, policy);
  CompensatedSum acc;
  for (std::size_t idx = 0; idx < data.clusters.size(); ++idx) {
    const ClusterRecord& c = data.clusters[idx];
    const Vector pi = model_probabilities(beta, c.covariates);
    for (int j = 0; j <= data.d; ++j) {
      const double e = c.unit_count * pi[j];
      if (pi[j] <= detail::kProbFloor)
        throw numeric_error("cluster " + std::to_string(idx) + " category " +
                            std::to_string(j + 1) +
                            ": fitted probability underflow in moment estimator");
      const double r = c.counts[j] - e;
      acc.add(r * r / e);
    }
  }
  const double nu = acc.value() / (data.n_clusters() * data.d);
  return detail::finish(nu, m_bar, NuMethod::Moments, NuScope::Pooled, -1);
}

inline OverdispersionEstimate nu_moments(const FitResult& fit, const SurveyDataset& data,
                                         MBarPolicy policy = MBarPolicy::RequireEqual) {
  return nu_moments(fit.beta_hat, data, policy);
}

/// Stratum-specific estimates: the pooled estimator applied inside each
/// stratum with its own common size m_bar_h.
inline std::vector<OverdispersionEstimate> nu_per_stratum(
    const Coefficients& beta, const SurveyDataset& data, const DpdConfig& cfg,
    NuMethod method, MBarPolicy policy = MBarPolicy::RequireEqual) {
  data.validate();
  std::vector<OverdispersionEstimate> out;
  for (int h : data.strata()) {
    SurveyDataset sub;
    sub.d = data.d;
    sub.k = data.k;
    sub.intercept_explicit = data.intercept_explicit;
    for (const ClusterRecord& c : data.clusters)
      if (c.stratum_id == h) sub.clusters.push_back(c);
    OverdispersionEstimate e =
        (method == NuMethod::EstimatingEquation)
            ? nu_estimating_equation(beta, sub, cfg, policy)
            : nu_moments(beta, sub, policy);
    e.scope = NuScope::PerStratum;
    e.stratum_id = h;
    out.push_back(e);
  }
  return out;
}

inline std::vector<OverdispersionEstimate> nu_per_stratum(
    const FitResult& fit, const SurveyDataset& data, const DpdConfig& cfg,
    NuMethod method, MBarPolicy policy = MBarPolicy::RequireEqual) {
  return nu_per_stratum(fit.beta_hat, data, cfg, method, policy);
}

} // namespace svydpd

#endif // SVYDPD_OVERDISPERSION_HPP
