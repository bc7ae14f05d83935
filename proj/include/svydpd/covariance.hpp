#ifndef SVYDPD_COVARIANCE_HPP
#define SVYDPD_COVARIANCE_HPP

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "svydpd/objective.hpp"

namespace svydpd {

/// Which middle matrix the sandwich uses.
enum class OmegaVariant {
  ModelMultinomial,  // per-cluster multinomial covariance m Delta(pi)
  Overdispersed,     // nu-scaled multinomial covariance
  Empirical          // outer products of the realized cluster scores
};

/// Averaging convention for the information-type matrices: per cluster
/// (divide by the number of clusters) or per unit (divide by the total
/// number of sampled units).
enum class Normalization { PerCluster, PerUnit };

inline const char* to_string(OmegaVariant v) {
  switch (v) {
    case OmegaVariant::ModelMultinomial: return "multinomial";
    case OmegaVariant::Overdispersed: return "overdispersed";
    case OmegaVariant::Empirical: return "empirical";
  }
  return "?";
}

namespace detail {

/// Accumulates scale * (G (x) x x') into a compensated p x p sum, where G is
/// the d x d category block and x the covariate vector.
inline void add_kron(CompensatedMatrixSum& acc, const Matrix& g, const Vector& x,
                     double scale) {
  const int d = static_cast<int>(g.rows());
  const int kk = static_cast<int>(x.size());
  Matrix term(d * kk, d * kk);
  for (int r = 0; r < d; ++r)
    for (int v = 0; v < d; ++v)
      term.block(r * kk, v * kk, kk, kk) = (scale * g(r, v)) * (x * x.transpose());
  acc.add(term);
}

inline double normalizer(const SurveyDataset& data, Normalization norm) {
  return norm == Normalization::PerCluster ? static_cast<double>(data.n_clusters())
                                           : data.total_units();
}

} // namespace detail

/**
 * Symmetric-eigendecomposition inverse with identifiability diagnostics.
 * Eigenvalues below rel_tol times the largest magnitude are treated as a
 * null space; if any are found the matrix is declared singular and the
 * offending directions are attached to the error.  Pseudo-inversion is
 * opt-in (allow_pseudo), never the default, so identifiability failures
 * cannot pass silently.
 */
struct SymmetricInverse {
  Matrix inverse;
  double condition = 0.0;
};

inline SymmetricInverse invert_spd(const Matrix& a, const std::string& name,
                                   bool allow_pseudo = false,
                                   double rel_tol = 1e-12) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (a + a.transpose()));
  const Vector evals = es.eigenvalues();
  const Matrix evecs = es.eigenvectors();
  const double emax = evals.cwiseAbs().maxCoeff();
  const double cut = rel_tol * std::max(emax, 1e-300);
  std::vector<int> null_idx;
  for (int j = 0; j < evals.size(); ++j)
    if (std::abs(evals[j]) <= cut) null_idx.push_back(j);
  if (!null_idx.empty() && !allow_pseudo) {
    std::vector<double> basis;
    for (int j : null_idx)
      for (int i = 0; i < evecs.rows(); ++i) basis.push_back(evecs(i, j));
    throw identifiability_error(
        name + " is singular (" + std::to_string(null_idx.size()) +
            "-dimensional null space; largest eigenvalue " + std::to_string(emax) + ")",
        null_idx, basis);
  }
  Vector inv_evals(evals.size());
  for (int j = 0; j < evals.size(); ++j)
    inv_evals[j] = (std::abs(evals[j]) <= cut) ? 0.0 : 1.0 / evals[j];
  SymmetricInverse out;
  out.inverse = evecs * inv_evals.asDiagonal() * evecs.transpose();
  double emin = emax;
  for (int j = 0; j < evals.size(); ++j)
    if (std::abs(evals[j]) > cut) emin = std::min(emin, std::abs(evals[j]));
  out.condition = (emin > 0.0) ? emax / emin : std::numeric_limits<double>::infinity();
  return out;
}

/**
 * Averaged sensitivity matrix
 *
 *   Psi = (1/n) sum_hi w m (Delta* diag^(lambda-1) Delta*') (x) x x'.
 *
 * The safe factorization covers every lambda >= 0 in one formula; the
 * lambda = 0 value coincides with the literal limit expression
 * w m Delta(pi*) (x) x x' (kept separately below as a cross-check path).
 */
inline Matrix psi_matrix(const Coefficients& beta, const SurveyDataset& data,
                         const DpdConfig& cfg,
                         Normalization norm = Normalization::PerCluster) {
  cfg.validate();
  const int p = data.param_dim();
  CompensatedMatrixSum acc(p, p);
  for (const ClusterRecord& c : data.clusters) {
    const Vector pi = model_probabilities(beta, c.covariates);
    const Matrix key = delta_star_dpow(pi, cfg.lambda);
    const Matrix g = key * delta_star(pi).transpose();
    detail::add_kron(acc, g, c.covariates, c.weight * c.unit_count);
  }
  return acc.value() / detail::normalizer(data, norm);
}

/// Literal lambda = 0 sensitivity expression, retained as a cross-check of
/// the unified formula: (1/n) sum w m Delta(pi*) (x) x x'.
inline Matrix psi_matrix_lambda0_literal(const Coefficients& beta,
                                         const SurveyDataset& data,
                                         Normalization norm = Normalization::PerCluster) {
  const int p = data.param_dim();
  CompensatedMatrixSum acc(p, p);
  for (const ClusterRecord& c : data.clusters) {
    const Vector pi = model_probabilities(beta, c.covariates);
    const Matrix g = delta_matrix(pi.head(data.d).eval());
    detail::add_kron(acc, g, c.covariates, c.weight * c.unit_count);
  }
  return acc.value() / detail::normalizer(data, norm);
}

/**
 * Model-based variability matrix with multinomial within-cluster covariance
 * Sigma = m Delta(pi):
 *
 *   Omega = (1/n) sum_hi w^2 m (K Delta(pi) K') (x) x x',   K = Delta* diag^(lambda-1).
 *
 * Weights enter squared here (they enter Psi linearly), so Omega equals Psi
 * at lambda = 0 exactly when all weights are 1.
 */
inline Matrix omega_model_multinomial(const Coefficients& beta,
                                      const SurveyDataset& data, const DpdConfig& cfg,
                                      Normalization norm = Normalization::PerCluster) {
  cfg.validate();
  const int p = data.param_dim();
  CompensatedMatrixSum acc(p, p);
  for (const ClusterRecord& c : data.clusters) {
    const Vector pi = model_probabilities(beta, c.covariates);
    const Matrix key = delta_star_dpow(pi, cfg.lambda);
    const Matrix g = key * delta_matrix(pi) * key.transpose();
    detail::add_kron(acc, g, c.covariates, c.weight * c.weight * c.unit_count);
  }
  return acc.value() / detail::normalizer(data, norm);
}

/**
 * Variability matrix under overdispersed within-cluster covariance
 * Sigma = nu m Delta(pi), with either one pooled nu or one nu per cluster
 * (in dataset order).  Values slightly below 1 are accepted (estimates are
 * reported raw); negative values are refused.
 */
inline Matrix omega_overdispersed(const Coefficients& beta, const SurveyDataset& data,
                                  const DpdConfig& cfg, const std::vector<double>& nu,
                                  Normalization norm = Normalization::PerCluster) {
  cfg.validate();
  if (nu.size() != 1 && nu.size() != static_cast<std::size_t>(data.n_clusters()))
    throw input_error("nu must be pooled (size 1) or per-cluster (size n)");
  for (double v : nu)
    if (!(v >= 0.0)) throw input_error("negative overdispersion value");
  const int p = data.param_dim();
  CompensatedMatrixSum acc(p, p);
  for (int i = 0; i < data.n_clusters(); ++i) {
    const ClusterRecord& c = data.clusters[i];
    const double v = nu.size() == 1 ? nu[0] : nu[i];
    const Vector pi = model_probabilities(beta, c.covariates);
    const Matrix key = delta_star_dpow(pi, cfg.lambda);
    const Matrix g = key * delta_matrix(pi) * key.transpose();
    detail::add_kron(acc, g, c.covariates, v * c.weight * c.weight * c.unit_count);
  }
  return acc.value() / detail::normalizer(data, norm);
}

inline Matrix omega_overdispersed(const Coefficients& beta, const SurveyDataset& data,
                                  const DpdConfig& cfg, double nu,
                                  Normalization norm = Normalization::PerCluster) {
  return omega_overdispersed(beta, data, cfg, std::vector<double>{nu}, norm);
}

/// Outer-product-of-scores variability estimate (1/n) sum U U'; positive
/// semidefinite by construction, each cluster contributing rank <= 1.
inline Matrix omega_empirical(const Coefficients& beta, const SurveyDataset& data,
                              const DpdConfig& cfg,
                              Normalization norm = Normalization::PerCluster) {
  cfg.validate();
  const int p = data.param_dim();
  CompensatedMatrixSum acc(p, p);
  for (const ClusterRecord& c : data.clusters) {
    const Vector u = cluster_score(beta, c, cfg);
    acc.add(u * u.transpose());
  }
  return acc.value() / detail::normalizer(data, norm);
}

/**
 * Sensitivity, variability, and sandwich covariance of the estimator in one
 * bundle.  q = (1/n) Psi^{-1} Omega Psi^{-1} under the per-cluster
 * convention (1/N under the per-unit one); unit_q() undoes that final
 * normalization, giving the O(1) matrix the power and local-alternative
 * formulas work with.
 */
struct CovarianceBundle {
  Matrix psi;
  Matrix omega;
  Matrix q;
  OmegaVariant omega_variant = OmegaVariant::ModelMultinomial;
  std::vector<double> nu_values;  // only for the overdispersed variant
  Normalization normalization = Normalization::PerCluster;
  double sample_scale = 0.0;      // the divisor: n clusters or N units
  double psi_condition = 0.0;

  Matrix unit_q() const { return q * sample_scale; }
};

inline CovarianceBundle sandwich(const Coefficients& beta, const SurveyDataset& data,
                                 const DpdConfig& cfg, OmegaVariant variant,
                                 const std::vector<double>& nu = {},
                                 Normalization norm = Normalization::PerCluster,
                                 bool allow_pseudo = false) {
  CovarianceBundle b;
  b.omega_variant = variant;
  b.normalization = norm;
  b.sample_scale = detail::normalizer(data, norm);
  b.psi = psi_matrix(beta, data, cfg, norm);
  switch (variant) {
    case OmegaVariant::ModelMultinomial:
      b.omega = omega_model_multinomial(beta, data, cfg, norm);
      break;
    case OmegaVariant::Overdispersed:
      if (nu.empty())
        throw input_error("overdispersed sandwich needs nu values");
      b.omega = omega_overdispersed(beta, data, cfg, nu, norm);
      b.nu_values = nu;
      break;
    case OmegaVariant::Empirical:
      b.omega = omega_empirical(beta, data, cfg, norm);
      break;
  }
  const SymmetricInverse inv = invert_spd(b.psi, "sensitivity matrix", allow_pseudo);
  b.psi_condition = inv.condition;
  b.q = (inv.inverse * b.omega * inv.inverse) / b.sample_scale;
  b.q = Matrix(0.5 * (b.q + b.q.transpose()));  // enforce exact symmetry
  return b;
}

/// Per-stratum sensitivity/variability matrices plus the stratum weights
/// eta_h = n_h / n.  The eta-weighted recombination equals the pooled
/// per-cluster matrices identically.
struct StratumMatrices {
  std::vector<int> stratum_ids;
  Vector eta;
  std::vector<Matrix> psi;
  std::vector<Matrix> omega_model;
  std::vector<Matrix> omega_empirical;
};

inline StratumMatrices stratumwise_matrices(const Coefficients& beta,
                                            const SurveyDataset& data,
                                            const DpdConfig& cfg) {
  cfg.validate();
  StratumMatrices out;
  out.stratum_ids = data.strata();
  const int H = static_cast<int>(out.stratum_ids.size());
  if (H == 0) throw input_error("dataset has no strata");
  out.eta = Vector(H);
  for (int hi = 0; hi < H; ++hi) {
    const int h = out.stratum_ids[hi];
    SurveyDataset sub;
    sub.d = data.d;
    sub.k = data.k;
    sub.intercept_explicit = data.intercept_explicit;
    for (const ClusterRecord& c : data.clusters)
      if (c.stratum_id == h) sub.clusters.push_back(c);
    if (sub.clusters.empty()) throw input_error("empty stratum " + std::to_string(h));
    out.eta[hi] = static_cast<double>(sub.n_clusters()) / data.n_clusters();
    out.psi.push_back(psi_matrix(beta, sub, cfg));
    out.omega_model.push_back(omega_model_multinomial(beta, sub, cfg));
    out.omega_empirical.push_back(omega_empirical(beta, sub, cfg));
  }
  return out;
}

} // namespace svydpd

#endif // SVYDPD_COVARIANCE_HPP
