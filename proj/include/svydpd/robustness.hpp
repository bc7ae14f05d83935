#ifndef SVYDPD_ROBUSTNESS_HPP
#define SVYDPD_ROBUSTNESS_HPP

#include <cmath>
#include <string>
#include <vector>

#include "svydpd/covariance.hpp"
#include "svydpd/inference.hpp"
#include "svydpd/model.hpp"
#include "svydpd/objective.hpp"
#include "svydpd/types.hpp"

namespace svydpd {

/**
 * \brief Point-mass contamination target: one cluster pushed toward a single
 *        response category.
 *
 * t_vector is a 0/1 indicator of length d+1 with exactly one 1.
 */
struct ContaminationPoint {
  int target_stratum = 0;
  int target_cluster = 0;
  Vector t_vector;

  void validate(int num_categories) const {
    if (t_vector.size() != num_categories)
      throw input_error("contamination indicator has length " +
                        std::to_string(t_vector.size()) + ", expected " +
                        std::to_string(num_categories));
    int ones = 0;
    for (int s = 0; s < t_vector.size(); ++s) {
      const double v = t_vector[s];
      if (v != 0.0 && v != 1.0)
        throw input_error("contamination indicator entries must be 0 or 1");
      if (v == 1.0) ++ones;
    }
    if (ones != 1)
      throw input_error("contamination indicator must select exactly one category");
  }
};

/// A set of contamination points hitting distinct clusters.
struct ContaminationSet {
  std::vector<ContaminationPoint> points;

  void validate(int num_categories) const {
    for (const auto& p : points) p.validate(num_categories);
    for (std::size_t a = 0; a < points.size(); ++a)
      for (std::size_t b = a + 1; b < points.size(); ++b)
        if (points[a].target_stratum == points[b].target_stratum &&
            points[a].target_cluster == points[b].target_cluster)
          throw input_error("duplicate contamination target (stratum " +
                            std::to_string(points[a].target_stratum) + ", cluster " +
                            std::to_string(points[a].target_cluster) + ")");
  }
};

namespace detail {

inline std::size_t find_cluster(const SurveyDataset& data, int stratum_id,
                                int cluster_id) {
  for (std::size_t i = 0; i < data.clusters.size(); ++i)
    if (data.clusters[i].stratum_id == stratum_id &&
        data.clusters[i].cluster_id == cluster_id)
      return i;
  throw input_error("no cluster with stratum " + std::to_string(stratum_id) +
                    ", cluster " + std::to_string(cluster_id) + " in the dataset");
}

} // namespace detail

/**
 * Estimating-function contribution of one cluster whose composition is a
 * fixed distribution g over categories instead of its observed counts:
 * [w m K(pi)(g - pi)] ⊗ x with K(pi) = Delta* diag^{lambda-1}{pi}.
 */
inline Vector u_star(const Coefficients& beta, const ClusterRecord& rec,
                     const Vector& g, const DpdConfig& cfg) {
  const Vector pi = model_probabilities(beta, rec.covariates);
  if (g.size() != pi.size())
    throw input_error("contaminating distribution has the wrong number of categories");
  const Matrix kmat = delta_star_dpow(pi, cfg.lambda);
  const Vector core = rec.weight * rec.unit_count * (kmat * (g - pi));
  const int d = beta.d();
  const int kk = static_cast<int>(rec.covariates.size());
  Vector out(d * kk);
  for (int r = 0; r < d; ++r) out.segment(r * kk, kk) = core[r] * rec.covariates;
  return out;
}

namespace detail {

/**
 * d x d matrix G with G(r,v) = d b_r / d eta_v, where b = w m K(pi)(g - pi)
 * is the cluster's u_star core and eta_v = x^T beta_v the v-th linear
 * predictor.  Everything is expressed through nonnegative powers pi^lambda
 * and pi^{1+lambda}, so lambda = 0 needs no special case.  The per-beta
 * Jacobian of the stacked u_star is then G ⊗ x x^T.
 */
inline Matrix u_star_eta_jacobian(const Vector& pi, const Vector& g, double w,
                                  double m, double lambda) {
  const int d1 = static_cast<int>(pi.size());
  const int d = d1 - 1;
  Vector pil(d1), pi1l(d1);
  for (int s = 0; s < d1; ++s) {
    pil[s] = std::pow(pi[s], lambda);
    pi1l[s] = pi[s] * pil[s];
  }
  double t_sum = 0.0, s1 = 0.0;
  for (int s = 0; s < d1; ++s) {
    t_sum += pil[s] * (g[s] - pi[s]);
    s1 += pi1l[s];
  }
  Matrix gmat(d, d);
  for (int r = 0; r < d; ++r) {
    for (int v = 0; v < d; ++v) {
      const double drv = (r == v) ? 1.0 : 0.0;
      const double dt_dv = lambda * pil[v] * (g[v] - pi[v]) - pi1l[v] -
                           pi[v] * (lambda * t_sum - s1);
      gmat(r, v) = w * m *
                   (pil[r] * (drv - pi[v]) * (lambda * (g[r] - pi[r]) - pi[r]) -
                    pi[r] * (drv - pi[v]) * t_sum - pi[r] * dt_dv);
    }
  }
  return gmat;
}

} // namespace detail

/**
 * Negative average Jacobian of the estimating function when the target
 * cluster's composition is held at g and every other cluster sits at its
 * model probabilities.  At g = pi(target) this equals psi_matrix exactly.
 */
inline Matrix psi_star_matrix(const Coefficients& beta, const SurveyDataset& data,
                              const DpdConfig& cfg, std::size_t target_index,
                              const Vector& g) {
  data.validate();
  cfg.validate();
  if (target_index >= data.clusters.size())
    throw input_error("contamination target index out of range");
  const int p = data.param_dim();
  const int kk = data.num_covariates();
  CompensatedMatrixSum acc(p, p);
  for (std::size_t idx = 0; idx < data.clusters.size(); ++idx) {
    const ClusterRecord& rec = data.clusters[idx];
    const Vector pi = model_probabilities(beta, rec.covariates);
    const Vector& comp = (idx == target_index) ? g : pi;
    if (comp.size() != pi.size())
      throw input_error("contaminating distribution has the wrong number of categories");
    const Matrix gmat = detail::u_star_eta_jacobian(pi, comp, rec.weight,
                                                    rec.unit_count, cfg.lambda);
    // Psi* accumulates -J; J's (r,v) block is gmat(r,v) * x x^T.
    const Matrix xxt = rec.covariates * rec.covariates.transpose();
    Matrix contrib(p, p);
    for (int r = 0; r < beta.d(); ++r)
      for (int v = 0; v < beta.d(); ++v)
        contrib.block(r * kk, v * kk, kk, kk) = -gmat(r, v) * xxt;
    acc.add(contrib);
  }
  return acc.value() / static_cast<double>(data.n_clusters());
}

/**
 * Influence function of the estimator at the model: point-mass
 * contamination of one cluster at category t gives
 * IF = Psi^{-1} (1/n) u_star(delta_t).
 */
inline Vector if_estimator(const Coefficients& beta, const SurveyDataset& data,
                           const DpdConfig& cfg, const ContaminationPoint& point) {
  data.validate();
  point.validate(data.num_categories());
  const std::size_t idx =
      detail::find_cluster(data, point.target_stratum, point.target_cluster);
  const Matrix psi = psi_matrix(beta, data, cfg);
  const SymmetricInverse inv = invert_spd(psi, "psi matrix");
  const Vector num = u_star(beta, data.clusters[idx], point.t_vector, cfg) /
                     static_cast<double>(data.n_clusters());
  return inv.inverse * num;
}

/**
 * Influence function around an arbitrary baseline composition g for the
 * target cluster: Psi*^{-1} (1/n) [u_star(delta_t) - u_star(g)].  At
 * g = pi(target) this reduces to if_estimator.
 */
inline Vector if_estimator_general(const Coefficients& beta, const SurveyDataset& data,
                                   const DpdConfig& cfg, const ContaminationPoint& point,
                                   const Vector& g) {
  data.validate();
  point.validate(data.num_categories());
  if (g.size() != data.num_categories())
    throw input_error("baseline composition has the wrong number of categories");
  const std::size_t idx =
      detail::find_cluster(data, point.target_stratum, point.target_cluster);
  const Matrix psi_star = psi_star_matrix(beta, data, cfg, idx, g);
  const SymmetricInverse inv = invert_spd(psi_star, "psi-star matrix");
  const ClusterRecord& rec = data.clusters[idx];
  const Vector num = (u_star(beta, rec, point.t_vector, cfg) - u_star(beta, rec, g, cfg)) /
                     static_cast<double>(data.n_clusters());
  return inv.inverse * num;
}

/**
 * Joint influence of contamination in several clusters: the single-point
 * numerators add up and pass through one Psi factorization.
 */
inline Vector if_estimator_multi(const Coefficients& beta, const SurveyDataset& data,
                                 const DpdConfig& cfg, const ContaminationSet& set) {
  data.validate();
  set.validate(data.num_categories());
  const Matrix psi = psi_matrix(beta, data, cfg);
  const SymmetricInverse inv = invert_spd(psi, "psi matrix");
  Vector num = Vector::Zero(data.param_dim());
  for (const auto& point : set.points) {
    const std::size_t idx =
        detail::find_cluster(data, point.target_stratum, point.target_cluster);
    num += u_star(beta, data.clusters[idx], point.t_vector, cfg);
  }
  num /= static_cast<double>(data.n_clusters());
  return inv.inverse * num;
}

namespace detail {

inline double if2_from_vector(const Vector& if_vec, const Coefficients& beta0,
                              const SurveyDataset& data, const DpdConfig& cfg,
                              const LinearHypothesis& hyp, OmegaVariant variant) {
  const Vector b0 = beta0.stacked();
  hyp.validate(static_cast<int>(b0.size()));
  const Vector null_gap = hyp.m_matrix.transpose() * b0 - hyp.l_vector;
  if (null_gap.cwiseAbs().maxCoeff() > 1e-8)
    throw precondition_error(
        "beta0 does not satisfy the null hypothesis (max deviation " +
        std::to_string(null_gap.cwiseAbs().maxCoeff()) + ")");
  if (variant == OmegaVariant::Overdispersed)
    throw input_error(
        "if2_wald computes its own covariance; use the model or empirical variant");
  const CovarianceBundle bundle = sandwich(beta0, data, cfg, variant);
  const Matrix q_unit = bundle.unit_q();
  const Matrix inner_inv = inner_inverse(hyp, q_unit, "projected covariance M'QM");
  const Vector proj = hyp.m_matrix.transpose() * if_vec;
  return 2.0 * proj.dot(inner_inv * proj);
}

} // namespace detail

/**
 * Second order influence of the Wald functional at the null (the first
 * order term vanishes there): IF2 = 2 IF^T M (M^T Q M)^{-1} M^T IF, with Q
 * the sandwich covariance at beta0 on the per-cluster scale.
 */
inline double if2_wald(const Coefficients& beta0, const SurveyDataset& data,
                       const DpdConfig& cfg, const LinearHypothesis& hyp,
                       const ContaminationPoint& point,
                       OmegaVariant variant = OmegaVariant::ModelMultinomial) {
  const Vector if_vec = if_estimator(beta0, data, cfg, point);
  return detail::if2_from_vector(if_vec, beta0, data, cfg, hyp, variant);
}

inline double if2_wald(const Coefficients& beta0, const SurveyDataset& data,
                       const DpdConfig& cfg, const LinearHypothesis& hyp,
                       const ContaminationSet& set,
                       OmegaVariant variant = OmegaVariant::ModelMultinomial) {
  const Vector if_vec = if_estimator_multi(beta0, data, cfg, set);
  return detail::if2_from_vector(if_vec, beta0, data, cfg, hyp, variant);
}

/**
 * Mean absolute standardized deviation between two coefficient tables:
 * the average of |a - b| / |b| over all entries.  Entries where the
 * reference b is exactly zero make the metric undefined.
 */
inline double masd_beta(const Coefficients& beta_a, const Coefficients& beta_b) {
  if (beta_a.beta.rows() != beta_b.beta.rows() ||
      beta_a.beta.cols() != beta_b.beta.cols())
    throw input_error("coefficient tables have different shapes");
  std::string zeros;
  double sum = 0.0;
  for (int r = 0; r < beta_b.beta.rows(); ++r)
    for (int j = 0; j < beta_b.beta.cols(); ++j) {
      if (beta_b.beta(r, j) == 0.0) {
        if (!zeros.empty()) zeros += ", ";
        zeros += "beta(" + std::to_string(r + 1) + "," + std::to_string(j) + ")";
        continue;
      }
      sum += std::abs((beta_a.beta(r, j) - beta_b.beta(r, j)) / beta_b.beta(r, j));
    }
  if (!zeros.empty())
    throw input_error("zero reference entries in masd denominator: " + zeros);
  return sum / static_cast<double>(beta_b.beta.size());
}

/**
 * Same metric on the fitted per-cluster probabilities: averages
 * |pi_a - pi_b| / pi_b over every cluster and category.
 */
inline double masd_pi(const Coefficients& beta_a, const Coefficients& beta_b,
                      const SurveyDataset& data) {
  data.validate();
  double sum = 0.0;
  long count = 0;
  for (const auto& rec : data.clusters) {
    const Vector pa = model_probabilities(beta_a, rec.covariates);
    const Vector pb = model_probabilities(beta_b, rec.covariates);
    for (int s = 0; s < pa.size(); ++s) {
      sum += std::abs((pa[s] - pb[s]) / pb[s]);
      ++count;
    }
  }
  return sum / static_cast<double>(count);
}

/// Single-entry standardized deviation |a - b| / |b|.
inline double asd(double scalar_a, double scalar_b) {
  if (scalar_b == 0.0)
    throw input_error("zero reference value in asd denominator");
  return std::abs((scalar_a - scalar_b) / scalar_b);
}

/**
 * Cluster weights that turn the fitted objective into the one for the table
 * of category shares: w = (m/N)^{1+lambda} / m, with N the total unit
 * count.  The kernel, estimating function, and psi matrix are jointly
 * linear in (m, counts), so reweighting this way equals replacing each
 * cluster's counts by its share of the table raised through the DPD power,
 * while the stored integer counts stay untouched.  At lambda = 0 all
 * weights become 1/N and the maximizer of the quasi loglikelihood is
 * unchanged.
 */
inline SurveyDataset table_share_weights(const SurveyDataset& data, double lambda) {
  data.validate();
  if (lambda < 0.0) throw input_error("lambda must be nonnegative");
  const double total = data.total_units();
  if (total <= 0.0) throw input_error("dataset has no units");
  SurveyDataset out = data;
  for (auto& rec : out.clusters)
    rec.weight = std::pow(rec.unit_count / total, 1.0 + lambda) / rec.unit_count;
  return out;
}

} // namespace svydpd

#endif // SVYDPD_ROBUSTNESS_HPP
