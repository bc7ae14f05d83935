#ifndef SVYDPD_FIT_HPP
#define SVYDPD_FIT_HPP

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "svydpd/covariance.hpp"
#include "svydpd/objective.hpp"

namespace svydpd {

/// Optimizer configuration.  The convergence certificate is the sup norm of
/// the estimating function, not any property of the search path.
struct FitConfig {
  int max_iterations = 200;
  double gradient_tolerance = 1e-6;   // on ||u_lambda||_inf
  double step_tolerance = 1e-12;      // on ||delta beta||_inf
  bool has_initial_beta = false;
  Coefficients initial_beta;
  int multistart = 0;                 // extra seeded restarts from perturbed starts
  std::uint64_t multistart_seed = 1;

  void validate() const {
    if (max_iterations < 1) throw input_error("max_iterations must be >= 1");
    if (!(gradient_tolerance > 0.0) || !(step_tolerance > 0.0))
      throw input_error("tolerances must be positive");
  }
};

struct FitResult {
  Coefficients beta_hat;
  double lambda = 0.0;
  bool converged = false;
  int iterations = 0;
  double final_gradient_norm = 0.0;   // ||u_lambda(beta_hat)||_inf
  double objective_value = 0.0;
  std::vector<std::string> warnings;  // separation, dropped clusters, ...
};

namespace detail {

/// Rank check of the cluster design matrix; names dependent columns.
inline void check_design_rank(const SurveyDataset& data) {
  const int kk = data.k + 1;
  Matrix design(data.n_clusters(), kk);
  for (int i = 0; i < data.n_clusters(); ++i)
    design.row(i) = data.clusters[i].covariates.transpose();
  Eigen::ColPivHouseholderQR<Matrix> qr(design);
  qr.setThreshold(1e-10);
  const int rank = static_cast<int>(qr.rank());
  if (rank < kk) {
    // Pivot order puts the independent columns first; the rest are the
    // culprits reported to the caller.
    std::vector<int> dependent;
    const auto perm = qr.colsPermutation().indices();
    for (int j = rank; j < kk; ++j) dependent.push_back(perm[j]);
    std::string msg = "design matrix is rank deficient (rank " +
                      std::to_string(rank) + " of " + std::to_string(kk) +
                      "); dependent covariate column(s):";
    for (int j : dependent) msg += " x" + std::to_string(j);
    throw identifiability_error(msg, dependent);
  }
}

inline double sup_norm(const Vector& v) { return v.cwiseAbs().maxCoeff(); }

/// One optimization run from a fixed start.
inline FitResult fit_from_start(const SurveyDataset& data, const DpdConfig& dpd,
                                const FitConfig& cfg, const Coefficients& start) {
  const int d = data.d;
  FitResult res;
  res.lambda = dpd.lambda;
  Coefficients beta = start;

  double obj = minimization_objective(beta, data, dpd);
  Vector u = estimating_function(beta, data, dpd);
  int iter = 0;
  for (; iter < cfg.max_iterations; ++iter) {
    res.final_gradient_norm = sup_norm(u);
    if (res.final_gradient_norm <= cfg.gradient_tolerance) {
      res.converged = true;
      break;
    }

    // Newton direction with the model-based sensitivity matrix as Hessian
    // surrogate (a Fisher-scoring analogue).  The surrogate is PSD; if its
    // factorization fails or the direction does not descend, fall back to
    // the raw gradient direction.
    const Vector grad = -(dpd.lambda + 1.0) * u;
    Vector step;
    bool have_newton = false;
    {
      // Root-finding Newton on u: the expected Jacobian of u is minus n
      // times the sensitivity matrix, so the step solves (n Psi) delta = u.
      const Matrix h = psi_matrix(beta, data, dpd) * data.n_clusters();
      Eigen::LDLT<Matrix> ldlt(h);
      if (ldlt.info() == Eigen::Success) {
        Vector cand = ldlt.solve(u);
        if (cand.allFinite() && grad.dot(cand) < 0.0) {
          step = cand;
          have_newton = true;
        }
      }
    }
    if (!have_newton) {
      const double gn = grad.norm();
      step = (gn > 0.0) ? Vector(-grad / gn) : Vector(Vector::Zero(grad.size()));
    }

    // Backtracking line search (Armijo) on the minimization objective.
    const double slope = grad.dot(step);
    double t = 1.0;
    bool accepted = false;
    Coefficients trial;
    double trial_obj = obj;
    for (int ls = 0; ls < 60; ++ls) {
      trial = Coefficients(beta.beta + t * Coefficients::from_stacked(step, d, data.k).beta);
      trial_obj = minimization_objective(trial, data, dpd);
      if (std::isfinite(trial_obj) && trial_obj <= obj + 1e-4 * t * slope) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) {
      // No admissible decrease along either direction; report honestly.
      res.final_gradient_norm = sup_norm(u);
      break;
    }
    const double step_size = sup_norm(t * step);
    beta = trial;
    obj = trial_obj;
    u = estimating_function(beta, data, dpd);
    if (step_size <= cfg.step_tolerance) {
      res.final_gradient_norm = sup_norm(u);
      res.converged = res.final_gradient_norm <= cfg.gradient_tolerance;
      ++iter;
      break;
    }
  }
  res.final_gradient_norm = sup_norm(u);
  if (res.final_gradient_norm <= cfg.gradient_tolerance) res.converged = true;
  res.iterations = iter;
  res.beta_hat = beta;
  res.objective_value = obj;
  if (beta.stacked().norm() > 30.0)
    res.warnings.push_back(
        "possible separation: coefficient norm exceeds 30, fitted probabilities "
        "may be degenerate");
  return res;
}

} // namespace detail

/**
 * Minimizes the divergence objective (the negative quasi loglikelihood at
 * lambda = 0) and returns the estimator with its convergence certificate
 * ||u_lambda||_inf <= gradient_tolerance.
 *
 * Clusters with zero weight or zero units carry no information and are
 * dropped up front with a warning recording the count.  Rank deficiency of
 * the design is an error, non-convergence is an honest converged=false,
 * and a coefficient norm beyond 30 attaches a separation warning.
 *
 * With multistart > 0, that many additional runs are started from seeded
 * perturbations of the configured start and the lowest objective wins;
 * the procedure stays deterministic given the config.
 */
inline FitResult fit(const SurveyDataset& data, const DpdConfig& dpd,
                     const FitConfig& cfg = FitConfig()) {
  dpd.validate();
  cfg.validate();
  data.validate();

  SurveyDataset work;
  work.d = data.d;
  work.k = data.k;
  work.intercept_explicit = data.intercept_explicit;
  int dropped = 0;
  for (const ClusterRecord& c : data.clusters) {
    if (c.weight == 0.0 || c.unit_count == 0.0) {
      ++dropped;
      continue;
    }
    work.clusters.push_back(c);
  }
  if (work.clusters.empty())
    throw input_error("no cluster with positive weight and positive size");
  detail::check_design_rank(work);

  Coefficients start = cfg.has_initial_beta ? cfg.initial_beta
                                            : Coefficients(data.d, data.k);
  if (start.beta.rows() != data.d || start.beta.cols() != data.k + 1)
    throw input_error("initial coefficients have the wrong shape");

  FitResult best = detail::fit_from_start(work, dpd, cfg, start);
  if (cfg.multistart > 0) {
    std::uint64_t state = cfg.multistart_seed;
    auto next_u01 = [&state]() {
      // splitmix64 step; small local copy to avoid an rng dependency here
      state += 0x9e3779b97f4a7c15ULL;
      std::uint64_t z = state;
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
      z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
      z ^= z >> 31;
      return static_cast<double>(z >> 11) * 0x1.0p-53;
    };
    for (int s = 0; s < cfg.multistart; ++s) {
      Coefficients pert = start;
      for (int r = 0; r < pert.beta.rows(); ++r)
        for (int j = 0; j < pert.beta.cols(); ++j)
          pert.beta(r, j) += 2.0 * next_u01() - 1.0;
      FitResult alt = detail::fit_from_start(work, dpd, cfg, pert);
      const bool better =
          (alt.converged && !best.converged) ||
          (alt.converged == best.converged && alt.objective_value < best.objective_value);
      if (better) best = alt;
    }
  }
  if (dropped > 0)
    best.warnings.push_back("dropped " + std::to_string(dropped) +
                            " degenerate cluster(s) with zero weight or zero units");
  return best;
}

} // namespace svydpd

#endif // SVYDPD_FIT_HPP
