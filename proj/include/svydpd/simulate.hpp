#ifndef SVYDPD_SIMULATE_HPP
#define SVYDPD_SIMULATE_HPP

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "svydpd/covariance.hpp"
#include "svydpd/fit.hpp"
#include "svydpd/inference.hpp"
#include "svydpd/overdispersion.hpp"
#include "svydpd/rng.hpp"
#include "svydpd/types.hpp"

namespace svydpd {

enum class SamplerKind { Multinomial, RandomClumped, MInflated, DirichletMultinomial };

inline const char* to_string(SamplerKind kind) {
  switch (kind) {
    case SamplerKind::Multinomial: return "multinomial";
    case SamplerKind::RandomClumped: return "random-clumped";
    case SamplerKind::MInflated: return "m-inflated";
    case SamplerKind::DirichletMultinomial: return "dirichlet-multinomial";
  }
  return "unknown";
}

inline SamplerKind sampler_kind_from_string(const std::string& name) {
  if (name == "multinomial") return SamplerKind::Multinomial;
  if (name == "random-clumped" || name == "rc") return SamplerKind::RandomClumped;
  if (name == "m-inflated" || name == "mi") return SamplerKind::MInflated;
  if (name == "dirichlet-multinomial" || name == "dm")
    return SamplerKind::DirichletMultinomial;
  throw input_error("unknown distribution '" + name +
                    "'; valid names: multinomial, random-clumped (rc), "
                    "m-inflated (mi), dirichlet-multinomial (dm)");
}

/// Within-cluster sampling law: distribution family, intra-cluster
/// correlation rho^2, and cluster size m.
struct SamplerConfig {
  SamplerKind distribution = SamplerKind::Multinomial;
  double rho_squared = 0.0;
  long m = 1;

  void validate() const {
    if (!(rho_squared >= 0.0 && rho_squared < 1.0))
      throw input_error("rho_squared must lie in [0, 1)");
    if (m < 1) throw input_error("cluster size m must be positive");
  }
};

/**
 * Draws one cluster's count vector with mean m pi and covariance
 * nu m Delta(pi), nu = 1 + rho^2 (m - 1).  rho^2 = 0 short-circuits every
 * family to the plain multinomial.
 */
inline Vector sample_cluster(const Vector& pi, const SamplerConfig& cfg,
                             RngStream& stream) {
  cfg.validate();
  if (pi.size() < 2) throw input_error("need at least two categories");
  if (cfg.rho_squared == 0.0) return stream.multinomial_counts(cfg.m, pi);
  switch (cfg.distribution) {
    case SamplerKind::Multinomial:
      return stream.multinomial_counts(cfg.m, pi);
    case SamplerKind::RandomClumped: {
      // One "leader" category Z gets a Binomial(m, rho) clump, the rest of
      // the cluster is independent; rho = sqrt(rho^2) makes the pairwise
      // unit correlation equal rho^2.
      const int z = stream.categorical(pi);
      const long clump = stream.binomial(cfg.m, std::sqrt(cfg.rho_squared));
      Vector counts = stream.multinomial_counts(cfg.m - clump, pi);
      counts[z] += static_cast<double>(clump);
      return counts;
    }
    case SamplerKind::MInflated: {
      // With probability rho^2 the whole cluster collapses onto one
      // category; otherwise it is multinomial.
      if (stream.bernoulli(cfg.rho_squared)) {
        Vector counts = Vector::Zero(pi.size());
        counts[stream.categorical(pi)] = static_cast<double>(cfg.m);
        return counts;
      }
      return stream.multinomial_counts(cfg.m, pi);
    }
    case SamplerKind::DirichletMultinomial: {
      // Concentration c = (1 - rho^2)/rho^2 is the unique choice matching
      // the target variance inflation.
      const double c = (1.0 - cfg.rho_squared) / cfg.rho_squared;
      const Vector p = stream.dirichlet(c * pi);
      return stream.multinomial_counts(cfg.m, p);
    }
  }
  throw input_error("unhandled sampler kind");
}

/**
 * Monte Carlo scenario: H strata of n_per_stratum clusters, covariates
 * x = (1, z_1..z_k) with z iid standard normal, counts drawn from the
 * configured overdispersed family at pi(beta_true), optional contamination.
 */
struct ScenarioSpec {
  int strata = 2;
  long n_per_stratum = 10;
  long m = 21;
  double rho_squared = 0.0;
  SamplerKind distribution = SamplerKind::Multinomial;
  Coefficients beta_true;
  double contamination_rate = 0.0;
  long replications = 200;
  std::vector<double> lambda_grid;
  std::uint64_t seed = 1;

  void validate() const {
    if (strata < 1) throw input_error("strata count must be positive");
    if (n_per_stratum < 1) throw input_error("n_per_stratum must be positive");
    if (m < 1) throw input_error("m must be positive");
    if (!(rho_squared >= 0.0 && rho_squared < 1.0))
      throw input_error("rho_squared must lie in [0, 1)");
    if (!(contamination_rate >= 0.0 && contamination_rate < 1.0))
      throw input_error("contamination_rate must lie in [0, 1)");
    if (beta_true.beta.size() == 0) throw input_error("beta_true is empty");
    if (lambda_grid.empty()) throw input_error("lambda_grid is empty");
    for (double l : lambda_grid)
      if (l < 0.0) throw input_error("lambda grid entries must be nonnegative");
  }

  SamplerConfig sampler() const {
    return SamplerConfig{distribution, rho_squared, m};
  }
};

namespace detail {

/// Sub-stream tag for the contamination subset draw, away from the cluster
/// index range used by generation.
inline constexpr std::uint64_t kContaminationTag = 0x636f6e74616d0000ULL;

} // namespace detail

/**
 * Generates one replication's dataset.  Cluster (h, i) draws from the RNG
 * stream seeded with mix_seed(seed, replication, global cluster index), so
 * any replication regenerates bit-identically on its own.
 */
inline SurveyDataset generate_scenario(const ScenarioSpec& spec, long replication) {
  spec.validate();
  const int d = spec.beta_true.d();
  const int k = spec.beta_true.k();
  SurveyDataset data;
  data.d = d;
  data.k = k;
  data.intercept_explicit = false;
  const SamplerConfig scfg = spec.sampler();
  long global = 0;
  for (int h = 1; h <= spec.strata; ++h) {
    for (long i = 1; i <= spec.n_per_stratum; ++i, ++global) {
      RngStream stream(
          mix_seed(spec.seed, static_cast<std::uint64_t>(replication),
                   static_cast<std::uint64_t>(global)));
      ClusterRecord rec;
      rec.stratum_id = h;
      rec.cluster_id = static_cast<int>(i);
      rec.stratum_label = std::to_string(h);
      rec.cluster_label = std::to_string(i);
      rec.weight = 1.0;
      rec.unit_count = static_cast<double>(spec.m);
      rec.covariates = Vector::Ones(k + 1);
      for (int j = 1; j <= k; ++j) rec.covariates[j] = stream.normal();
      const Vector pi = model_probabilities(spec.beta_true, rec.covariates);
      rec.counts = sample_cluster(pi, scfg, stream);
      data.clusters.push_back(std::move(rec));
    }
  }
  data.validate();
  return data;
}

/**
 * Relabels the response categories of a uniformly random
 * ceil(rate * n)-subset of clusters: new_counts[relabel[s]] = old_counts[s].
 */
inline SurveyDataset contaminate(const SurveyDataset& data, double rate,
                                 const std::vector<int>& relabel, RngStream& stream) {
  data.validate();
  if (!(rate >= 0.0 && rate < 1.0))
    throw input_error("contamination rate must lie in [0, 1)");
  const int d1 = data.num_categories();
  if (static_cast<int>(relabel.size()) != d1)
    throw input_error("relabeling permutation has the wrong length");
  std::vector<bool> seen(relabel.size(), false);
  for (int s : relabel) {
    if (s < 0 || s >= d1 || seen[s])
      throw input_error("relabeling must be a permutation of 0.." +
                        std::to_string(d1 - 1));
    seen[s] = true;
  }
  SurveyDataset out = data;
  const long n = static_cast<long>(data.clusters.size());
  const long hits = static_cast<long>(std::ceil(rate * static_cast<double>(n)));
  if (hits == 0) return out;
  // Partial Fisher-Yates: the first `hits` slots end up a uniform subset.
  std::vector<long> order(n);
  for (long i = 0; i < n; ++i) order[i] = i;
  for (long j = 0; j < hits; ++j) {
    const long span = n - j;
    long pick = j + static_cast<long>(stream.uniform01() * static_cast<double>(span));
    if (pick >= n) pick = n - 1;
    std::swap(order[j], order[pick]);
  }
  for (long j = 0; j < hits; ++j) {
    ClusterRecord& rec = out.clusters[order[j]];
    Vector permuted = Vector::Zero(d1);
    for (int s = 0; s < d1; ++s) permuted[relabel[s]] = rec.counts[s];
    rec.counts = std::move(permuted);
  }
  return out;
}

/**
 * Three-category default: observations of category 1 are recorded as
 * category 3, of 2 as 1, of 3 as 2.
 */
inline SurveyDataset contaminate(const SurveyDataset& data, double rate,
                                 RngStream& stream) {
  if (data.num_categories() != 3)
    throw input_error(
        "the default relabeling scheme is defined for exactly 3 categories; "
        "pass an explicit permutation for other shapes");
  return contaminate(data, rate, std::vector<int>{2, 0, 1}, stream);
}

namespace detail {

inline long thread_count_from_env(long work_items) {
  long threads = 1;
  if (const char* env = std::getenv("SVYDPD_THREADS")) {
    threads = std::strtol(env, nullptr, 10);
    if (threads < 1) threads = 1;
  } else {
    const unsigned hw = std::thread::hardware_concurrency();
    threads = hw > 0 ? static_cast<long>(hw) : 1;
  }
  return std::min(threads, std::max<long>(work_items, 1));
}

/**
 * Runs body(i) for i in [0, count) across SVYDPD_THREADS workers.  Each
 * index owns its output slot, so the result is identical however the work
 * is interleaved.
 */
template <typename Body>
inline void parallel_for(long count, Body&& body) {
  const long threads = thread_count_from_env(count);
  if (threads <= 1) {
    for (long i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<long> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&]() {
    for (;;) {
      const long i = next.fetch_add(1);
      if (i >= count) return;
      try {
        body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(threads));
  for (long t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

} // namespace detail

/// One lambda's row of the RMSE study table.
struct RmseRow {
  double lambda = 0.0;
  long replications_used = 0;
  long excluded = 0;
  double rmse_beta = 0.0;
  double rmse_rho_estimating = 0.0;
  double rmse_rho_moments = 0.0;
  double mean_rho_estimating = 0.0;
  double mean_rho_moments = 0.0;
};

struct RmseStudy {
  std::vector<RmseRow> rows;
  std::uint64_t seed = 0;
  long replications = 0;
};

/**
 * RMSE of the fitted coefficients and of both rho^2 estimators over the
 * scenario's replications, one row per lambda.  Non-converged fits are
 * excluded from the averages and counted.
 */
inline RmseStudy run_rmse_study(const ScenarioSpec& spec,
                                const FitConfig& fit_cfg = FitConfig{}) {
  spec.validate();
  if (spec.replications < 1)
    throw input_error("zero replications requested; nothing to tabulate");
  const std::size_t n_lambda = spec.lambda_grid.size();
  struct RepCell {
    bool used = false;
    double beta_sq = 0.0;
    double rho_ee = 0.0;
    double rho_mom = 0.0;
  };
  std::vector<std::vector<RepCell>> cells(
      static_cast<std::size_t>(spec.replications),
      std::vector<RepCell>(n_lambda));
  const Vector beta_true = spec.beta_true.stacked();
  detail::parallel_for(spec.replications, [&](long rep) {
    SurveyDataset data = generate_scenario(spec, rep);
    if (spec.contamination_rate > 0.0) {
      RngStream cstream(mix_seed(spec.seed, static_cast<std::uint64_t>(rep),
                                 detail::kContaminationTag));
      data = contaminate(data, spec.contamination_rate, cstream);
    }
    for (std::size_t li = 0; li < n_lambda; ++li) {
      const DpdConfig cfg{spec.lambda_grid[li]};
      FitResult fit_result = fit(data, cfg, fit_cfg);
      if (!fit_result.converged) continue;
      RepCell& cell = cells[static_cast<std::size_t>(rep)][li];
      cell.used = true;
      cell.beta_sq = (fit_result.beta_hat.stacked() - beta_true).squaredNorm();
      cell.rho_ee = nu_estimating_equation(fit_result.beta_hat, data, cfg,
                                           MBarPolicy::RequireEqual)
                        .rho_squared;
      cell.rho_mom =
          nu_moments(fit_result.beta_hat, data, MBarPolicy::RequireEqual).rho_squared;
    }
  });
  RmseStudy study;
  study.seed = spec.seed;
  study.replications = spec.replications;
  for (std::size_t li = 0; li < n_lambda; ++li) {
    RmseRow row;
    row.lambda = spec.lambda_grid[li];
    CompensatedSum beta_sq, ee_sq, mom_sq, ee_sum, mom_sum;
    for (long rep = 0; rep < spec.replications; ++rep) {
      const RepCell& cell = cells[static_cast<std::size_t>(rep)][li];
      if (!cell.used) {
        ++row.excluded;
        continue;
      }
      ++row.replications_used;
      beta_sq.add(cell.beta_sq);
      const double ee_err = cell.rho_ee - spec.rho_squared;
      const double mom_err = cell.rho_mom - spec.rho_squared;
      ee_sq.add(ee_err * ee_err);
      mom_sq.add(mom_err * mom_err);
      ee_sum.add(cell.rho_ee);
      mom_sum.add(cell.rho_mom);
    }
    if (row.replications_used > 0) {
      const double used = static_cast<double>(row.replications_used);
      row.rmse_beta = std::sqrt(beta_sq.value() / used);
      row.rmse_rho_estimating = std::sqrt(ee_sq.value() / used);
      row.rmse_rho_moments = std::sqrt(mom_sq.value() / used);
      row.mean_rho_estimating = ee_sum.value() / used;
      row.mean_rho_moments = mom_sum.value() / used;
    }
    study.rows.push_back(row);
  }
  return study;
}

/// One lambda's row of the level/power study table.
struct LevelPowerRow {
  double lambda = 0.0;
  long level_used = 0;
  long level_excluded = 0;
  double level = 0.0;
  double level_se = 0.0;
  bool has_power = false;
  long power_used = 0;
  long power_excluded = 0;
  double power = 0.0;
  double power_se = 0.0;
};

struct LevelPowerStudy {
  std::vector<LevelPowerRow> rows;
  std::uint64_t seed = 0;
  long replications = 0;
};

/**
 * Empirical rejection rate of the Wald test across replications: data at
 * beta_true give the observed level, data at beta_alt (when supplied) the
 * observed power.  The power arm uses replication indices shifted by the
 * replication count so the two arms never share draws.
 */
inline LevelPowerStudy run_level_power_study(
    const ScenarioSpec& spec, const LinearHypothesis& hyp,
    const Coefficients* beta_alt = nullptr, double alpha = 0.05,
    OmegaVariant variant = OmegaVariant::Empirical,
    const FitConfig& fit_cfg = FitConfig{}) {
  spec.validate();
  if (spec.replications < 1)
    throw input_error("zero replications requested; nothing to tabulate");
  hyp.validate(static_cast<int>(spec.beta_true.stacked().size()));
  const std::size_t n_lambda = spec.lambda_grid.size();
  struct RepCell {
    bool used = false;
    bool reject = false;
  };
  const bool with_power = beta_alt != nullptr;
  const long arms = with_power ? 2 : 1;
  std::vector<std::vector<RepCell>> cells(
      static_cast<std::size_t>(arms * spec.replications),
      std::vector<RepCell>(n_lambda));
  auto run_arm = [&](long slot, long rep_index, const ScenarioSpec& arm_spec) {
    SurveyDataset data = generate_scenario(arm_spec, rep_index);
    if (arm_spec.contamination_rate > 0.0) {
      RngStream cstream(mix_seed(arm_spec.seed,
                                 static_cast<std::uint64_t>(rep_index),
                                 detail::kContaminationTag));
      data = contaminate(data, arm_spec.contamination_rate, cstream);
    }
    for (std::size_t li = 0; li < n_lambda; ++li) {
      const DpdConfig cfg{arm_spec.lambda_grid[li]};
      FitResult fit_result = fit(data, cfg, fit_cfg);
      if (!fit_result.converged) continue;
      CovarianceBundle bundle;
      if (variant == OmegaVariant::Overdispersed) {
        const double nu =
            nu_estimating_equation(fit_result.beta_hat, data, cfg,
                                   MBarPolicy::RequireEqual)
                .nu;
        bundle = sandwich(fit_result.beta_hat, data, cfg, variant, {nu});
      } else {
        bundle = sandwich(fit_result.beta_hat, data, cfg, variant);
      }
      const TestResult test = wald_statistic(fit_result, bundle, hyp, alpha);
      RepCell& cell = cells[static_cast<std::size_t>(slot)][li];
      cell.used = true;
      cell.reject = test.reject;
    }
  };
  ScenarioSpec alt_spec = spec;
  if (with_power) alt_spec.beta_true = *beta_alt;
  detail::parallel_for(arms * spec.replications, [&](long slot) {
    if (slot < spec.replications) {
      run_arm(slot, slot, spec);
    } else {
      const long rep = slot - spec.replications;
      run_arm(slot, rep + spec.replications, alt_spec);
    }
  });
  LevelPowerStudy study;
  study.seed = spec.seed;
  study.replications = spec.replications;
  for (std::size_t li = 0; li < n_lambda; ++li) {
    LevelPowerRow row;
    row.lambda = spec.lambda_grid[li];
    row.has_power = with_power;
    long level_rejects = 0, power_rejects = 0;
    for (long rep = 0; rep < spec.replications; ++rep) {
      const RepCell& cell = cells[static_cast<std::size_t>(rep)][li];
      if (cell.used) {
        ++row.level_used;
        if (cell.reject) ++level_rejects;
      } else {
        ++row.level_excluded;
      }
      if (with_power) {
        const RepCell& pcell =
            cells[static_cast<std::size_t>(spec.replications + rep)][li];
        if (pcell.used) {
          ++row.power_used;
          if (pcell.reject) ++power_rejects;
        } else {
          ++row.power_excluded;
        }
      }
    }
    if (row.level_used > 0) {
      row.level = static_cast<double>(level_rejects) /
                  static_cast<double>(row.level_used);
      row.level_se = std::sqrt(row.level * (1.0 - row.level) /
                               static_cast<double>(row.level_used));
    }
    if (with_power && row.power_used > 0) {
      row.power = static_cast<double>(power_rejects) /
                  static_cast<double>(row.power_used);
      row.power_se = std::sqrt(row.power * (1.0 - row.power) /
                               static_cast<double>(row.power_used));
    }
    study.rows.push_back(row);
  }
  return study;
}

} // namespace svydpd

#endif // SVYDPD_SIMULATE_HPP
