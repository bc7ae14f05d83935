// Shared fixtures and independent oracles for the unit tests.  Everything
// here is deliberately written from first principles (own softmax, own
// quadrature, own KS statistic) so the tests do not reuse the library code
// paths they are checking.

#ifndef SVYDPD_TEST_HELPERS_HPP
#define SVYDPD_TEST_HELPERS_HPP

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "svydpd/svydpd.hpp"

namespace testutil {

inline std::string data_path(const std::string& name) {
  return std::string(SVYDPD_DATA_DIR) + "/" + name;
}

inline svydpd::ClusterRecord make_cluster(int stratum, int cluster, double w,
                                          double m, std::vector<double> counts,
                                          std::vector<double> x) {
  svydpd::ClusterRecord rec;
  rec.stratum_id = stratum;
  rec.cluster_id = cluster;
  rec.weight = w;
  rec.unit_count = m;
  rec.counts = Eigen::Map<svydpd::Vector>(counts.data(),
                                          static_cast<int>(counts.size()));
  rec.covariates =
      Eigen::Map<svydpd::Vector>(x.data(), static_cast<int>(x.size()));
  return rec;
}

/// Small synthetic dataset with multinomial counts, random normal covariates
/// and random weights; deterministic in the seed.
inline svydpd::SurveyDataset make_random_dataset(std::uint64_t seed, int d,
                                                 int k, int n_clusters,
                                                 int m = 30,
                                                 bool unit_weights = false) {
  svydpd::RngStream stream(seed);
  svydpd::Coefficients beta(d, k);
  for (int r = 0; r < d; ++r)
    for (int j = 0; j <= k; ++j) beta.beta(r, j) = 0.5 * stream.normal();

  svydpd::SurveyDataset data;
  data.d = d;
  data.k = k;
  data.intercept_explicit = false;
  for (int i = 0; i < n_clusters; ++i) {
    svydpd::ClusterRecord rec;
    rec.stratum_id = 1 + i % 2;
    rec.cluster_id = i + 1;
    rec.weight = unit_weights ? 1.0 : 0.5 + stream.uniform01();
    rec.unit_count = m;
    rec.covariates = svydpd::Vector(k + 1);
    rec.covariates[0] = 1.0;
    for (int j = 1; j <= k; ++j) rec.covariates[j] = stream.normal();
    const svydpd::Vector pi = svydpd::model_probabilities(beta, rec.covariates);
    rec.counts = stream.multinomial_counts(m, pi);
    data.clusters.push_back(std::move(rec));
  }
  data.validate();
  return data;
}

/// Central finite differences of a scalar function over the stacked
/// coefficient vector.
inline svydpd::Vector fd_gradient(
    const std::function<double(const svydpd::Coefficients&)>& f,
    const svydpd::Coefficients& beta, double h = 1e-6) {
  const svydpd::Vector theta = beta.stacked();
  svydpd::Vector grad(theta.size());
  for (int j = 0; j < theta.size(); ++j) {
    svydpd::Vector up = theta, dn = theta;
    up[j] += h;
    dn[j] -= h;
    const double fu = f(svydpd::Coefficients::from_stacked(up, beta.d(), beta.k()));
    const double fd = f(svydpd::Coefficients::from_stacked(dn, beta.d(), beta.k()));
    grad[j] = (fu - fd) / (2.0 * h);
  }
  return grad;
}

/// Independently coded quasi-likelihood score: softmax probabilities plus
/// the textbook multinomial-logit score sum_hi w (yhat - m pi) (x) x,
/// written without any library calls.
inline svydpd::Vector independent_score(const svydpd::Coefficients& beta,
                                        const svydpd::SurveyDataset& data) {
  const int d = data.d;
  const int p = data.param_dim();
  svydpd::Vector score = svydpd::Vector::Zero(p);
  for (const auto& rec : data.clusters) {
    std::vector<double> eta(d, 0.0);
    double denom = 1.0;
    for (int r = 0; r < d; ++r) {
      double dot = 0.0;
      for (int j = 0; j < rec.covariates.size(); ++j)
        dot += beta.beta(r, j) * rec.covariates[j];
      eta[r] = std::exp(dot);
      denom += eta[r];
    }
    for (int r = 0; r < d; ++r) {
      const double pi_r = eta[r] / denom;
      const double resid = rec.counts[r] - rec.unit_count * pi_r;
      for (int j = 0; j < rec.covariates.size(); ++j)
        score[r * (data.k + 1) + j] += rec.weight * resid * rec.covariates[j];
    }
  }
  return score;
}

/// Two-sided Kolmogorov-Smirnov statistic of a sample against a reference
/// CDF, plus the asymptotic critical value at a given level.
inline double ks_statistic(std::vector<double> sample,
                           const std::function<double(double)>& cdf) {
  std::sort(sample.begin(), sample.end());
  const double n = static_cast<double>(sample.size());
  double stat = 0.0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const double f = cdf(sample[i]);
    stat = std::max(stat, std::abs(f - static_cast<double>(i) / n));
    stat = std::max(stat, std::abs(static_cast<double>(i + 1) / n - f));
  }
  return stat;
}

inline double ks_critical_value(std::size_t n, double alpha) {
  // Asymptotic inverse of the Kolmogorov distribution, two-term form.
  const double c = std::sqrt(-0.5 * std::log(alpha / 2.0));
  return c / std::sqrt(static_cast<double>(n));
}

/// Adaptive Simpson quadrature, used as an independent oracle for the
/// chi-square distribution functions.
inline double adaptive_simpson(const std::function<double(double)>& f, double a,
                               double b, double tol = 1e-12, int depth = 40) {
  const double c = 0.5 * (a + b);
  const double fa = f(a), fb = f(b), fc = f(c);
  std::function<double(double, double, double, double, double, double, int)>
      go = [&](double lo, double hi, double flo, double fhi, double fmid,
               double whole, int d) -> double {
    const double mid = 0.5 * (lo + hi);
    const double lmid = 0.5 * (lo + mid), rmid = 0.5 * (mid + hi);
    const double fl = f(lmid), fr = f(rmid);
    const double left = (mid - lo) / 6.0 * (flo + 4.0 * fl + fmid);
    const double right = (hi - mid) / 6.0 * (fmid + 4.0 * fr + fhi);
    if (d <= 0 || std::abs(left + right - whole) < 15.0 * tol)
      return left + right + (left + right - whole) / 15.0;
    return go(lo, mid, flo, fmid, fl, left, d - 1) +
           go(mid, hi, fmid, fhi, fr, right, d - 1);
  };
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fc + fb);
  return go(a, b, fa, fb, fc, whole, depth);
}

struct CliResult {
  int exit_code = -1;
  std::string output;
};

/// Runs the bundled CLI with stderr folded into stdout.
inline CliResult run_cli(const std::string& args) {
  const std::string cmd = std::string(SVYDPD_CLI_PATH) + " " + args + " 2>&1";
  CliResult res;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (pipe == nullptr) return res;
  char buf[4096];
  while (std::fgets(buf, sizeof buf, pipe) != nullptr) res.output += buf;
  const int status = pclose(pipe);
  res.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return res;
}

} // namespace testutil

#endif // SVYDPD_TEST_HELPERS_HPP
