#ifndef SVYDPD_TYPES_HPP
#define SVYDPD_TYPES_HPP

#include <Eigen/Dense>

#include <cmath>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "svydpd/errors.hpp"

namespace svydpd {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/**
 * One sampled cluster: the per-category totals of its units together with
 * the design quantities attached to the whole cluster.
 *
 * Covariates are stored once per cluster (they are common to all units in
 * it).  For the default file schema the first covariate is the intercept
 * and equals 1; schemas that declare their covariate block as explicit may
 * carry arbitrary designs (e.g. one-hot group indicators).
 */
struct ClusterRecord {
  int stratum_id = 0;          // integer stratum key h (any consistent scheme)
  int cluster_id = 0;          // integer key i, unique within the stratum
  std::string stratum_label;   // original label from the data file
  std::string cluster_label;   // original label from the data file
  double weight = 1.0;         // sampling weight w_hi >= 0
  double unit_count = 0.0;     // cluster size m_hi > 0
  Vector counts;               // per-category totals, length d+1
  Vector covariates;           // x_hi, length k+1
};

/**
 * A stratified cluster sample.  Clusters keep file/generation order; the
 * (stratum, cluster) index pairs are unique.
 */
struct SurveyDataset {
  std::vector<ClusterRecord> clusters;
  int d = 0;                        // number of non-reference categories
  int k = 0;                        // number of non-intercept covariates
  bool intercept_explicit = false;  // covariate block supplied verbatim

  int n_clusters() const { return static_cast<int>(clusters.size()); }
  int num_categories() const { return d + 1; }
  int num_covariates() const { return k + 1; }
  int param_dim() const { return d * (k + 1); }

  /// Total unit count over all clusters.
  double total_units() const {
    double s = 0.0;
    for (const auto& c : clusters) s += c.unit_count;
    return s;
  }

  /// Ordered distinct stratum ids (order of first appearance).
  std::vector<int> strata() const {
    std::vector<int> out;
    std::set<int> seen;
    for (const auto& c : clusters)
      if (seen.insert(c.stratum_id).second) out.push_back(c.stratum_id);
    return out;
  }

  /// Number of clusters in stratum h.
  int stratum_size(int h) const {
    int n_h = 0;
    for (const auto& c : clusters)
      if (c.stratum_id == h) ++n_h;
    return n_h;
  }

  /**
   * Checks every structural invariant and throws input_error on the first
   * violation: per-cluster count vectors of length d+1 summing to the unit
   * count, nonnegative counts, nonnegative weights, covariate vectors of
   * length k+1 with a unit leading entry unless the covariate block was
   * declared explicit, and unique (stratum, cluster) pairs.
   */
  void validate() const {
    if (clusters.empty()) throw input_error("dataset has no clusters");
    if (d < 1) throw input_error("dataset needs at least two categories");
    if (k < 0) throw input_error("negative covariate count");
    std::set<std::pair<int, int>> keys;
    for (std::size_t idx = 0; idx < clusters.size(); ++idx) {
      const ClusterRecord& c = clusters[idx];
      const std::string where = "cluster record " + std::to_string(idx);
      if (c.counts.size() != d + 1)
        throw input_error(where + ": count vector length " +
                          std::to_string(c.counts.size()) + ", expected " +
                          std::to_string(d + 1));
      if (c.covariates.size() != k + 1)
        throw input_error(where + ": covariate vector length " +
                          std::to_string(c.covariates.size()) + ", expected " +
                          std::to_string(k + 1));
      if (c.weight < 0.0) throw input_error(where + ": negative weight");
      if (!(c.unit_count > 0.0)) throw input_error(where + ": unit count must be positive");
      double total = 0.0;
      for (int j = 0; j <= d; ++j) {
        if (c.counts[j] < 0.0) throw input_error(where + ": negative count");
        total += c.counts[j];
      }
      if (std::abs(total - c.unit_count) > 1e-6 * std::max(1.0, c.unit_count))
        throw input_error(where + ": counts sum to " + std::to_string(total) +
                          " but unit count is " + std::to_string(c.unit_count));
      if (!intercept_explicit && std::abs(c.covariates[0] - 1.0) > 0.0)
        throw input_error(where + ": leading covariate must be 1");
      if (!keys.insert({c.stratum_id, c.cluster_id}).second)
        throw input_error(where + ": duplicate (stratum, cluster) pair");
    }
  }
};

/**
 * Regression coefficients of the polytomous logistic model, one row per
 * non-reference category.  The last category is the reference and carries
 * an implicit zero row; this is fixed, not configurable.
 *
 * The flattened layout used throughout (gradients, covariance matrices,
 * hypothesis matrices) is category-major: block r of length k+1 holds the
 * derivatives with respect to row r, intercept first.
 */
struct Coefficients {
  Matrix beta;  // d x (k+1)

  Coefficients() = default;
  explicit Coefficients(Matrix b) : beta(std::move(b)) {}
  Coefficients(int d, int k) : beta(Matrix::Zero(d, k + 1)) {}

  int d() const { return static_cast<int>(beta.rows()); }
  int k() const { return static_cast<int>(beta.cols()) - 1; }

  /// Category-major flattening, row r occupying entries [r(k+1), (r+1)(k+1)).
  Vector stacked() const {
    const int kk = static_cast<int>(beta.cols());
    Vector v(beta.rows() * kk);
    for (int r = 0; r < beta.rows(); ++r)
      v.segment(r * kk, kk) = beta.row(r).transpose();
    return v;
  }

  static Coefficients from_stacked(const Vector& v, int d, int k) {
    if (v.size() != d * (k + 1))
      throw input_error("stacked coefficient vector has length " +
                        std::to_string(v.size()) + ", expected " +
                        std::to_string(d * (k + 1)));
    Matrix b(d, k + 1);
    for (int r = 0; r < d; ++r) b.row(r) = v.segment(r * (k + 1), k + 1).transpose();
    return Coefficients(std::move(b));
  }
};

/// Tuning configuration of the divergence family.
struct DpdConfig {
  double lambda = 0.0;  // robustness tuning parameter, >= 0

  void validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda))
      throw input_error("lambda must be finite and nonnegative");
  }
};

/// Compensated (Neumaier) accumulator for order-stable reductions.
class CompensatedSum {
public:
  void add(double x) {
    double t = s_ + x;
    if (std::abs(s_) >= std::abs(x))
      c_ += (s_ - t) + x;
    else
      c_ += (x - t) + s_;
    s_ = t;
  }
  double value() const { return s_ + c_; }

private:
  double s_ = 0.0;
  double c_ = 0.0;
};

/// Entrywise-compensated accumulator for matrix reductions.
class CompensatedMatrixSum {
public:
  explicit CompensatedMatrixSum(int rows, int cols)
      : s_(Matrix::Zero(rows, cols)), c_(Matrix::Zero(rows, cols)) {}

  void add(const Matrix& x) {
    for (int j = 0; j < s_.cols(); ++j)
      for (int i = 0; i < s_.rows(); ++i) {
        double t = s_(i, j) + x(i, j);
        if (std::abs(s_(i, j)) >= std::abs(x(i, j)))
          c_(i, j) += (s_(i, j) - t) + x(i, j);
        else
          c_(i, j) += (x(i, j) - t) + s_(i, j);
        s_(i, j) = t;
      }
  }
  Matrix value() const { return s_ + c_; }

private:
  Matrix s_, c_;
};

} // namespace svydpd

#endif // SVYDPD_TYPES_HPP
