#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"

using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

TEST_CASE("model probabilities match hand-computed softmax values") {
  // Two categories of interest, intercept-only contrast in the first row.
  svydpd::Coefficients beta(2, 1);
  beta.beta << std::log(2.0), 0.0, 0.0, 0.0;
  svydpd::Vector x(2);
  x << 1.0, 0.0;
  const svydpd::Vector pi = svydpd::model_probabilities(beta, x);
  REQUIRE(pi.size() == 3);
  REQUIRE_THAT(pi[0], WithinAbs(0.5, 1e-15));
  REQUIRE_THAT(pi[1], WithinAbs(0.25, 1e-15));
  REQUIRE_THAT(pi[2], WithinAbs(0.25, 1e-15));
}

TEST_CASE("model probabilities at the simulation design point") {
  svydpd::Coefficients beta(2, 2);
  beta.beta << 0.0, -0.9, 0.1, 0.6, -1.2, 0.8;
  svydpd::Vector x(3);
  x << 1.0, 0.0, 0.0;
  const svydpd::Vector pi = svydpd::model_probabilities(beta, x);
  const double denom = 2.0 + std::exp(0.6);
  REQUIRE_THAT(pi[0], WithinRel(1.0 / denom, 1e-14));
  REQUIRE_THAT(pi[1], WithinRel(std::exp(0.6) / denom, 1e-14));
  REQUIRE_THAT(pi[2], WithinRel(1.0 / denom, 1e-14));
}

TEST_CASE("probabilities are positive and sum to one on random inputs") {
  svydpd::RngStream stream(7);
  for (int trial = 0; trial < 50; ++trial) {
    const int d = 1 + static_cast<int>(stream.uniform01() * 3);
    const int k = static_cast<int>(stream.uniform01() * 3);
    svydpd::Coefficients beta(d, k);
    for (int r = 0; r < d; ++r)
      for (int j = 0; j <= k; ++j) beta.beta(r, j) = 3.0 * stream.normal();
    svydpd::Vector x(k + 1);
    x[0] = 1.0;
    for (int j = 1; j <= k; ++j) x[j] = stream.normal();
    const svydpd::Vector pi = svydpd::model_probabilities(beta, x);
    REQUIRE(pi.size() == d + 1);
    REQUIRE(pi.minCoeff() > 0.0);
    REQUIRE_THAT(pi.sum(), WithinAbs(1.0, 1e-12));
  }
}

TEST_CASE("delta matrix is diag(pi) minus pi pi^T") {
  svydpd::Vector pi(3);
  pi << 0.5, 0.3, 0.2;
  const svydpd::Matrix delta = svydpd::delta_matrix(pi);
  for (int r = 0; r < 3; ++r)
    for (int s = 0; s < 3; ++s) {
      const double expect = pi[r] * ((r == s ? 1.0 : 0.0) - pi[s]);
      REQUIRE_THAT(delta(r, s), WithinAbs(expect, 1e-15));
    }
  // Rows sum to zero because the probabilities sum to one.
  for (int r = 0; r < 3; ++r)
    REQUIRE_THAT(delta.row(r).sum(), WithinAbs(0.0, 1e-15));
}

TEST_CASE("delta_star keeps the first d rows of delta") {
  svydpd::Vector pi(4);
  pi << 0.4, 0.3, 0.2, 0.1;
  const svydpd::Matrix full = svydpd::delta_matrix(pi);
  const svydpd::Matrix star = svydpd::delta_star(pi);
  REQUIRE(star.rows() == 3);
  REQUIRE(star.cols() == 4);
  REQUIRE((star - full.topRows(3)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("delta_star_dpow entries equal pi_s^lambda (delta_rs - pi_r)") {
  svydpd::Vector pi(3);
  pi << 0.6, 0.3, 0.1;
  const double lambda = 0.7;
  const svydpd::Matrix key = svydpd::delta_star_dpow(pi, lambda);
  REQUIRE(key.rows() == 2);
  REQUIRE(key.cols() == 3);
  for (int r = 0; r < 2; ++r)
    for (int s = 0; s < 3; ++s) {
      const double expect =
          std::pow(pi[s], lambda) * ((r == s ? 1.0 : 0.0) - pi[r]);
      REQUIRE_THAT(key(r, s), WithinRel(expect, 1e-14));
    }
}

TEST_CASE("delta_star_dpow at lambda zero is exactly delta_star D^{-1}") {
  // The lambda -> 0 limit of Delta* D^{lambda-1} is the matrix with entries
  // delta_rs - pi_r; the implementation must hit it without any division.
  svydpd::Vector pi(3);
  pi << 0.25, 0.25, 0.5;
  const svydpd::Matrix key = svydpd::delta_star_dpow(pi, 0.0);
  for (int r = 0; r < 2; ++r)
    for (int s = 0; s < 3; ++s)
      REQUIRE_THAT(key(r, s), WithinAbs((r == s ? 1.0 : 0.0) - pi[r], 1e-15));
}

TEST_CASE("delta_star_dpow stays finite when a category probability underflows") {
  // A 40-unit linear predictor gap sends one category to ~1e-18; negative
  // powers of it would overflow, the factored form must not.
  svydpd::Coefficients beta(2, 0);
  beta.beta << 20.0, -20.0;
  svydpd::Vector x(1);
  x << 1.0;
  const svydpd::Vector pi = svydpd::model_probabilities(beta, x);
  for (double lambda : {0.0, 0.3, 1.0}) {
    const svydpd::Matrix key = svydpd::delta_star_dpow(pi, lambda);
    REQUIRE(key.allFinite());
  }
}

TEST_CASE("probability jacobian matches finite differences") {
  svydpd::RngStream stream(11);
  for (int trial = 0; trial < 20; ++trial) {
    const int d = 1 + static_cast<int>(stream.uniform01() * 3);
    const int k = static_cast<int>(stream.uniform01() * 3);
    svydpd::Coefficients beta(d, k);
    for (int r = 0; r < d; ++r)
      for (int j = 0; j <= k; ++j) beta.beta(r, j) = stream.normal();
    svydpd::Vector x(k + 1);
    x[0] = 1.0;
    for (int j = 1; j <= k; ++j) x[j] = stream.normal();

    const svydpd::Matrix jac = svydpd::probability_jacobian(beta, x);
    REQUIRE(jac.rows() == d * (k + 1));
    REQUIRE(jac.cols() == d + 1);

    const double h = 1e-6;
    const svydpd::Vector theta = beta.stacked();
    for (int j = 0; j < theta.size(); ++j) {
      svydpd::Vector up = theta, dn = theta;
      up[j] += h;
      dn[j] -= h;
      const svydpd::Vector pu = svydpd::model_probabilities(
          svydpd::Coefficients::from_stacked(up, d, k), x);
      const svydpd::Vector pd = svydpd::model_probabilities(
          svydpd::Coefficients::from_stacked(dn, d, k), x);
      for (int s = 0; s <= d; ++s) {
        const double fd = (pu[s] - pd[s]) / (2.0 * h);
        REQUIRE_THAT(jac(j, s), WithinAbs(fd, 5e-9));
      }
    }
  }
}

TEST_CASE("stacked layout is category-major with the intercept first") {
  svydpd::Coefficients beta(2, 2);
  beta.beta << 1.0, 2.0, 3.0, 4.0, 5.0, 6.0;
  const svydpd::Vector theta = beta.stacked();
  REQUIRE(theta.size() == 6);
  for (int i = 0; i < 6; ++i)
    REQUIRE(theta[i] == static_cast<double>(i + 1));
  // For d=2, k=2 the second-category intercept sits at stacked index 3.
  REQUIRE(theta[3] == beta.beta(1, 0));
  const svydpd::Coefficients back = svydpd::Coefficients::from_stacked(theta, 2, 2);
  REQUIRE((back.beta - beta.beta).cwiseAbs().maxCoeff() == 0.0);
}
