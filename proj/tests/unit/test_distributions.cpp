#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"

using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

TEST_CASE("normal cdf hits the textbook anchors") {
  REQUIRE_THAT(svydpd::normal_cdf(0.0), WithinAbs(0.5, 1e-15));
  REQUIRE_THAT(svydpd::normal_cdf(1.959963984540054), WithinAbs(0.975, 1e-12));
  REQUIRE_THAT(svydpd::normal_cdf(-1.2815515655446004), WithinAbs(0.10, 1e-12));
}

TEST_CASE("normal quantile inverts the cdf across the range") {
  for (double p : {1e-6, 0.001, 0.025, 0.2, 0.5, 0.9, 0.975, 0.9999}) {
    const double x = svydpd::normal_quantile(p);
    REQUIRE_THAT(svydpd::normal_cdf(x), WithinAbs(p, 1e-12));
  }
  REQUIRE_THAT(svydpd::normal_quantile(0.9), WithinAbs(1.2815515655446004, 1e-10));
}

TEST_CASE("chi-square upper quantile reproduces the 3.84 critical value") {
  REQUIRE_THAT(svydpd::chi_square_quantile(1, 0.05), WithinAbs(3.84146, 5e-6));
  REQUIRE_THAT(svydpd::chi_square_quantile(2, 0.05), WithinAbs(5.991464547107979, 1e-9));
  REQUIRE_THAT(svydpd::chi_square_quantile(5, 0.01), WithinAbs(15.08627246938899, 1e-8));
}

TEST_CASE("chi-square cdf agrees with direct quadrature of the density") {
  for (double dof : {1.0, 3.0, 7.0}) {
    for (double x : {0.5, 2.0, 6.0, 12.0}) {
      const double viaq = testutil::adaptive_simpson(
          [dof](double t) { return svydpd::chi_square_pdf(dof, t); },
          dof == 1.0 ? 1e-12 : 0.0, x);
      REQUIRE_THAT(svydpd::chi_square_cdf(dof, x), WithinAbs(viaq, 1e-8));
    }
  }
}

TEST_CASE("chi-square survival and cdf are complementary") {
  for (double dof : {1.0, 4.0, 9.0})
    for (double x : {0.1, 1.0, 5.0, 20.0})
      REQUIRE_THAT(svydpd::chi_square_cdf(dof, x) + svydpd::chi_square_sf(dof, x),
                   WithinAbs(1.0, 1e-13));
}

TEST_CASE("quantile round-trips through the survival function") {
  for (double dof : {1.0, 2.0, 6.0})
    for (double alpha : {0.2, 0.05, 0.01, 0.001}) {
      const double q = svydpd::chi_square_quantile(dof, alpha);
      REQUIRE_THAT(svydpd::chi_square_sf(dof, q), WithinRel(alpha, 1e-9));
    }
}

TEST_CASE("noncentral chi-square cdf reduces to the central one at zero ncp") {
  for (double dof : {1.0, 3.0})
    for (double x : {0.7, 4.0, 11.0})
      REQUIRE_THAT(svydpd::noncentral_chi_square_cdf(dof, 0.0, x),
                   WithinAbs(svydpd::chi_square_cdf(dof, x), 1e-12));
}

TEST_CASE("noncentral chi-square cdf matches its Poisson mixture definition") {
  // Independent oracle: sum_j Poisson(j; ncp/2) * CentralChi2_{dof+2j}(x),
  // truncated far into the tail.
  const double dof = 2.0, ncp = 3.5, x = 6.0;
  double mix = 0.0;
  double logw = -ncp / 2.0;  // log of the j = 0 Poisson weight
  for (int j = 0; j < 200; ++j) {
    mix += std::exp(logw) * svydpd::chi_square_cdf(dof + 2.0 * j, x);
    logw += std::log(ncp / 2.0) - std::log(j + 1.0);
  }
  REQUIRE_THAT(svydpd::noncentral_chi_square_cdf(dof, ncp, x), WithinAbs(mix, 1e-10));
}

TEST_CASE("noncentral cdf is monotone decreasing in the noncentrality") {
  double prev = 1.1;
  for (double ncp : {0.0, 0.5, 2.0, 8.0}) {
    const double p = svydpd::noncentral_chi_square_cdf(3.0, ncp, 5.0);
    REQUIRE(p < prev);
    prev = p;
  }
}
