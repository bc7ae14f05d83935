#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"

using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

svydpd::SurveyDataset single_cluster(int d, double m, std::vector<double> counts,
                                     double w = 1.0) {
  svydpd::SurveyDataset data;
  data.d = d;
  data.k = 0;
  data.intercept_explicit = false;
  data.clusters.push_back(
      testutil::make_cluster(1, 1, w, m, std::move(counts), {1.0}));
  data.validate();
  return data;
}

} // namespace

TEST_CASE("quasi weighted loglik on a balanced two-cell cluster") {
  const svydpd::SurveyDataset data = single_cluster(1, 2.0, {1.0, 1.0});
  svydpd::Coefficients beta(1, 0);
  beta.beta.setZero();
  REQUIRE_THAT(svydpd::quasi_weighted_loglik(beta, data),
               WithinRel(2.0 * std::log(0.5), 1e-14));
}

TEST_CASE("quasi weighted loglik at beta zero counts every unit equally") {
  // At beta = 0 every category has probability 1/3, so the value is
  // N log(1/3) regardless of how the counts split.
  const svydpd::SurveyDataset data = svydpd::load_dataset(
      testutil::data_path("bmi.csv"));
  svydpd::Coefficients beta(2, 1);
  beta.beta.setZero();
  REQUIRE_THAT(svydpd::quasi_weighted_loglik(beta, data),
               WithinRel(-44348.0 * std::log(3.0), 1e-12));
}

TEST_CASE("divergence kernel on the balanced cluster at lambda one") {
  const svydpd::SurveyDataset data = single_cluster(1, 2.0, {1.0, 1.0});
  svydpd::Coefficients beta(1, 0);
  beta.beta.setZero();
  // pi = (1/2, 1/2): sum pi^2 m - 2 sum pi yhat = 2*(1/4*2) - 2*(1/2*2) = -1.
  REQUIRE_THAT(svydpd::dpd_kernel_objective(beta, data, {1.0}),
               WithinRel(-1.0, 1e-14));
}

TEST_CASE("divergence kernel refuses the lambda zero branch") {
  const svydpd::SurveyDataset data = single_cluster(1, 2.0, {1.0, 1.0});
  svydpd::Coefficients beta(1, 0);
  beta.beta.setZero();
  REQUIRE_THROWS_AS(svydpd::dpd_kernel_objective(beta, data, {0.0}),
                    svydpd::branch_error);
}

TEST_CASE("estimating function on the frozen half-lambda example") {
  const svydpd::SurveyDataset data = single_cluster(1, 2.0, {2.0, 0.0});
  svydpd::Coefficients beta(1, 0);
  beta.beta.setZero();
  const svydpd::Vector u = svydpd::estimating_function(beta, data, {0.5});
  REQUIRE(u.size() == 1);
  // pi = (1/2,1/2): (1/2)^{1/2} (1/2) (2 - 1) - cross term gives sqrt(2)/2.
  REQUIRE_THAT(u[0], WithinRel(std::sqrt(2.0) / 2.0, 1e-14));
}

TEST_CASE("estimating function equals the scaled kernel gradient") {
  // Core identity: u_lambda = -(lambda+1)^{-1} grad of the kernel objective,
  // checked by central finite differences on random instances.
  svydpd::RngStream stream(101);
  for (int done = 0; done < 50; ++done) {
    const int d = 1 + static_cast<int>(stream.uniform01() * 3);
    const int k = static_cast<int>(stream.uniform01() * 4) % 4;
    const double lambda_choices[3] = {0.25, 0.5, 1.0};
    const double lambda = lambda_choices[done % 3];
    const svydpd::SurveyDataset data =
        testutil::make_random_dataset(1000 + done, d, k, 8);
    svydpd::Coefficients beta(d, k);
    for (int r = 0; r < d; ++r)
      for (int j = 0; j <= k; ++j) beta.beta(r, j) = 0.4 * stream.normal();

    const svydpd::DpdConfig cfg{lambda};
    const svydpd::Vector u = svydpd::estimating_function(beta, data, cfg);
    const svydpd::Vector fd = testutil::fd_gradient(
        [&](const svydpd::Coefficients& b) {
          return svydpd::dpd_kernel_objective(b, data, cfg);
        },
        beta, 1e-5);
    const svydpd::Vector expect = -fd / (lambda + 1.0);
    const double scale = std::max(1.0, expect.cwiseAbs().maxCoeff());
    REQUIRE((u - expect).cwiseAbs().maxCoeff() / scale < 1e-5);
  }
}

TEST_CASE("lambda zero estimating function equals the independent score") {
  for (std::uint64_t seed : {21ULL, 22ULL, 23ULL, 24ULL, 25ULL, 26ULL, 27ULL,
                             28ULL, 29ULL, 30ULL}) {
    svydpd::RngStream stream(seed * 977);
    const int d = 1 + static_cast<int>(stream.uniform01() * 3);
    const int k = static_cast<int>(stream.uniform01() * 3);
    const svydpd::SurveyDataset data =
        testutil::make_random_dataset(seed, d, k, 12);
    svydpd::Coefficients beta(d, k);
    for (int r = 0; r < d; ++r)
      for (int j = 0; j <= k; ++j) beta.beta(r, j) = 0.6 * stream.normal();

    const svydpd::Vector u = svydpd::estimating_function(beta, data, {0.0});
    const svydpd::Vector oracle = testutil::independent_score(beta, data);
    const double scale = std::max(1.0, oracle.cwiseAbs().maxCoeff());
    REQUIRE((u - oracle).cwiseAbs().maxCoeff() / scale < 1e-12);
  }
}

TEST_CASE("lambda zero estimating function is the loglik gradient") {
  const svydpd::SurveyDataset data = testutil::make_random_dataset(33, 2, 1, 6);
  svydpd::Coefficients beta(2, 1);
  beta.beta << 0.2, -0.3, 0.1, 0.4;
  const svydpd::Vector u = svydpd::estimating_function(beta, data, {0.0});
  const svydpd::Vector fd = testutil::fd_gradient(
      [&](const svydpd::Coefficients& b) {
        return svydpd::quasi_weighted_loglik(b, data);
      },
      beta, 1e-5);
  REQUIRE((u - fd).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("minimization objective and gradient agree across both branches") {
  const svydpd::SurveyDataset data = testutil::make_random_dataset(55, 2, 2, 10);
  svydpd::Coefficients beta(2, 2);
  beta.beta.setConstant(0.15);
  for (double lambda : {0.0, 0.6}) {
    const svydpd::DpdConfig cfg{lambda};
    if (lambda == 0.0) {
      REQUIRE_THAT(svydpd::minimization_objective(beta, data, cfg),
                   WithinRel(-svydpd::quasi_weighted_loglik(beta, data), 1e-15));
    } else {
      REQUIRE_THAT(svydpd::minimization_objective(beta, data, cfg),
                   WithinRel(svydpd::dpd_kernel_objective(beta, data, cfg), 1e-15));
    }
    const svydpd::Vector g = svydpd::minimization_gradient(beta, data, cfg);
    const svydpd::Vector u = svydpd::estimating_function(beta, data, cfg);
    REQUIRE((g + (lambda + 1.0) * u).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("objectives scale linearly in the weights") {
  const svydpd::SurveyDataset base = testutil::make_random_dataset(66, 2, 1, 5, 20, true);
  svydpd::SurveyDataset scaled = base;
  for (auto& rec : scaled.clusters) rec.weight *= 3.5;
  svydpd::Coefficients beta(2, 1);
  beta.beta.setConstant(0.1);
  for (double lambda : {0.0, 0.5}) {
    const svydpd::DpdConfig cfg{lambda};
    const svydpd::Vector u1 = svydpd::estimating_function(beta, base, cfg);
    const svydpd::Vector u2 = svydpd::estimating_function(beta, scaled, cfg);
    REQUIRE((u2 - 3.5 * u1).cwiseAbs().maxCoeff() < 1e-12 * u1.cwiseAbs().maxCoeff());
  }
  REQUIRE_THAT(svydpd::quasi_weighted_loglik(beta, scaled),
               WithinRel(3.5 * svydpd::quasi_weighted_loglik(beta, base), 1e-13));
}
