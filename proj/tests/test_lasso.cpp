#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "dynate/lasso.hpp"
#include "dynate/rng.hpp"
#include "dynate/stats.hpp"
#include "oracles.hpp"

using namespace dynate;
using Catch::Matchers::WithinAbs;

TEST_CASE("soft threshold") {
  CHECK(soft_threshold(3.0, 1.0) == 2.0);
  CHECK(soft_threshold(-0.5, 1.0) == 0.0);
  CHECK(soft_threshold(-3.0, 1.0) == -2.0);
}

TEST_CASE("unpenalized gaussian fit equals least squares") {
  Rng rng(1);
  Eigen::MatrixXd x;
  Eigen::VectorXd y;
  testoracle::random_instance(rng, 20, 3, x, y, false);
  const GlmFit fit = fit_lasso(x, y, PenaltySpec{0.0, 1.0});
  const Eigen::VectorXd ols = (x.transpose() * x).ldlt().solve(x.transpose() * y);
  CHECK((fit.coefficients - ols).lpNorm<Eigen::Infinity>() < 1e-8);
  CHECK(fit.converged);
}

TEST_CASE("lambda at or above lambda_max gives the null fit") {
  Rng rng(2);
  Eigen::MatrixXd x;
  Eigen::VectorXd y;
  testoracle::random_instance(rng, 40, 5, x, y, false);
  // lambda_max on centered columns
  const double ybar = y.mean();
  double lmax = 0.0;
  for (int j = 1; j < 5; ++j) {
    const Eigen::VectorXd xc = (x.col(j).array() - x.col(j).mean()).matrix();
    lmax = std::max(lmax, 2.0 * std::fabs(xc.dot((y.array() - ybar).matrix())) / 40.0);
  }
  for (double lam : {lmax, 2.0 * lmax}) {
    const GlmFit fit = fit_lasso(x, y, PenaltySpec{lam, 1.0});
    for (int j = 1; j < 5; ++j) CHECK(fit.coefficients[j] == 0.0);
    CHECK_THAT(fit.coefficients[0], WithinAbs(ybar, 1e-12));
  }
}

TEST_CASE("gaussian objective matches refined grid-search oracle") {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    Eigen::MatrixXd x;
    Eigen::VectorXd y;
    testoracle::random_instance(rng, 20, 3, x, y, false);
    const double lambda = rng.uniform(0.05, 0.8);
    const PenaltySpec pen{lambda, 1.0};
    const GlmFit fit = fit_lasso(x, y, pen);
    const double obj_cd = gaussian_objective(x, y, fit.coefficients, pen);
    const double obj_grid = testoracle::grid_search_lasso_objective(x, y, lambda);
    CHECK(obj_cd <= obj_grid + 1e-10);
    CHECK(obj_grid - obj_cd < 1e-4);
  }
}

TEST_CASE("logistic intercept-only fit at large lambda") {
  Rng rng(4);
  Eigen::MatrixXd x;
  Eigen::VectorXd a;
  testoracle::random_instance(rng, 80, 4, x, a, true);
  const GlmFit fit = fit_logistic_lasso(x, a, PenaltySpec{10.0, 1.0});
  for (int j = 1; j < 4; ++j) CHECK(fit.coefficients[j] == 0.0);
  const double abar = a.mean();
  CHECK_THAT(fit.coefficients[0], WithinAbs(std::log(abar / (1.0 - abar)), 1e-6));
}

TEST_CASE("logistic response flip negates coefficients") {
  Rng rng(5);
  Eigen::MatrixXd x;
  Eigen::VectorXd a;
  testoracle::random_instance(rng, 60, 3, x, a, true);
  const GlmFit fit = fit_logistic_lasso(x, a, PenaltySpec{0.0, 1.0});
  const Eigen::VectorXd flipped = (1.0 - a.array()).matrix();
  const GlmFit fit2 = fit_logistic_lasso(x, flipped, PenaltySpec{0.0, 1.0});
  CHECK((fit.coefficients + fit2.coefficients).lpNorm<Eigen::Infinity>() < 1e-6);
}

TEST_CASE("unpenalized logistic fit matches Newton oracle") {
  Rng rng(6);
  for (int trial = 0; trial < 5; ++trial) {
    Eigen::MatrixXd x;
    Eigen::VectorXd a;
    testoracle::random_instance(rng, 50, 2, x, a, true);
    const GlmFit fit = fit_logistic_lasso(x, a, PenaltySpec{0.0, 1.0});
    const Eigen::VectorXd newton = testoracle::newton_logistic(x, a);
    CHECK((fit.coefficients - newton).lpNorm<Eigen::Infinity>() < 1e-6);
  }
}

TEST_CASE("degenerate logistic response is rejected") {
  Eigen::MatrixXd x(4, 2);
  x << 1, 0.5, 1, -0.5, 1, 0.25, 1, 0.1;
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(4);
  CHECK_THROWS_WITH(fit_logistic_lasso(x, ones, PenaltySpec{0.1, 1.0}),
                    Catch::Matchers::ContainsSubstring("degenerate response"));
}

TEST_CASE("lambda grid spacing and floor") {
  // data engineered so lambda_max = 1
  Eigen::MatrixXd x(2, 2);
  x << 1, 1, 1, -1;
  Eigen::VectorXd y(2);
  y << 0.5, -0.5;
  const std::vector<double> grid = lambda_grid(x, y, Family::gaussian, 3, 0.01);
  REQUIRE(grid.size() == 3);
  CHECK_THAT(grid[0], WithinAbs(1.0, 1e-12));
  CHECK_THAT(grid[1], WithinAbs(0.1, 1e-12));
  CHECK_THAT(grid[2], WithinAbs(0.01, 1e-12));

  // response uncorrelated with the single covariate: floor kicks in
  Eigen::VectorXd flat(2);
  flat << 0.7, 0.7;
  const std::vector<double> floored = lambda_grid(x, flat, Family::gaussian, 3, 0.01);
  CHECK_THAT(floored[0], WithinAbs(1e-12, 1e-18));
}

TEST_CASE("binomial grid starts at the null fit") {
  Rng rng(7);
  Eigen::MatrixXd x;
  Eigen::VectorXd a;
  testoracle::random_instance(rng, 70, 3, x, a, true);
  const std::vector<double> grid = lambda_grid(x, a, Family::binomial, 10);
  const GlmFit fit = fit_logistic_lasso(x, a, PenaltySpec{grid[0], 1.0});
  for (int j = 1; j < 3; ++j) CHECK(fit.coefficients[j] == 0.0);
}

TEST_CASE("cross validation basics") {
  Rng rng(8);
  Eigen::MatrixXd x;
  Eigen::VectorXd y;
  testoracle::random_instance(rng, 60, 4, x, y, false);

  const CvResult single = cross_validate_lambda(x, y, Family::gaussian, {0.25}, 5, 3);
  CHECK(single.lambda_star == 0.25);
  CHECK(single.curve.size() == 1);

  // strong signal: the all-null model must lose to the selected lambda
  const std::vector<double> grid = lambda_grid(x, y, Family::gaussian, 40);
  const CvResult cv = cross_validate_lambda(x, y, Family::gaussian, grid, 5, 3);
  const double loss_at_max = cv.curve.front();
  const std::size_t best =
      std::min_element(cv.curve.begin(), cv.curve.end()) - cv.curve.begin();
  CHECK(loss_at_max > cv.curve[best]);
  CHECK(cv.lambda_star < grid[0]);
}

TEST_CASE("cross validation prefers the null model on pure noise") {
  // response independent of every covariate; lambda_max should win most runs
  int at_max = 0;
  for (int seed = 0; seed < 20; ++seed) {
    Rng rng(100 + seed);
    Eigen::MatrixXd x(60, 9);
    x.col(0).setOnes();
    for (int j = 1; j < 9; ++j)
      for (int i = 0; i < 60; ++i) x(i, j) = rng.normal();
    Eigen::VectorXd y(60);
    for (int i = 0; i < 60; ++i) y[i] = rng.normal();
    const std::vector<double> grid = lambda_grid(x, y, Family::gaussian, 30);
    const CvResult cv =
        cross_validate_lambda(x, y, Family::gaussian, grid, 5, 17 + seed);
    if (cv.lambda_star == grid[0]) ++at_max;
  }
  CHECK(at_max >= 10);
}

TEST_CASE("prediction") {
  GlmFit zero;
  zero.coefficients = Eigen::VectorXd::Zero(3);
  zero.family = Family::gaussian;
  Eigen::MatrixXd x(2, 3);
  x << 1, 4, -2, 1, 1, 1;
  CHECK(predict_linear(zero, x).isZero());
  CHECK(predict_logistic(zero, x)[0] == 0.5);

  GlmFit big;
  big.coefficients = Eigen::VectorXd::Zero(2);
  big.coefficients << 700.0, 0.0;
  Eigen::MatrixXd one_row(1, 2);
  one_row << 1.0, 0.0;
  CHECK(predict_logistic(big, one_row)[0] == 1.0);
  big.coefficients << -700.0, 0.0;
  const double tail = predict_logistic(big, one_row)[0];
  CHECK(tail >= 0.0);
  CHECK(tail < 1e-300);

  GlmFit lin;
  lin.coefficients = Eigen::VectorXd::Zero(2);
  lin.coefficients << 1.0, 2.0;
  Eigen::MatrixXd row(1, 2);
  row << 1.0, 3.0;
  CHECK(predict_linear(lin, row)[0] == 7.0);

  CHECK_THROWS_AS(predict_linear(lin, x), config_error);
}

TEST_CASE("kkt conditions hold at convergence") {
  Rng rng(9);
  const SolverOptions opts;
  for (int trial = 0; trial < 20; ++trial) {
    const int m = 30 + static_cast<int>(rng.uniform01() * 120);
    const int p = 2 + static_cast<int>(rng.uniform01() * 12);
    Eigen::MatrixXd x;
    Eigen::VectorXd y;
    const bool binary = trial % 2 == 1;
    testoracle::random_instance(rng, m, p, x, y, binary);
    const Family fam = binary ? Family::binomial : Family::gaussian;
    const std::vector<double> grid = lambda_grid(x, y, fam, 8);
    const double lambda = grid[static_cast<std::size_t>(rng.uniform01() * grid.size())];
    const double mix = trial % 3 == 0 ? 0.7 : 1.0;
    const PenaltySpec pen{lambda, mix};
    const GlmFit fit = binary ? fit_logistic_lasso(x, y, pen, opts)
                              : fit_lasso(x, y, pen, opts);
    INFO("trial " << trial << " m=" << m << " p=" << p << " lambda=" << lambda);
    CHECK(fit.converged);
    CHECK(kkt_violation(x, y, fit, pen) <= 10.0 * opts.tol);
  }
}

TEST_CASE("coordinate descent never increases the objective") {
  Rng rng(10);
  Eigen::MatrixXd x;
  Eigen::VectorXd y;
  testoracle::random_instance(rng, 50, 6, x, y, false);
  const PenaltySpec pen{0.1, 1.0};
  double last = std::numeric_limits<double>::infinity();
  for (int cap = 1; cap <= 10; ++cap) {
    SolverOptions opts;
    opts.max_sweeps = cap;
    const GlmFit fit = fit_lasso(x, y, pen, opts);
    const double obj = gaussian_objective(x, y, fit.coefficients, pen);
    CHECK(obj <= last + 1e-12);
    last = obj;
  }

  Eigen::VectorXd a;
  testoracle::random_instance(rng, 50, 4, x, a, true);
  const PenaltySpec lpen{0.05, 1.0};
  last = std::numeric_limits<double>::infinity();
  for (int cap = 1; cap <= 8; ++cap) {
    SolverOptions opts;
    opts.max_irls = cap;
    const GlmFit fit = fit_logistic_lasso(x, a, lpen, opts);
    const double obj = binomial_objective(x, a, fit.coefficients, lpen);
    CHECK(obj <= last + 1e-12);
    last = obj;
  }
}

TEST_CASE("path shrinkage") {
  Rng rng(11);
  Eigen::MatrixXd x;
  Eigen::VectorXd y;
  testoracle::random_instance(rng, 80, 8, x, y, false);
  const std::vector<double> grid = lambda_grid(x, y, Family::gaussian, 25);
  const std::vector<GlmFit> path = fit_path(x, y, Family::gaussian, grid);
  double last_l1 = 0.0;
  for (std::size_t g = 0; g < path.size(); ++g) {
    const double l1 = path[g].coefficients.tail(7).lpNorm<1>();
    if (g > 0) CHECK(last_l1 <= l1 + 1e-6);
    last_l1 = l1;
  }
}

TEST_CASE("scale equivariance") {
  Rng rng(12);
  Eigen::MatrixXd x;
  Eigen::VectorXd y;
  testoracle::random_instance(rng, 40, 5, x, y, false);
  const double c = 3.7;
  const GlmFit base = fit_lasso(x, y, PenaltySpec{0.2, 1.0});
  const GlmFit scaled = fit_lasso(x, (c * y.array()).matrix(), PenaltySpec{c * 0.2, 1.0});
  CHECK((scaled.coefficients - c * base.coefficients).lpNorm<Eigen::Infinity>() < 1e-7);
}

TEST_CASE("permutation invariance") {
  Rng rng(13);
  Eigen::MatrixXd x;
  Eigen::VectorXd y;
  testoracle::random_instance(rng, 30, 4, x, y, false);
  std::vector<int> perm(30);
  std::iota(perm.begin(), perm.end(), 0);
  for (int i = 29; i > 0; --i) std::swap(perm[i], perm[static_cast<int>(rng.uniform01() * (i + 1))]);
  Eigen::MatrixXd xp(30, 4);
  Eigen::VectorXd yp(30);
  for (int i = 0; i < 30; ++i) {
    xp.row(i) = x.row(perm[i]);
    yp[i] = y[perm[i]];
  }
  const GlmFit a = fit_lasso(x, y, PenaltySpec{0.15, 1.0});
  const GlmFit b = fit_lasso(xp, yp, PenaltySpec{0.15, 1.0});
  CHECK((a.coefficients - b.coefficients).lpNorm<Eigen::Infinity>() < 1e-9);
}

TEST_CASE("solver input validation") {
  Eigen::MatrixXd x(2, 2);
  x << 1, 0.5, 1, -0.5;
  Eigen::VectorXd y(2);
  y << 1.0, std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(fit_lasso(x, y, PenaltySpec{0.1, 1.0}), schema_error);
  y << 1.0, 2.0;
  CHECK_THROWS_AS(fit_lasso(x, y, PenaltySpec{-1.0, 1.0}), config_error);
  CHECK_THROWS_AS(fit_lasso(x, y, PenaltySpec{0.1, 0.0}), config_error);
  Eigen::MatrixXd bad(2, 2);
  bad << 2, 0.5, 1, -0.5;  // column 0 is not an intercept
  CHECK_THROWS_AS(fit_lasso(bad, y, PenaltySpec{0.1, 1.0}), schema_error);
}
