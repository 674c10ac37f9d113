#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "dynate/nuisance.hpp"
#include "dynate/simulation.hpp"
#include "dynate/stats.hpp"
#include "oracles.hpp"

using namespace dynate;
using Catch::Matchers::WithinAbs;

namespace {

// n observations with linear stage-2 truth y = u' alpha (+ noise), balanced
// treatment paths.
Dataset linear_truth_dataset(int n, int d1, int d2, const Eigen::VectorXd& alpha,
                             double noise_sd, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::VectorXd y(n);
  Eigen::VectorXi a1(n), a2(n);
  Eigen::MatrixXd s1(n, d1), s2(n, d2);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d1; ++j) s1(i, j) = rng.normal();
    for (int j = 0; j < d2; ++j) s2(i, j) = rng.normal();
    a1[i] = rng.bernoulli(0.5) ? 1 : 0;
    a2[i] = rng.bernoulli(0.5) ? 1 : 0;
    Eigen::VectorXd u(1 + d1 + d2);
    u[0] = 1.0;
    u.segment(1, d1) = s1.row(i);
    u.tail(d2) = s2.row(i);
    y[i] = u.dot(alpha) + noise_sd * rng.normal();
  }
  return Dataset(std::move(y), std::move(a1), std::move(a2), std::move(s1), std::move(s2));
}

std::vector<int> all_indices(const Dataset& ds) {
  std::vector<int> idx(static_cast<std::size_t>(ds.n()));
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
    std::vector<double> r(v.size());
    for (std::size_t pos = 0; pos < order.size(); ++pos)
      r[order[pos]] = static_cast<double>(pos);
    return r;
  };
  const std::vector<double> ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= n;
  mb /= n;
  double num = 0, va = 0, vb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  return num / std::sqrt(va * vb);
}

}  // namespace

TEST_CASE("stage-2 outcome fit recovers a noiseless linear truth at lambda zero") {
  const int d1 = 3, d2 = 2;
  Eigen::VectorXd alpha(1 + d1 + d2);
  alpha << 0.5, -1.0, 2.0, 0.0, 1.5, -0.5;
  const Dataset ds = linear_truth_dataset(400, d1, d2, alpha, 0.0, 21);
  const DesignMatrices dm = build_design_matrices(ds);
  LambdaPolicy policy;
  policy.fixed_lambda = 0.0;
  const GlmFit fit =
      fit_stage2_outcome(ds, dm, all_indices(ds), TreatmentPath::treated(), policy);
  CHECK((fit.coefficients - alpha).lpNorm<Eigen::Infinity>() < 1e-6);
}

TEST_CASE("stage-2 outcome fit guards small subgroups") {
  // only ~5 observations on the treated path
  Rng rng(3);
  std::vector<Observation> obs;
  for (int i = 0; i < 40; ++i) {
    const bool treated = i < 5;
    obs.push_back({rng.normal(), treated ? 1 : 0, treated ? 1 : 0, {rng.normal()},
                   {rng.normal()}});
  }
  const Dataset ds(obs);
  const DesignMatrices dm = build_design_matrices(ds);
  LambdaPolicy policy;
  CHECK_THROWS_WITH(
      fit_stage2_outcome(ds, dm, all_indices(ds), TreatmentPath::treated(), policy),
      Catch::Matchers::ContainsSubstring("path (1,1)"));
}

TEST_CASE("M2 stage-2 fit concentrates on the true support") {
  // true support of alpha_treated: intercept, S1 cols 1..3, S2 cols d1+1..d1+3
  const int d1 = 100, d2 = 50;
  int hits = 0;
  for (int seed = 0; seed < 10; ++seed) {
    const DgpModel model(DgpId::M2, d1, d2);
    const Dataset ds = model.generate_dataset(1000, 1000 + static_cast<std::uint64_t>(seed));
    const DesignMatrices dm = build_design_matrices(ds);
    LambdaPolicy policy;
    policy.seed = static_cast<std::uint64_t>(seed);
    const GlmFit fit =
        fit_stage2_outcome(ds, dm, all_indices(ds), TreatmentPath::treated(), policy);
    const std::vector<int> truth = {0, 1, 2, 3, d1 + 1, d1 + 2, d1 + 3};
    int overlap = 0;
    for (int j : truth)
      if (fit.coefficients[j] != 0.0) ++overlap;
    if (overlap >= 5) ++hits;
  }
  CHECK(hits >= 8);
}

TEST_CASE("imputed fit with alpha supported on V equals alpha at lambda zero") {
  const int d1 = 3, d2 = 2;
  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(1 + d1 + d2);
  alpha.head(1 + d1) << 0.7, -0.3, 1.1, 0.4;  // no weight on S2 columns
  const Dataset ds = linear_truth_dataset(300, d1, d2, alpha, 1.0, 31);
  const DesignMatrices dm = build_design_matrices(ds);
  GlmFit alpha_fit;
  alpha_fit.coefficients = alpha;
  alpha_fit.family = Family::gaussian;
  LambdaPolicy policy;
  policy.fixed_lambda = 0.0;
  const GlmFit beta =
      fit_stage1_outcome_imputed(ds, dm, all_indices(ds), 1, alpha_fit, policy);
  CHECK((beta.coefficients - alpha.head(1 + d1)).lpNorm<Eigen::Infinity>() < 1e-8);
}

TEST_CASE("imputed fit with exact responses is identical to a plain lasso fit") {
  // When the imputed response coincides with an observed response vector the
  // imputed path must reproduce fit_lasso bit for bit.
  Rng rng(41);
  for (int trial = 0; trial < 20; ++trial) {
    const int d1 = 2 + static_cast<int>(rng.uniform01() * 4);
    const int d2 = 1 + static_cast<int>(rng.uniform01() * 3);
    const int n = 120 + static_cast<int>(rng.uniform01() * 200);
    Eigen::VectorXd alpha(1 + d1 + d2);
    for (int j = 0; j < alpha.size(); ++j) alpha[j] = rng.uniform(-1.0, 1.0);
    GlmFit alpha_fit;
    alpha_fit.coefficients = alpha;
    alpha_fit.family = Family::gaussian;
    // observed response := the imputation itself (the zero-imputation-error
    // case), produced through the same evaluation routine so the two paths
    // see bitwise-identical numbers
    const Dataset cov_only =
        linear_truth_dataset(n, d1, d2, alpha, 0.0, 500 + static_cast<std::uint64_t>(trial));
    const DesignMatrices dm0 = build_design_matrices(cov_only);
    const Dataset ds(predict_linear(alpha_fit, dm0.u), cov_only.a1(), cov_only.a2(),
                     cov_only.s1(), cov_only.s2());
    const DesignMatrices dm = build_design_matrices(ds);

    LambdaPolicy policy;
    policy.seed = 900 + static_cast<std::uint64_t>(trial);
    const bool fixed = trial % 2 == 0;
    if (fixed) policy.fixed_lambda = rng.uniform(0.0, 0.4);
    const int arm = trial % 4 < 2 ? 1 : 0;
    const GlmFit beta =
        fit_stage1_outcome_imputed(ds, dm, all_indices(ds), arm, alpha_fit, policy);

    // reference: the same tuning protocol applied to the observed responses
    const std::vector<int> rows = subgroup_indices(ds, SubgroupFilter::arm(arm));
    const Eigen::MatrixXd v = take_rows(dm.v, rows);
    const Eigen::VectorXd resp = take_elems(ds.y(), rows);  // y == u'alpha exactly
    double lambda_star;
    if (fixed) {
      lambda_star = policy.fixed_lambda;
    } else {
      const auto grid = lambda_grid(v, resp, Family::gaussian, policy.grid_count,
                                    policy.gaussian_ratio, policy.mix, policy.solver);
      lambda_star = cross_validate_lambda(v, resp, Family::gaussian, grid, policy.cv_folds,
                                          child_seed(policy.seed, arm ? 2 : 3), policy.mix,
                                          policy.solver)
                        .lambda_star;
    }
    const GlmFit direct =
        fit_lasso(v, resp, PenaltySpec{lambda_star, policy.mix}, policy.solver);
    REQUIRE(beta.coefficients.size() == direct.coefficients.size());
    for (Eigen::Index j = 0; j < beta.coefficients.size(); ++j)
      CHECK(beta.coefficients[j] == direct.coefficients[j]);
  }
}

TEST_CASE("stage-1 propensity null model and guards") {
  Rng rng(51);
  std::vector<Observation> obs;
  for (int i = 0; i < 2000; ++i)
    obs.push_back({rng.normal(), rng.bernoulli(0.5) ? 1 : 0, rng.bernoulli(0.5) ? 1 : 0,
                   {rng.normal(), rng.normal()}, {rng.normal()}});
  const Dataset ds(obs);
  const DesignMatrices dm = build_design_matrices(ds);
  LambdaPolicy policy;
  policy.fixed_lambda = 5.0;  // large enough to zero every slope
  const GlmFit fit = fit_stage1_propensity(ds, dm, all_indices(ds), policy);
  CHECK(fit.coefficients[1] == 0.0);
  CHECK(fit.coefficients[2] == 0.0);
  CHECK(std::fabs(fit.coefficients[0]) < 0.1);

  std::vector<Observation> single;
  for (int i = 0; i < 50; ++i)
    single.push_back({0.0, 1, rng.bernoulli(0.5) ? 1 : 0, {rng.normal()}, {rng.normal()}});
  const Dataset ds1(single);
  const DesignMatrices dm1 = build_design_matrices(ds1);
  CHECK_THROWS_AS(fit_stage1_propensity(ds1, dm1, all_indices(ds1), policy),
                  estimation_error);
}

TEST_CASE("stage-1 propensity estimates a logistic truth consistently") {
  // gamma = (0.2, 1.0, -0.8); unpenalized fits should approach it with n
  const Eigen::Vector3d gamma(0.2, 1.0, -0.8);
  std::vector<double> err_small, err_large;
  for (int seed = 0; seed < 20; ++seed) {
    for (const int n : {500, 4000}) {
      Rng rng(static_cast<std::uint64_t>(7000 + seed * 2 + (n == 4000)));
      std::vector<Observation> obs;
      for (int i = 0; i < n; ++i) {
        const double x1 = rng.normal(), x2 = rng.normal();
        const double p = sigmoid(gamma[0] + gamma[1] * x1 + gamma[2] * x2);
        obs.push_back({0.0, rng.bernoulli(p) ? 1 : 0, rng.bernoulli(0.5) ? 1 : 0, {x1, x2},
                       {rng.normal()}});
      }
      const Dataset ds(obs);
      const DesignMatrices dm = build_design_matrices(ds);
      LambdaPolicy policy;
      policy.fixed_lambda = 0.0;
      const GlmFit fit = fit_stage1_propensity(ds, dm, all_indices(ds), policy);
      const double err = (fit.coefficients - Eigen::VectorXd(gamma)).norm();
      (n == 500 ? err_small : err_large).push_back(err);
    }
  }
  CHECK(median(err_large) < median(err_small));
}

TEST_CASE("stage-2 propensity guards and null model") {
  Rng rng(61);
  std::vector<Observation> obs;
  for (int i = 0; i < 200; ++i) {
    const int a1 = rng.bernoulli(0.5) ? 1 : 0;
    obs.push_back({0.0, a1, a1, {rng.normal()}, {rng.normal()}});  // A2 == A1
  }
  const Dataset ds(obs);
  const DesignMatrices dm = build_design_matrices(ds);
  LambdaPolicy policy;
  CHECK_THROWS_WITH(fit_stage2_propensity(ds, dm, all_indices(ds), 1, policy),
                    Catch::Matchers::ContainsSubstring("arm 1"));

  std::vector<Observation> fair;
  for (int i = 0; i < 400; ++i)
    fair.push_back({0.0, rng.bernoulli(0.5) ? 1 : 0, rng.bernoulli(0.5) ? 1 : 0,
                    {rng.normal()}, {rng.normal()}});
  const Dataset ds2(fair);
  const DesignMatrices dm2 = build_design_matrices(ds2);
  policy.fixed_lambda = 5.0;
  const GlmFit fit = fit_stage2_propensity(ds2, dm2, all_indices(ds2), 0, policy);
  CHECK(std::fabs(fit.coefficients[0]) < 0.25);
  CHECK(fit.coefficients.tail(2).isZero());
}

TEST_CASE("M2 stage-2 propensity ranks held-out observations") {
  const DgpModel model(DgpId::M2, 20, 10);
  const Dataset ds = model.generate_dataset(2000, 99);
  const DesignMatrices dm = build_design_matrices(ds);
  std::vector<int> train, heldout;
  for (int i = 0; i < 1000; ++i) train.push_back(i);
  for (int i = 1000; i < 2000; ++i) heldout.push_back(i);
  LambdaPolicy policy;
  policy.seed = 5;
  const GlmFit fit = fit_stage2_propensity(ds, dm, train, 1, policy);
  std::vector<double> pred, truth;
  for (int i : heldout) {
    const Eigen::VectorXd s1 = ds.s1().row(i), s2 = ds.s2().row(i);
    Eigen::VectorXd u(1 + 20 + 10);
    u[0] = 1.0;
    u.segment(1, 20) = s1;
    u.tail(10) = s2;
    pred.push_back(sigmoid(fit.coefficients.dot(u)));
    truth.push_back(model.rho(1, s1, s2));
  }
  CHECK(spearman(pred, truth) > 0.5);
}

TEST_CASE("predict_nuisances clips and validates") {
  const int d1 = 1, d2 = 1;
  std::vector<Observation> obs = {{0.0, 1, 1, {10.0}, {10.0}}, {0.0, 0, 0, {-10.0}, {-10.0}}};
  const Dataset ds(obs);
  const DesignMatrices dm = build_design_matrices(ds);
  NuisanceFits fits;
  for (int arm = 0; arm < 2; ++arm) {
    fits.alpha[arm].coefficients = Eigen::VectorXd::Zero(1 + d1 + d2);
    fits.beta[arm].coefficients = Eigen::VectorXd::Zero(1 + d1);
    fits.delta[arm].coefficients = Eigen::VectorXd::Zero(1 + d1 + d2);
    fits.delta[arm].family = Family::binomial;
  }
  fits.gamma.coefficients = Eigen::VectorXd::Zero(1 + d1);
  fits.gamma.family = Family::binomial;

  // all-zero fits: nu = mu = 0, pi = rho = 0.5
  NuisancePredictions pred = predict_nuisances(fits, dm, {0, 1}, 0.01);
  CHECK(pred.nu[1].isZero());
  CHECK(pred.mu[0].isZero());
  CHECK(pred.pi[0] == 0.5);
  CHECK(pred.rho[1][1] == 0.5);

  // a steep slope must be clipped into [eps, 1-eps]
  fits.gamma.coefficients << 0.0, 0.9;  // logit = +-9 at s1 = +-10
  pred = predict_nuisances(fits, dm, {0, 1}, 0.01);
  CHECK(pred.pi[0] == 0.99);
  CHECK(pred.pi[1] == 0.01);

  CHECK_THROWS_AS(predict_nuisances(fits, dm, {0, 1}, 0.6), config_error);
  CHECK_THROWS_AS(predict_nuisances(fits, dm, {0, 1}, 0.0), config_error);
}

TEST_CASE("held-out responses never influence predictions") {
  const DgpModel model(DgpId::M2, 6, 3);
  const Dataset ds = model.generate_dataset(400, 7);
  std::vector<int> train, eval;
  for (int i = 0; i < 300; ++i) train.push_back(i);
  for (int i = 300; i < 400; ++i) eval.push_back(i);

  // clone with corrupted held-out outcomes and treatments
  Eigen::VectorXd y = ds.y();
  Eigen::VectorXi a1 = ds.a1(), a2 = ds.a2();
  for (int i : eval) {
    y[i] += 100.0;
    a1[i] = 1 - a1[i];
    a2[i] = 1 - a2[i];
  }
  const Dataset corrupted(y, a1, a2, ds.s1(), ds.s2());

  LambdaPolicy policy;
  policy.seed = 11;
  const DesignMatrices dm = build_design_matrices(ds);
  const DesignMatrices dmc = build_design_matrices(corrupted);
  const NuisanceFits f1 = fit_all_nuisances(ds, dm, train, policy);
  const NuisanceFits f2 = fit_all_nuisances(corrupted, dmc, train, policy);
  const NuisancePredictions p1 = predict_nuisances(f1, dm, eval, 0.01);
  const NuisancePredictions p2 = predict_nuisances(f2, dmc, eval, 0.01);
  CHECK(p1.pi == p2.pi);
  for (int arm = 0; arm < 2; ++arm) {
    CHECK(p1.nu[arm] == p2.nu[arm]);
    CHECK(p1.mu[arm] == p2.mu[arm]);
    CHECK(p1.rho[arm] == p2.rho[arm]);
  }
}

TEST_CASE("subset fitting equals indicator-masked rows up to loss normalization") {
  // Masking rows of the design (including the intercept entry) zeroes their
  // squared-loss contribution, so the subset fit at lambda*M/m matches the
  // masked-objective minimizer at lambda. The masked objective is checked by
  // grid search because its design has no all-ones intercept column.
  Rng rng(71);
  const int m_all = 12, m_sub = 7;
  Eigen::MatrixXd x(m_all, 3);
  Eigen::VectorXd y(m_all);
  x.col(0).setOnes();
  for (int i = 0; i < m_all; ++i) {
    x(i, 1) = rng.normal();
    x(i, 2) = rng.normal();
    y[i] = 0.5 + x(i, 1) - 0.7 * x(i, 2) + 0.3 * rng.normal();
  }
  Eigen::MatrixXd x_masked = x;
  Eigen::VectorXd y_masked = y;
  for (int i = m_sub; i < m_all; ++i) {
    x_masked.row(i).setZero();
    y_masked[i] = 0.0;
  }
  const double lambda = 0.2;
  const PenaltySpec sub_pen{lambda * m_all / static_cast<double>(m_sub), 1.0};
  const GlmFit sub_fit = fit_lasso(x.topRows(m_sub), y.head(m_sub), sub_pen);

  const double masked_obj =
      testoracle::grid_search_lasso_objective(x_masked, y_masked, lambda, 6.0, 25, 4);
  const double sub_obj_in_masked_problem =
      (y_masked - x_masked * sub_fit.coefficients).squaredNorm() / m_all +
      lambda * sub_fit.coefficients.tail(2).lpNorm<1>();
  CHECK_THAT(sub_obj_in_masked_problem, WithinAbs(masked_obj, 1e-6));
}

TEST_CASE("lasso provider mirrors matrix predictions") {
  const DgpModel model(DgpId::M2, 6, 3);
  const Dataset ds = model.generate_dataset(400, 17);
  const DesignMatrices dm = build_design_matrices(ds);
  LambdaPolicy policy;
  policy.seed = 3;
  std::vector<int> train = all_indices(ds);
  const NuisanceFits fits = fit_all_nuisances(ds, dm, train, policy);
  const LassoProvider provider(fits);
  const NuisancePredictions pred = predict_nuisances(fits, dm, {5, 77}, 0.01);
  for (int k = 0; k < 2; ++k) {
    const int row = k == 0 ? 5 : 77;
    const NuisanceValues v =
        provider.evaluate(ds.s1().row(row), ds.s2().row(row), TreatmentPath::treated());
    CHECK_THAT(v.nu, WithinAbs(pred.nu[1][k], 1e-12));
    CHECK_THAT(v.mu, WithinAbs(pred.mu[1][k], 1e-12));
  }
}
