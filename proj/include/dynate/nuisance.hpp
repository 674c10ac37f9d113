#ifndef DYNATE_NUISANCE_HPP
#define DYNATE_NUISANCE_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "dynate/data.hpp"
#include "dynate/errors.hpp"
#include "dynate/lasso.hpp"

// The four working nuisance models fitted on a training index set:
//
//   nu_c(s1,s2)  stage-2 outcome mean, lasso of Y on U over the exact path c
//   mu_c(s1)     stage-1 nested mean, lasso of the imputed response U'alpha_c
//                on V over the arm c1 (imputed regression)
//   pi(s1)       stage-1 propensity P(A1=1|s1), logistic lasso of A1 on V
//   rho_c(s1,s2) stage-2 propensity P(A2=1|arm c1), logistic lasso of A2 on U
//                within the arm
//
// plus the held-out evaluation of all four with overlap clipping of the
// probabilities. Every lambda is tuned by its own K-fold cross validation
// inside the training set.

namespace dynate {

// Per-fit lambda selection settings.
struct LambdaPolicy {
  int cv_folds = 10;
  int grid_count = 100;
  double gaussian_ratio = 1e-3;
  double binomial_ratio = 1e-2;
  double mix = 1.0;            // elasticnet mixing, 1 = pure lasso
  std::uint64_t seed = 0;      // base seed for CV fold plans
  double fixed_lambda = -1.0;  // >= 0 skips cross validation entirely
  SolverOptions solver{};

  int min_subgroup() const { return std::max(20, 2 * cv_folds); }
};

struct TuningRecord {
  std::string name;
  double lambda = 0.0;
  int subgroup_size = 0;
  bool converged = false;
  int sweeps = 0;
  double kkt_residual = 0.0;
  int cv_dropped_folds = 0;
};

struct NuisanceFits {
  // arrays indexed by first-stage arm; the treated path (1,1) lives at 1 and
  // the control path (0,0) at 0
  GlmFit alpha[2];  // stage-2 outcome slopes, length d+1
  GlmFit beta[2];   // imputed stage-1 outcome slopes, length d1+1
  GlmFit gamma;     // stage-1 propensity, length d1+1
  GlmFit delta[2];  // stage-2 propensity per arm, length d+1
  std::vector<TuningRecord> tuning;
};

// Held-out evaluations, aligned with the evaluation index set.
struct NuisancePredictions {
  Eigen::VectorXd nu[2];   // per path (indexed by arm as above)
  Eigen::VectorXd mu[2];
  Eigen::VectorXd rho[2];  // P(A2=1 | arm), clipped
  Eigen::VectorXd pi;      // P(A1=1 | s1), clipped
  double clip_eps = 0.0;
};

// Evaluation contract shared by the lasso fits, the simulation oracles and
// injected test doubles: per-observation nuisance values for one path.
struct NuisanceValues {
  double nu = 0.0;   // stage-2 outcome mean under path c
  double mu = 0.0;   // stage-1 nested mean under path c
  double pi = 0.0;   // P(A1 = 1 | s1)
  double rho = 0.0;  // P(A2 = 1 | s1, s2, A1 = c1)
};

class NuisanceProvider {
 public:
  virtual ~NuisanceProvider() = default;
  virtual NuisanceValues evaluate(const Eigen::VectorXd& s1, const Eigen::VectorXd& s2,
                                  TreatmentPath path) const = 0;
};

namespace detail {

inline std::pair<GlmFit, TuningRecord> cv_fit(const Eigen::MatrixXd& x,
                                              const Eigen::VectorXd& y, Family family,
                                              const LambdaPolicy& policy,
                                              const std::string& name, int seed_tag) {
  CvResult cv;
  if (policy.fixed_lambda >= 0.0) {
    cv.lambda_star = policy.fixed_lambda;
  } else {
    const double ratio =
        family == Family::gaussian ? policy.gaussian_ratio : policy.binomial_ratio;
    const std::vector<double> grid =
        lambda_grid(x, y, family, policy.grid_count, ratio, policy.mix, policy.solver);
    cv = cross_validate_lambda(
        x, y, family, grid, policy.cv_folds,
        child_seed(policy.seed, static_cast<std::uint64_t>(seed_tag)), policy.mix,
        policy.solver);
  }
  const PenaltySpec pen{cv.lambda_star, policy.mix};
  GlmFit fit = family == Family::gaussian ? fit_lasso(x, y, pen, policy.solver)
                                          : fit_logistic_lasso(x, y, pen, policy.solver);
  TuningRecord rec{name, cv.lambda_star, static_cast<int>(x.rows()), fit.converged,
                   fit.sweeps, fit.kkt_residual, cv.dropped_folds};
  return {std::move(fit), std::move(rec)};
}

}  // namespace detail

// Lasso of Y on U over training observations that followed path c exactly.
inline GlmFit fit_stage2_outcome(const Dataset& ds, const DesignMatrices& dm,
                                 const std::vector<int>& train, TreatmentPath c,
                                 const LambdaPolicy& policy, TuningRecord* record = nullptr) {
  const std::vector<int> rows =
      intersect_sorted(train, subgroup_indices(ds, SubgroupFilter::path(c)));
  if (static_cast<int>(rows.size()) < policy.min_subgroup())
    throw estimation_error("stage-2 outcome fit: path (" + std::to_string(c.a1) + "," +
                           std::to_string(c.a2) + ") subgroup has " +
                           std::to_string(rows.size()) + " observations, need at least " +
                           std::to_string(policy.min_subgroup()));
  auto [fit, rec] = detail::cv_fit(take_rows(dm.u, rows), take_elems(ds.y(), rows),
                                   Family::gaussian, policy,
                                   c.a1 ? "alpha_treated" : "alpha_control", c.a1 ? 0 : 1);
  if (record) *record = rec;
  return fit;
}

// Lasso of the imputed response U'alpha_c on V over training observations in
// arm c1; with exact (non-imputed) responses this is identical to fit_lasso.
inline GlmFit fit_stage1_outcome_imputed(const Dataset& ds, const DesignMatrices& dm,
                                         const std::vector<int>& train, int arm,
                                         const GlmFit& alpha_fit, const LambdaPolicy& policy,
                                         TuningRecord* record = nullptr) {
  const std::vector<int> rows =
      intersect_sorted(train, subgroup_indices(ds, SubgroupFilter::arm(arm)));
  if (static_cast<int>(rows.size()) < policy.min_subgroup())
    throw estimation_error("stage-1 imputed fit: arm " + std::to_string(arm) +
                           " subgroup has " + std::to_string(rows.size()) +
                           " observations, need at least " +
                           std::to_string(policy.min_subgroup()));
  const Eigen::MatrixXd u = take_rows(dm.u, rows);
  const Eigen::VectorXd imputed = predict_linear(alpha_fit, u);
  auto [fit, rec] = detail::cv_fit(take_rows(dm.v, rows), imputed, Family::gaussian, policy,
                                   arm ? "beta_arm1" : "beta_arm0", arm ? 2 : 3);
  if (record) *record = rec;
  return fit;
}

// Logistic lasso of A1 on V over all training observations.
inline GlmFit fit_stage1_propensity(const Dataset& ds, const DesignMatrices& dm,
                                    const std::vector<int>& train, const LambdaPolicy& policy,
                                    TuningRecord* record = nullptr) {
  const Eigen::VectorXd a1 = take_elems(ds.a1(), train);
  const double m = a1.mean();
  if (m <= 0.0 || m >= 1.0)
    throw estimation_error("stage-1 propensity fit: training data contains a single arm");
  auto [fit, rec] = detail::cv_fit(take_rows(dm.v, train), a1, Family::binomial, policy,
                                   "gamma", 4);
  if (record) *record = rec;
  return fit;
}

// Logistic lasso of A2 on U over training observations in arm c1.
inline GlmFit fit_stage2_propensity(const Dataset& ds, const DesignMatrices& dm,
                                    const std::vector<int>& train, int arm,
                                    const LambdaPolicy& policy,
                                    TuningRecord* record = nullptr) {
  const std::vector<int> rows =
      intersect_sorted(train, subgroup_indices(ds, SubgroupFilter::arm(arm)));
  if (rows.empty())
    throw estimation_error("stage-2 propensity fit: arm " + std::to_string(arm) + " is empty");
  const Eigen::VectorXd a2 = take_elems(ds.a2(), rows);
  const double m = a2.mean();
  if (m <= 0.0 || m >= 1.0)
    throw estimation_error("stage-2 propensity fit: A2 is constant within arm " +
                           std::to_string(arm));
  auto [fit, rec] = detail::cv_fit(take_rows(dm.u, rows), a2, Family::binomial, policy,
                                   arm ? "delta_arm1" : "delta_arm0", arm ? 5 : 6);
  if (record) *record = rec;
  return fit;
}

// All seven fits for one training set: two alpha, two beta, gamma, two delta.
inline NuisanceFits fit_all_nuisances(const Dataset& ds, const DesignMatrices& dm,
                                      const std::vector<int>& train,
                                      const LambdaPolicy& policy) {
  NuisanceFits fits;
  fits.tuning.resize(7);
  fits.alpha[1] = fit_stage2_outcome(ds, dm, train, TreatmentPath::treated(), policy,
                                     &fits.tuning[0]);
  fits.alpha[0] = fit_stage2_outcome(ds, dm, train, TreatmentPath::control(), policy,
                                     &fits.tuning[1]);
  fits.beta[1] = fit_stage1_outcome_imputed(ds, dm, train, 1, fits.alpha[1], policy,
                                            &fits.tuning[2]);
  fits.beta[0] = fit_stage1_outcome_imputed(ds, dm, train, 0, fits.alpha[0], policy,
                                            &fits.tuning[3]);
  fits.gamma = fit_stage1_propensity(ds, dm, train, policy, &fits.tuning[4]);
  fits.delta[1] = fit_stage2_propensity(ds, dm, train, 1, policy, &fits.tuning[5]);
  fits.delta[0] = fit_stage2_propensity(ds, dm, train, 0, policy, &fits.tuning[6]);
  return fits;
}

inline void clip_probabilities(Eigen::VectorXd& p, double eps) {
  for (Eigen::Index i = 0; i < p.size(); ++i) p[i] = std::min(std::max(p[i], eps), 1.0 - eps);
}

// Evaluate the fitted nuisances on held-out rows; probabilities are clipped
// symmetrically into [clip_eps, 1 - clip_eps].
inline NuisancePredictions predict_nuisances(const NuisanceFits& fits,
                                             const DesignMatrices& dm,
                                             const std::vector<int>& eval, double clip_eps) {
  if (!(clip_eps > 0.0 && clip_eps < 0.5))
    throw config_error("clip_eps must lie in (0, 0.5)");
  const Eigen::MatrixXd u = take_rows(dm.u, eval);
  const Eigen::MatrixXd v = take_rows(dm.v, eval);
  NuisancePredictions out;
  out.clip_eps = clip_eps;
  out.pi = predict_logistic(fits.gamma, v);
  clip_probabilities(out.pi, clip_eps);
  for (int arm = 0; arm < 2; ++arm) {
    out.nu[arm] = predict_linear(fits.alpha[arm], u);
    out.mu[arm] = predict_linear(fits.beta[arm], v);
    out.rho[arm] = predict_logistic(fits.delta[arm], u);
    clip_probabilities(out.rho[arm], clip_eps);
  }
  return out;
}

// Same shape of output, but evaluated through a NuisanceProvider (oracles or
// injected doubles). Clipping is applied uniformly regardless of the source.
inline NuisancePredictions predictions_from_provider(const NuisanceProvider& provider,
                                                     const Dataset& ds,
                                                     const std::vector<int>& eval,
                                                     double clip_eps) {
  if (!(clip_eps > 0.0 && clip_eps < 0.5))
    throw config_error("clip_eps must lie in (0, 0.5)");
  const Eigen::Index m = static_cast<Eigen::Index>(eval.size());
  NuisancePredictions out;
  out.clip_eps = clip_eps;
  out.pi.resize(m);
  for (int arm = 0; arm < 2; ++arm) {
    out.nu[arm].resize(m);
    out.mu[arm].resize(m);
    out.rho[arm].resize(m);
  }
  const TreatmentPath paths[2] = {TreatmentPath::control(), TreatmentPath::treated()};
  for (Eigen::Index i = 0; i < m; ++i) {
    const Eigen::VectorXd s1 = ds.s1().row(eval[static_cast<std::size_t>(i)]);
    const Eigen::VectorXd s2 = ds.s2().row(eval[static_cast<std::size_t>(i)]);
    for (int arm = 0; arm < 2; ++arm) {
      const NuisanceValues val = provider.evaluate(s1, s2, paths[arm]);
      out.nu[arm][i] = val.nu;
      out.mu[arm][i] = val.mu;
      out.rho[arm][i] = val.rho;
      if (arm == 0) out.pi[i] = val.pi;
    }
  }
  clip_probabilities(out.pi, clip_eps);
  clip_probabilities(out.rho[0], clip_eps);
  clip_probabilities(out.rho[1], clip_eps);
  return out;
}

// Provider view over a set of lasso fits, used when IPW-style estimators run
// on real data.
class LassoProvider : public NuisanceProvider {
 public:
  explicit LassoProvider(NuisanceFits fits) : fits_(std::move(fits)) {}

  NuisanceValues evaluate(const Eigen::VectorXd& s1, const Eigen::VectorXd& s2,
                          TreatmentPath path) const override {
    Eigen::VectorXd u(1 + s1.size() + s2.size());
    u[0] = 1.0;
    u.segment(1, s1.size()) = s1;
    u.segment(1 + s1.size(), s2.size()) = s2;
    const Eigen::VectorXd v = u.head(1 + s1.size());
    NuisanceValues out;
    const int arm = path.a1;
    out.nu = fits_.alpha[arm].coefficients.dot(u);
    out.mu = fits_.beta[arm].coefficients.dot(v);
    out.pi = sigmoid(fits_.gamma.coefficients.dot(v));
    out.rho = sigmoid(fits_.delta[arm].coefficients.dot(u));
    return out;
  }

  const NuisanceFits& fits() const { return fits_; }

 private:
  NuisanceFits fits_;
};

}  // namespace dynate

#endif  // DYNATE_NUISANCE_HPP
