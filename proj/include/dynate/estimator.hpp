#ifndef DYNATE_ESTIMATOR_HPP
#define DYNATE_ESTIMATOR_HPP

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "dynate/data.hpp"
#include "dynate/errors.hpp"
#include "dynate/nuisance.hpp"
#include "dynate/stats.hpp"

// Cross-fitted doubly robust estimation of the dynamic average treatment
// effect theta = E[Y(1,1)] - E[Y(0,0)]. Per observation and path c the score
// is
//
//   psi_c = mu_c(s1) + tau_c * (nu_c(s1,s2) - mu_c(s1)) + omega_c * (y - nu_c)
//
// with inverse-probability weights tau_c = 1{A1=c1}/p1, omega_c =
// 1{A1=c1,A2=c2}/(p1*p2), where p1 is the probability of the observed-path
// first-stage arm (pi for c1=1, 1-pi otherwise) and p2 likewise for the
// second stage. Nuisances are fitted on each fold's complement and the score
// is averaged over the held-out fold; the fold means are averaged into
// theta_hat and the pooled score variance yields the confidence interval.
//
// Simple comparison estimators: the naive empirical difference of path
// means, and (weighted) inverse probability weighting with weights from a
// NuisanceProvider.

namespace dynate {

struct DrConfig {
  int k_folds = 5;
  std::uint64_t seed = 42;
  double clip_eps = 0.01;
  double level = 0.95;
  LambdaPolicy policy{};  // lambda tuning for the lasso nuisances
  // When set, nuisance fitting is skipped entirely and every prediction
  // comes from the provider (oracle or injected double).
  std::shared_ptr<const NuisanceProvider> provider;

  void validate() const {
    if (k_folds < 2) throw config_error("k_folds must be >= 2");
    if (!(level > 0.0 && level < 1.0)) throw config_error("level must lie in (0,1)");
    if (!(clip_eps > 0.0 && clip_eps < 0.5)) throw config_error("clip_eps must lie in (0,0.5)");
  }
};

struct FoldDiagnostics {
  int fold = 0;
  std::vector<TuningRecord> tuning;  // empty when a provider was injected
};

struct DrEstimate {
  double theta_hat = 0.0;
  std::vector<double> per_fold;
  double sigma_hat2 = 0.0;
  double std_error = 0.0;
  std::pair<double, double> ci{0.0, 0.0};
  double level = 0.95;
  int n = 0;
  int k_folds = 0;
  std::vector<double> scores;  // per-observation psi values, original row order
  std::vector<FoldDiagnostics> diagnostics;
};

struct SimpleEstimate {
  double theta_hat = 0.0;
  std::string method;
  int n_treated = 0;  // observations used for the treated-path term
  int n_control = 0;
  double std_error = 0.0;
};

// theta +/- z * sigma_hat / sqrt(n), z the (1+level)/2 standard-normal quantile.
inline std::pair<double, double> confidence_interval(double theta, double sigma_hat, int n,
                                                     double level) {
  if (!(level > 0.0 && level < 1.0)) throw config_error("level must lie in (0,1)");
  const double z = normal_quantile(0.5 * (1.0 + level));
  const double half = z * sigma_hat / std::sqrt(static_cast<double>(n));
  return {theta - half, theta + half};
}

// Doubly robust score for one observation and one path; propensities must
// already be clipped. For c=(1,1) and A1=0 both correction terms vanish and
// the score is exactly mu.
inline double dr_score(double y, int a1, int a2, const NuisanceValues& v, TreatmentPath c) {
  const double p1 = c.a1 ? v.pi : 1.0 - v.pi;
  const double p2 = c.a2 ? v.rho : 1.0 - v.rho;
  const double ind1 = a1 == c.a1 ? 1.0 : 0.0;
  const double ind2 = (a1 == c.a1 && a2 == c.a2) ? 1.0 : 0.0;
  return v.mu + ind1 / p1 * (v.nu - v.mu) + ind2 / (p1 * p2) * (y - v.nu);
}

inline DrEstimate estimate_dynamic_ate(const Dataset& ds, const DrConfig& cfg) {
  cfg.validate();
  const int n = static_cast<int>(ds.n());
  const DesignMatrices dm = build_design_matrices(ds);
  const FoldPlan plan = make_folds(n, cfg.k_folds, cfg.seed);

  DrEstimate est;
  est.n = n;
  est.k_folds = cfg.k_folds;
  est.level = cfg.level;
  est.scores.assign(static_cast<std::size_t>(n), 0.0);
  est.per_fold.resize(static_cast<std::size_t>(cfg.k_folds));

  for (int k = 0; k < cfg.k_folds; ++k) {
    const std::vector<int> eval = plan.fold(k);
    const std::vector<int> train = plan.complement(k);
    NuisancePredictions pred;
    FoldDiagnostics diag;
    diag.fold = k;
    if (cfg.provider) {
      pred = predictions_from_provider(*cfg.provider, ds, eval, cfg.clip_eps);
    } else {
      LambdaPolicy policy = cfg.policy;
      policy.seed = child_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(k));
      try {
        const NuisanceFits fits = fit_all_nuisances(ds, dm, train, policy);
        diag.tuning = fits.tuning;
        pred = predict_nuisances(fits, dm, eval, cfg.clip_eps);
      } catch (const estimation_error& e) {
        throw estimation_error("fold " + std::to_string(k) + ": " + e.what());
      }
    }
    double fold_sum = 0.0;
    for (std::size_t i = 0; i < eval.size(); ++i) {
      const int row = eval[i];
      const Eigen::Index ii = static_cast<Eigen::Index>(i);
      const NuisanceValues va{pred.nu[1][ii], pred.mu[1][ii], pred.pi[ii], pred.rho[1][ii]};
      const NuisanceValues vc{pred.nu[0][ii], pred.mu[0][ii], pred.pi[ii], pred.rho[0][ii]};
      const double psi = dr_score(ds.y()[row], ds.a1()[row], ds.a2()[row], va,
                                  TreatmentPath::treated()) -
                         dr_score(ds.y()[row], ds.a1()[row], ds.a2()[row], vc,
                                  TreatmentPath::control());
      est.scores[static_cast<std::size_t>(row)] = psi;
      fold_sum += psi;
    }
    est.per_fold[static_cast<std::size_t>(k)] = fold_sum / static_cast<double>(eval.size());
    est.diagnostics.push_back(std::move(diag));
  }

  double theta = 0.0;
  for (double t : est.per_fold) theta += t;
  est.theta_hat = theta / static_cast<double>(cfg.k_folds);
  double s2 = 0.0;
  for (double psi : est.scores) s2 += (psi - est.theta_hat) * (psi - est.theta_hat);
  est.sigma_hat2 = s2 / static_cast<double>(n);
  est.std_error = std::sqrt(est.sigma_hat2 / static_cast<double>(n));
  est.ci = confidence_interval(est.theta_hat, std::sqrt(est.sigma_hat2), n, cfg.level);
  return est;
}

// Naive difference of path means; its standard error is the usual two-sample
// (unpooled) one.
inline SimpleEstimate estimate_empdiff(const Dataset& ds) {
  const std::vector<int> treated =
      subgroup_indices(ds, SubgroupFilter::path(TreatmentPath::treated()));
  const std::vector<int> control =
      subgroup_indices(ds, SubgroupFilter::path(TreatmentPath::control()));
  if (treated.empty() || control.empty())
    throw estimation_error("empdiff requires observations on both paths (1,1) and (0,0)");
  auto moments = [&](const std::vector<int>& idx) {
    double m = 0.0;
    for (int i : idx) m += ds.y()[i];
    m /= static_cast<double>(idx.size());
    double v = 0.0;
    for (int i : idx) v += (ds.y()[i] - m) * (ds.y()[i] - m);
    v = idx.size() > 1 ? v / static_cast<double>(idx.size() - 1) : 0.0;
    return std::pair<double, double>{m, v};
  };
  const auto [m1, v1] = moments(treated);
  const auto [m0, v0] = moments(control);
  SimpleEstimate out;
  out.method = "empdiff";
  out.theta_hat = m1 - m0;
  out.n_treated = static_cast<int>(treated.size());
  out.n_control = static_cast<int>(control.size());
  out.std_error = std::sqrt(v1 / static_cast<double>(treated.size()) +
                            v0 / static_cast<double>(control.size()));
  return out;
}

namespace detail {

struct IpwWeights {
  Eigen::VectorXd w1, w0;  // per observation
};

inline IpwWeights ipw_weights(const Dataset& ds, const NuisanceProvider& provider) {
  const Eigen::Index n = ds.n();
  IpwWeights w;
  w.w1.setZero(n);
  w.w0.setZero(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::VectorXd s1 = ds.s1().row(i);
    const Eigen::VectorXd s2 = ds.s2().row(i);
    const NuisanceValues va = provider.evaluate(s1, s2, TreatmentPath::treated());
    const NuisanceValues vc = provider.evaluate(s1, s2, TreatmentPath::control());
    if (!(va.pi > 0.0 && va.pi < 1.0) || !(va.rho > 0.0 && va.rho < 1.0) ||
        !(vc.rho > 0.0 && vc.rho < 1.0))
      throw estimation_error("ipw weights need propensities strictly inside (0,1)");
    if (ds.a1()[i] == 1 && ds.a2()[i] == 1) w.w1[i] = 1.0 / (va.pi * va.rho);
    if (ds.a1()[i] == 0 && ds.a2()[i] == 0) w.w0[i] = 1.0 / ((1.0 - va.pi) * (1.0 - vc.rho));
  }
  return w;
}

}  // namespace detail

inline SimpleEstimate estimate_ipw(const Dataset& ds, const NuisanceProvider& provider) {
  const detail::IpwWeights w = detail::ipw_weights(ds, provider);
  const Eigen::Index n = ds.n();
  const Eigen::VectorXd contrib =
      (w.w1.array() * ds.y().array() - w.w0.array() * ds.y().array()).matrix();
  SimpleEstimate out;
  out.method = "ipw";
  out.theta_hat = contrib.mean();
  out.n_treated = static_cast<int>((w.w1.array() > 0.0).count());
  out.n_control = static_cast<int>((w.w0.array() > 0.0).count());
  const double var = (contrib.array() - out.theta_hat).square().sum() /
                     static_cast<double>(n > 1 ? n - 1 : 1);
  out.std_error = std::sqrt(var / static_cast<double>(n));
  return out;
}

inline SimpleEstimate estimate_wipw(const Dataset& ds, const NuisanceProvider& provider) {
  const detail::IpwWeights w = detail::ipw_weights(ds, provider);
  const Eigen::Index n = ds.n();
  const double sum1 = w.w1.sum(), sum0 = w.w0.sum();
  if (sum1 <= 0.0 || sum0 <= 0.0)
    throw estimation_error("wipw: a path has zero total weight");
  const double m1 = w.w1.dot(ds.y()) / sum1;
  const double m0 = w.w0.dot(ds.y()) / sum0;
  SimpleEstimate out;
  out.method = "wipw";
  out.theta_hat = m1 - m0;
  out.n_treated = static_cast<int>((w.w1.array() > 0.0).count());
  out.n_control = static_cast<int>((w.w0.array() > 0.0).count());
  // linearized (Hajek) influence for the standard error
  const double nbar1 = sum1 / static_cast<double>(n), nbar0 = sum0 / static_cast<double>(n);
  Eigen::VectorXd infl(n);
  for (Eigen::Index i = 0; i < n; ++i)
    infl[i] = w.w1[i] * (ds.y()[i] - m1) / nbar1 - w.w0[i] * (ds.y()[i] - m0) / nbar0;
  const double var =
      (infl.array() - infl.mean()).square().sum() / static_cast<double>(n > 1 ? n - 1 : 1);
  out.std_error = std::sqrt(var / static_cast<double>(n));
  return out;
}

}  // namespace dynate

#endif  // DYNATE_ESTIMATOR_HPP
