#ifndef DYNATE_LASSO_HPP
#define DYNATE_LASSO_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dynate/data.hpp"
#include "dynate/errors.hpp"
#include "dynate/stats.hpp"

// L1-penalized solvers for squared and logistic loss. The objective is
//
//   gaussian:  (1/M) sum_i (y_i - x_i' b)^2 + lambda * P(b)
//   binomial:  (1/M) sum_i [-a_i x_i' b + log(1 + exp(x_i' b))] + lambda * P(b)
//
// with P(b) = mix * ||b||_1 + (1-mix)/2 * ||b||_2^2 over the non-intercept
// coordinates; column 0 of the design is the intercept and is never
// penalized. Columns are centered and scaled internally for conditioning
// only -- the penalty applies to the original-scale coefficients, so the
// reported fit satisfies the KKT conditions of the objective above as
// stated, on the caller's scale.
//
// Gaussian fits run cyclic coordinate descent on a precomputed Gram matrix
// (cheap lambda paths under warm starts); binomial fits run proximal Newton:
// an IRLS outer loop with a penalized weighted least-squares inner loop and
// step halving so the penalized objective never increases.

namespace dynate {

enum class Family { gaussian, binomial };

inline double soft_threshold(double z, double t) {
  if (z > t) return z - t;
  if (z < -t) return z + t;
  return 0.0;
}

struct PenaltySpec {
  double lambda = 0.0;
  double mix = 1.0;  // 1 = pure lasso, (0,1) blends in a ridge term

  void validate() const {
    if (!(lambda >= 0.0)) throw config_error("penalty lambda must be >= 0");
    if (!(mix > 0.0 && mix <= 1.0)) throw config_error("penalty mix must lie in (0, 1]");
  }
};

struct SolverOptions {
  double tol = 1e-7;        // max coefficient change per sweep, standardized scale
  int max_sweeps = 100000;  // coordinate-descent sweep cap
  int max_irls = 100;       // outer proximal-Newton iteration cap (binomial)
  bool standardize = true;  // scale columns to unit sd internally
};

struct GlmFit {
  Eigen::VectorXd coefficients;  // original scale, intercept at entry 0
  double lambda_used = 0.0;
  double penalty_mix = 1.0;
  int sweeps = 0;
  bool converged = false;
  Family family = Family::gaussian;
  double kkt_residual = 0.0;  // audit value, see kkt_violation
};

inline double gaussian_objective(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                 const Eigen::VectorXd& coef, const PenaltySpec& pen) {
  const double m = static_cast<double>(x.rows());
  const double rss = (y - x * coef).squaredNorm() / m;
  double l1 = 0.0, l2 = 0.0;
  for (Eigen::Index j = 1; j < coef.size(); ++j) {
    l1 += std::fabs(coef[j]);
    l2 += coef[j] * coef[j];
  }
  return rss + pen.lambda * (pen.mix * l1 + 0.5 * (1.0 - pen.mix) * l2);
}

inline double binomial_objective(const Eigen::MatrixXd& x, const Eigen::VectorXd& a,
                                 const Eigen::VectorXd& coef, const PenaltySpec& pen) {
  const double m = static_cast<double>(x.rows());
  const Eigen::VectorXd eta = x * coef;
  double loss = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) loss += -a[i] * eta[i] + log1pexp(eta[i]);
  loss /= m;
  double l1 = 0.0, l2 = 0.0;
  for (Eigen::Index j = 1; j < coef.size(); ++j) {
    l1 += std::fabs(coef[j]);
    l2 += coef[j] * coef[j];
  }
  return loss + pen.lambda * (pen.mix * l1 + 0.5 * (1.0 - pen.mix) * l2);
}

// Maximum stationarity violation of a fit, on the caller's scale, computed
// from the raw inputs. For penalized coordinates the loss gradient is
//   gaussian: g_j = -(2/M) x_j' (y - x b),  binomial: g_j = (1/M) x_j' (p - a)
// and the residual is |g_j + lambda*(mix*sign(b_j) + (1-mix) b_j)| for
// active b_j, max(|g_j| - lambda*mix, 0) (after removing the ridge part) for
// zero b_j, and |g_0| for the intercept.
inline double kkt_violation(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                            const GlmFit& fit, const PenaltySpec& pen) {
  const double m = static_cast<double>(x.rows());
  Eigen::VectorXd grad;
  if (fit.family == Family::gaussian) {
    grad = -2.0 / m * (x.transpose() * (y - x * fit.coefficients));
  } else {
    Eigen::VectorXd p = x * fit.coefficients;
    for (Eigen::Index i = 0; i < p.size(); ++i) p[i] = sigmoid(p[i]);
    grad = x.transpose() * (p - y) / m;
  }
  double worst = std::fabs(grad[0]);
  for (Eigen::Index j = 1; j < grad.size(); ++j) {
    const double b = fit.coefficients[j];
    const double g = grad[j] + pen.lambda * (1.0 - pen.mix) * b;
    if (b != 0.0) {
      worst = std::max(worst, std::fabs(g + pen.lambda * pen.mix * (b > 0 ? 1.0 : -1.0)));
    } else {
      worst = std::max(worst, std::max(std::fabs(g) - pen.lambda * pen.mix, 0.0));
    }
  }
  return worst;
}

namespace detail {

// Column means/scales used for internal preconditioning. Entry 0 (the
// intercept column) is left untouched; constant columns get scale 1.
struct ColumnScale {
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;
};

// Minimize the penalized quadratic 0.5 b'Gb - rhs'b + sum l1_j |b_j| over a
// small dense system by iterating sign-fixed Newton solves: each solve fixes
// sign(b_j) and steps toward its solution only up to the first penalized
// coordinate that crosses zero, which then leaves the active set. Within
// each segment the sign-fixed objective equals the true piecewise one, so
// every step descends; the loop terminates after at most k removals.
// Entries with l1_j = 0 (the intercept) are never removed. `b` holds the
// warm start and receives the result.
inline void sign_fixed_quadratic(const Eigen::MatrixXd& g, const Eigen::VectorXd& rhs,
                                 const Eigen::VectorXd& l1, Eigen::VectorXd& b) {
  const Eigen::Index k0 = b.size();
  std::vector<Eigen::Index> act;
  for (Eigen::Index j = 0; j < k0; ++j) act.push_back(j);
  const int max_rounds = std::min<int>(static_cast<int>(k0) + 2, 12);
  for (int round = 0; round < max_rounds; ++round) {
    const Eigen::Index k = static_cast<Eigen::Index>(act.size());
    if (k == 0) return;
    Eigen::MatrixXd gs(k, k);
    Eigen::VectorXd rs(k);
    for (Eigen::Index r = 0; r < k; ++r) {
      const Eigen::Index jr = act[static_cast<std::size_t>(r)];
      for (Eigen::Index c = 0; c < k; ++c) gs(r, c) = g(jr, act[static_cast<std::size_t>(c)]);
      const double sigma = b[jr] > 0 ? 1.0 : (b[jr] < 0 ? -1.0 : 0.0);
      rs[r] = rhs[jr] - l1[jr] * sigma;
    }
    const Eigen::VectorXd sol = gs.ldlt().solve(rs);
    if (!sol.allFinite()) return;
    double t = 1.0;
    for (Eigen::Index r = 0; r < k; ++r) {
      const Eigen::Index j = act[static_cast<std::size_t>(r)];
      if (l1[j] == 0.0 || b[j] == 0.0) continue;
      const bool flips = (b[j] > 0 && sol[r] <= 0.0) || (b[j] < 0 && sol[r] >= 0.0);
      if (flips) t = std::min(t, b[j] / (b[j] - sol[r]));
    }
    if (t >= 1.0) {
      for (Eigen::Index r = 0; r < k; ++r) b[act[static_cast<std::size_t>(r)]] = sol[r];
      return;
    }
    std::vector<Eigen::Index> next;
    for (Eigen::Index r = 0; r < k; ++r) {
      const Eigen::Index j = act[static_cast<std::size_t>(r)];
      const double moved = b[j] + t * (sol[r] - b[j]);
      const bool penalized = l1[j] > 0.0;
      const bool crossed = penalized && b[j] != 0.0 &&
                           ((b[j] > 0 && moved <= 1e-300) || (b[j] < 0 && moved >= -1e-300));
      b[j] = crossed ? 0.0 : moved;
      if (!crossed) next.push_back(j);
    }
    act = std::move(next);
  }
}

inline ColumnScale column_scale(const Eigen::MatrixXd& x, bool standardize) {
  const Eigen::Index p = x.cols();
  ColumnScale cs;
  cs.mean = Eigen::VectorXd::Zero(p);
  cs.scale = Eigen::VectorXd::Ones(p);
  for (Eigen::Index j = 1; j < p; ++j) {
    cs.mean[j] = x.col(j).mean();
    if (standardize) {
      const double var = (x.col(j).array() - cs.mean[j]).square().mean();
      if (var > 0.0) cs.scale[j] = std::sqrt(var);
    }
  }
  return cs;
}

inline void check_design(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  if (x.rows() < 1) throw config_error("design matrix needs at least one row");
  if (x.rows() != y.size()) throw schema_error("design and response disagree on rows");
  if (!x.allFinite() || !y.allFinite()) throw schema_error("non-finite values in solver input");
  if (x.cols() < 1 || (x.col(0).array() != 1.0).any())
    throw schema_error("design column 0 must be the all-ones intercept column");
}

// Gaussian solver state shared across a lambda path: predictors centered and
// scaled, response centered, Gram matrix precomputed. The intercept is
// recovered in closed form afterwards.
class GaussianWorkspace {
 public:
  GaussianWorkspace(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                    const SolverOptions& opts)
      : x_(&x), y_(&y), opts_(opts), p_(x.cols()) {
    check_design(x, y);
    cs_ = column_scale(x, opts.standardize);
    const Eigen::Index m = x.rows();
    xc_.resize(m, p_ - 1);
    for (Eigen::Index j = 1; j < p_; ++j)
      xc_.col(j - 1) = (x.col(j).array() - cs_.mean[j]) / cs_.scale[j];
    ybar_ = y.mean();
    yc_ = y.array() - ybar_;
    const double md = static_cast<double>(m);
    gram_ = xc_.transpose() * xc_ / md;
    corr_ = xc_.transpose() * yc_ / md;
  }

  // Smallest lambda with an all-zero slope solution (pure-lasso scale).
  double lambda_max(double mix) const {
    double worst = 0.0;
    for (Eigen::Index j = 0; j < p_ - 1; ++j)
      worst = std::max(worst, 2.0 * cs_.scale[j + 1] * std::fabs(corr_[j]));
    return worst / mix;
  }

  // Coordinate descent at one penalty, warm started from `beta_std`
  // (standardized slopes, resized/zeroed if empty). Returns sweeps used.
  int solve(const PenaltySpec& pen, Eigen::VectorXd& beta_std, bool& change_ok) const {
    const Eigen::Index q = p_ - 1;
    if (beta_std.size() != q) beta_std = Eigen::VectorXd::Zero(q);
    Eigen::VectorXd gb = gram_ * beta_std;  // maintained as gram * beta
    std::vector<Eigen::Index> active;
    int sweeps = 0;
    bool cd_stalled = false;
    change_ok = false;

    auto update_coord = [&](Eigen::Index j, double& max_change) {
      const double qjj = gram_(j, j);
      const double sj = cs_.scale[j + 1];
      const double rho = corr_[j] - gb[j] + qjj * beta_std[j];
      double bnew;
      const double denom = 2.0 * qjj + pen.lambda * (1.0 - pen.mix) / (sj * sj);
      if (denom <= 0.0) {
        bnew = 0.0;  // zero-variance column
      } else {
        bnew = soft_threshold(2.0 * rho, pen.lambda * pen.mix / sj) / denom;
      }
      const double delta = bnew - beta_std[j];
      if (delta != 0.0) {
        gb += gram_.col(j) * delta;
        beta_std[j] = bnew;
        max_change = std::max(max_change, std::fabs(delta));
      }
    };

    auto exact_active_step = [&]() {
      active.clear();
      for (Eigen::Index j = 0; j < q; ++j)
        if (beta_std[j] != 0.0) active.push_back(j);
      const Eigen::Index k = static_cast<Eigen::Index>(active.size());
      if (k < 1 || k > 160) return false;
      Eigen::MatrixXd g(k, k);
      Eigen::VectorXd rhs(k), l1(k), b(k);
      for (Eigen::Index r = 0; r < k; ++r) {
        const Eigen::Index jr = active[static_cast<std::size_t>(r)];
        const double sj = cs_.scale[jr + 1];
        for (Eigen::Index c = 0; c < k; ++c)
          g(r, c) = 2.0 * gram_(jr, active[static_cast<std::size_t>(c)]);
        g(r, r) += pen.lambda * (1.0 - pen.mix) / (sj * sj);
        rhs[r] = 2.0 * corr_[jr];
        l1[r] = pen.lambda * pen.mix / sj;
        b[r] = beta_std[jr];
      }
      sign_fixed_quadratic(g, rhs, l1, b);
      for (Eigen::Index r = 0; r < k; ++r) beta_std[active[static_cast<std::size_t>(r)]] = b[r];
      gb.setZero();
      for (Eigen::Index j = 0; j < q; ++j)
        if (beta_std[j] != 0.0) gb += gram_.col(j) * beta_std[j];
      return true;
    };

    while (sweeps < opts_.max_sweeps) {
      // full sweep lets coordinates enter and leave
      double max_change = 0.0;
      for (Eigen::Index j = 0; j < q; ++j) update_coord(j, max_change);
      ++sweeps;
      if (max_change <= opts_.tol &&
          kkt_from_gram(pen, beta_std) <= 9.0 * opts_.tol) {
        change_ok = true;
        break;
      }
      if (max_change <= opts_.tol) continue;
      // iterate the active set; if plain coordinate descent stalls, take an
      // exact sign-constrained Newton step on the active coordinates
      active.clear();
      for (Eigen::Index j = 0; j < q; ++j)
        if (beta_std[j] != 0.0) active.push_back(j);
      int rounds = cd_stalled ? 1 : std::clamp<int>(static_cast<int>(active.size()) / 4, 8, 40);
      bool stable = false;
      while (rounds-- > 0 && sweeps < opts_.max_sweeps) {
        double ac = 0.0;
        for (Eigen::Index j : active) update_coord(j, ac);
        ++sweeps;
        if (ac <= opts_.tol) {
          stable = true;
          break;
        }
      }
      if (!stable) {
        cd_stalled = true;
        if (sweeps < opts_.max_sweeps && exact_active_step()) ++sweeps;
      }
    }
    return sweeps;
  }

  // KKT residual on the caller's scale computed from the Gram system
  // (matches kkt_violation up to roundoff; the intercept is exact by
  // centering).
  double kkt_from_gram(const PenaltySpec& pen, const Eigen::VectorXd& beta_std) const {
    Eigen::VectorXd resid_corr = corr_ - gram_ * beta_std;
    double worst = 0.0;
    for (Eigen::Index j = 0; j < p_ - 1; ++j) {
      const double sj = cs_.scale[j + 1];
      const double g = -2.0 * sj * resid_corr[j] + pen.lambda * (1.0 - pen.mix) * beta_std[j] / sj;
      if (beta_std[j] != 0.0) {
        worst = std::max(worst, std::fabs(g + pen.lambda * pen.mix * (beta_std[j] > 0 ? 1.0 : -1.0)));
      } else {
        worst = std::max(worst, std::max(std::fabs(g) - pen.lambda * pen.mix, 0.0));
      }
    }
    return worst;
  }

  GlmFit finalize(const PenaltySpec& pen, const Eigen::VectorXd& beta_std, int sweeps,
                  bool change_ok) const {
    GlmFit fit;
    fit.family = Family::gaussian;
    fit.lambda_used = pen.lambda;
    fit.penalty_mix = pen.mix;
    fit.sweeps = sweeps;
    fit.coefficients = Eigen::VectorXd::Zero(p_);
    double shift = 0.0;
    for (Eigen::Index j = 1; j < p_; ++j) {
      fit.coefficients[j] = beta_std[j - 1] / cs_.scale[j];
      shift += fit.coefficients[j] * cs_.mean[j];
    }
    fit.coefficients[0] = ybar_ - shift;
    fit.kkt_residual = kkt_violation(*x_, *y_, fit, pen);
    fit.converged = change_ok && fit.kkt_residual <= 10.0 * opts_.tol;
    return fit;
  }

  const Eigen::MatrixXd& centered() const { return xc_; }
  const ColumnScale& scale() const { return cs_; }

 private:
  const Eigen::MatrixXd* x_;
  const Eigen::VectorXd* y_;
  SolverOptions opts_;
  Eigen::Index p_;
  ColumnScale cs_;
  Eigen::MatrixXd xc_;
  Eigen::VectorXd yc_;
  Eigen::MatrixXd gram_;
  Eigen::VectorXd corr_;
  double ybar_ = 0.0;
};

// Warm-start context threaded through a lambda path: the previous penalty
// and the loss gradient at its solution, which drives sequential
// strong-rule screening of the working set.
struct PathState {
  double prev_lambda = -1.0;
  Eigen::VectorXd prev_grad;
};

// Binomial proximal-Newton state; predictors standardized with an explicit
// intercept coordinate.
class BinomialWorkspace {
 public:
  BinomialWorkspace(const Eigen::MatrixXd& x, const Eigen::VectorXd& a,
                    const SolverOptions& opts)
      : x_(&x), a_(&a), opts_(opts), p_(x.cols()) {
    check_design(x, a);
    for (Eigen::Index i = 0; i < a.size(); ++i)
      if (a[i] != 0.0 && a[i] != 1.0)
        throw schema_error("binomial response must be 0/1 at row " + std::to_string(i));
    abar_ = a.mean();
    if (abar_ <= 0.0 || abar_ >= 1.0) throw estimation_error("degenerate response");
    cs_ = column_scale(x, opts.standardize);
    const Eigen::Index m = x.rows();
    xs_.resize(m, p_);
    xs_.col(0).setOnes();
    for (Eigen::Index j = 1; j < p_; ++j)
      xs_.col(j) = (x.col(j).array() - cs_.mean[j]) / cs_.scale[j];
  }

  // Smallest lambda whose solution is the intercept-only fit: the null-model
  // gradient on centered columns. Padded by a relative epsilon so the first
  // path point lands strictly inside the all-zero region despite the
  // logit/sigmoid round trip in the solver.
  double lambda_max(double mix) const {
    const double m = static_cast<double>(xs_.rows());
    const Eigen::VectorXd r = (a_->array() - abar_).matrix();
    double worst = 0.0;
    for (Eigen::Index j = 1; j < p_; ++j)
      worst = std::max(worst, std::fabs((x_->col(j).array() - cs_.mean[j]).matrix().dot(r)) / m);
    return worst * (1.0 + 1e-10) / mix;
  }

  // Proximal Newton from a warm start of standardized coefficients
  // (intercept included at entry 0). The inner weighted coordinate descent
  // runs over a working set (sequential strong rule when `path` carries the
  // previous penalty's gradient, everything otherwise), makes one pass and
  // then iterates on the active set. At candidate convergence the full loss
  // gradient is recomputed: strong-rule violations re-enter the working set,
  // so the returned fit always satisfies the complete KKT system.
  int solve(const PenaltySpec& pen, Eigen::VectorXd& beta_std, bool& change_ok,
            PathState* path = nullptr) const {
    const Eigen::Index m = xs_.rows();
    const double md = static_cast<double>(m);
    if (beta_std.size() != p_) {
      beta_std = Eigen::VectorXd::Zero(p_);
      beta_std[0] = std::log(abar_ / (1.0 - abar_));
    }
    Eigen::VectorXd eta = xs_ * beta_std;
    double obj = penalized_objective(pen, beta_std, eta);
    int sweeps = 0;
    change_ok = false;

    std::vector<char> working(static_cast<std::size_t>(p_), 1);
    if (path && path->prev_lambda > pen.lambda && path->prev_grad.size() == p_) {
      const double thr = pen.mix * (2.0 * pen.lambda - path->prev_lambda);
      for (Eigen::Index j = 1; j < p_; ++j)
        working[static_cast<std::size_t>(j)] =
            beta_std[j] != 0.0 || std::fabs(path->prev_grad[j]) >= thr;
    }

    Eigen::VectorXd w(m), z(m), u(m), wx2(p_), beta_new(p_), eta_new(m), grad(p_);
    Eigen::VectorXd prob(m);
    std::vector<Eigen::Index> active;
    bool cd_stalled = false;
    for (int outer = 0; outer < opts_.max_irls; ++outer) {
      prob = (1.0 + (-eta.array()).exp()).inverse().matrix();
      w = (prob.array() * (1.0 - prob.array())).max(1e-5).matrix();  // weight floor
      z = eta + ((a_->array() - prob.array()) / w.array()).matrix();
      for (Eigen::Index j = 0; j < p_; ++j)
        if (working[static_cast<std::size_t>(j)])
          wx2[j] = xs_.col(j).cwiseAbs2().dot(w) / md;

      // inner weighted coordinate descent on the quadratic model; only
      // u = w .* (z - eta) is maintained, so each coordinate visit is one
      // dot product and one fused update
      beta_new = beta_std;
      u = w.cwiseProduct(z - eta);
      const double* wp = w.data();
      double* up = u.data();
      auto update_coord = [&](Eigen::Index j, double& max_change) {
        const double rho = xs_.col(j).dot(u) / md + wx2[j] * beta_new[j];
        double bnew;
        if (j == 0) {
          bnew = wx2[j] > 0.0 ? rho / wx2[j] : beta_new[j];
        } else {
          const double sj = cs_.scale[j];
          const double denom = wx2[j] + pen.lambda * (1.0 - pen.mix) / (sj * sj);
          bnew = denom > 0.0 ? soft_threshold(rho, pen.lambda * pen.mix / sj) / denom : 0.0;
        }
        const double delta = bnew - beta_new[j];
        if (delta != 0.0) {
          const double* col = xs_.col(j).data();
          for (Eigen::Index i = 0; i < m; ++i) up[i] -= delta * wp[i] * col[i];
          beta_new[j] = bnew;
          max_change = std::max(max_change, std::fabs(delta));
        }
      };
      // exact sign-constrained solve of the quadratic model on the active
      // set (intercept included, unpenalized); used as a rescue when plain
      // coordinate descent stalls
      // exact sign-constrained solve of the quadratic model on the active
      // set (intercept included, unpenalized); the workhorse once plain
      // coordinate descent has identified the support
      auto exact_active_step = [&]() {
        active.clear();
        for (Eigen::Index j = 0; j < p_; ++j)
          if (j == 0 || beta_new[j] != 0.0) active.push_back(j);
        const Eigen::Index k = static_cast<Eigen::Index>(active.size());
        if (k > 160) return false;
        const Eigen::VectorXd wsqrt = w.cwiseSqrt();
        Eigen::MatrixXd xa(m, k);
        for (Eigen::Index c = 0; c < k; ++c)
          xa.col(c) = wsqrt.cwiseProduct(xs_.col(active[static_cast<std::size_t>(c)]));
        Eigen::MatrixXd g = Eigen::MatrixXd::Zero(k, k);
        g.selfadjointView<Eigen::Lower>().rankUpdate(xa.transpose(), 1.0 / md);
        g.triangularView<Eigen::StrictlyUpper>() = g.transpose();
        Eigen::VectorXd rhs = xa.transpose() * (wsqrt.cwiseProduct(z)) / md;
        Eigen::VectorXd l1(k), b(k);
        for (Eigen::Index c = 0; c < k; ++c) {
          const Eigen::Index j = active[static_cast<std::size_t>(c)];
          const double sj = cs_.scale[j];
          l1[c] = j == 0 ? 0.0 : pen.lambda * pen.mix / sj;
          if (j != 0) g(c, c) += pen.lambda * (1.0 - pen.mix) / (sj * sj);
          b[c] = beta_new[j];
        }
        sign_fixed_quadratic(g, rhs, l1, b);
        for (Eigen::Index c = 0; c < k; ++c)
          beta_new[active[static_cast<std::size_t>(c)]] = b[c];
        // refresh the residual bookkeeping after the jump
        eta_new.setZero();
        for (Eigen::Index j = 0; j < p_; ++j)
          if (beta_new[j] != 0.0) eta_new += xs_.col(j) * beta_new[j];
        u = w.cwiseProduct(z - eta_new);
        return true;
      };

      int inner_left = 80;
      while (inner_left-- > 0 && sweeps < opts_.max_sweeps) {
        double ch = 0.0;
        for (Eigen::Index j = 0; j < p_; ++j)
          if (working[static_cast<std::size_t>(j)]) update_coord(j, ch);
        ++sweeps;
        if (ch <= opts_.tol) break;
        active.clear();
        for (Eigen::Index j = 0; j < p_; ++j)
          if (j == 0 || beta_new[j] != 0.0) active.push_back(j);
        // coordinate descent gets a budget matched to the cost of one exact
        // rescue; once it stalls, later inner rounds go straight to the
        // rescue (slow-mixing designs stay slow)
        int rounds = cd_stalled ? 1 : std::clamp<int>(static_cast<int>(active.size()) / 4, 3, 25);
        bool stable = false;
        while (rounds-- > 0 && inner_left-- > 0 && sweeps < opts_.max_sweeps) {
          double ach = 0.0;
          for (Eigen::Index j : active) update_coord(j, ach);
          ++sweeps;
          if (ach <= opts_.tol) {
            stable = true;
            break;
          }
        }
        if (!stable) {
          cd_stalled = true;
          if (sweeps < opts_.max_sweeps && exact_active_step()) ++sweeps;
        }
      }

      // eta for the candidate comes from the maintained weighted residual;
      // step halving keeps the penalized objective monotone and stays affine
      // in eta so no refits are needed
      eta_new = z - u.cwiseQuotient(w);
      double obj_new = penalized_objective(pen, beta_new, eta_new);
      int halvings = 0;
      while (obj_new > obj + 1e-12 && halvings < 30) {
        beta_new = 0.5 * (beta_new + beta_std);
        eta_new = 0.5 * (eta_new + eta);
        obj_new = penalized_objective(pen, beta_new, eta_new);
        ++halvings;
      }
      const double step = (beta_new - beta_std).lpNorm<Eigen::Infinity>();
      const double progress = obj - obj_new;
      beta_std = beta_new;
      eta = eta_new;
      obj = obj_new;
      // numerical plateau (e.g. quasi-separated tail fits): no further outer
      // iteration can improve anything, stop honestly
      if (outer > 0 && progress < 1e-11 * (1.0 + std::fabs(obj)) &&
          step > std::max(opts_.tol, 1e-4)) {
        raw_gradient(eta, grad);
        if (kkt_from_grad(pen, beta_std, grad) <= 9.0 * opts_.tol) change_ok = true;
        if (path) {
          path->prev_lambda = pen.lambda;
          path->prev_grad = grad;
        }
        break;
      }
      // once inside the quadratic-convergence regime the KKT residual is the
      // binding exit criterion
      if (step <= std::max(opts_.tol, 1e-4)) {
        raw_gradient(eta, grad);
        bool expanded = false;
        for (Eigen::Index j = 1; j < p_; ++j) {
          if (!working[static_cast<std::size_t>(j)] &&
              std::fabs(grad[j]) > pen.lambda * pen.mix) {
            working[static_cast<std::size_t>(j)] = 1;
            expanded = true;
          }
        }
        if (!expanded && kkt_from_grad(pen, beta_std, grad) <= 9.0 * opts_.tol) {
          change_ok = true;
          if (path) {
            path->prev_lambda = pen.lambda;
            path->prev_grad = grad;
          }
          break;
        }
      }
      if (sweeps >= opts_.max_sweeps) break;
    }
    if (!change_ok && path) {
      raw_gradient(eta, grad);
      path->prev_lambda = pen.lambda;
      path->prev_grad = grad;
    }
    return sweeps;
  }

  // Loss gradient on the caller's scale at linear predictor eta.
  void raw_gradient(const Eigen::VectorXd& eta, Eigen::VectorXd& grad) const {
    const double md = static_cast<double>(xs_.rows());
    const Eigen::VectorXd pr =
        ((1.0 + (-eta.array()).exp()).inverse() - a_->array()).matrix();
    grad = x_->transpose() * pr / md;
  }

  // Stationarity residual of the true objective given the raw-scale loss
  // gradient at the current iterate.
  double kkt_from_grad(const PenaltySpec& pen, const Eigen::VectorXd& beta_std,
                       const Eigen::VectorXd& grad) const {
    double worst = std::fabs(grad[0]);
    for (Eigen::Index j = 1; j < p_; ++j) {
      const double b = beta_std[j] / cs_.scale[j];
      const double g = grad[j] + pen.lambda * (1.0 - pen.mix) * b;
      if (b != 0.0) {
        worst = std::max(worst, std::fabs(g + pen.lambda * pen.mix * (b > 0 ? 1.0 : -1.0)));
      } else {
        worst = std::max(worst, std::max(std::fabs(g) - pen.lambda * pen.mix, 0.0));
      }
    }
    return worst;
  }

  GlmFit finalize(const PenaltySpec& pen, const Eigen::VectorXd& beta_std, int sweeps,
                  bool change_ok) const {
    GlmFit fit;
    fit.family = Family::binomial;
    fit.lambda_used = pen.lambda;
    fit.penalty_mix = pen.mix;
    fit.sweeps = sweeps;
    fit.coefficients = Eigen::VectorXd::Zero(p_);
    double shift = 0.0;
    for (Eigen::Index j = 1; j < p_; ++j) {
      fit.coefficients[j] = beta_std[j] / cs_.scale[j];
      shift += fit.coefficients[j] * cs_.mean[j];
    }
    fit.coefficients[0] = beta_std[0] - shift;
    fit.kkt_residual = kkt_violation(*x_, *a_, fit, pen);
    fit.converged = change_ok && fit.kkt_residual <= 10.0 * opts_.tol;
    return fit;
  }

 private:
  double penalized_objective(const PenaltySpec& pen, const Eigen::VectorXd& beta_std,
                             const Eigen::VectorXd& eta) const {
    const double md = static_cast<double>(xs_.rows());
    // -a*eta + log(1+exp(eta)) = max(eta,0) - a*eta + log(1+exp(-|eta|))
    const double loss = (eta.array().max(0.0) - a_->array() * eta.array() +
                         (1.0 + (-eta.array().abs()).exp()).log())
                            .sum() / md;
    double l1 = 0.0, l2 = 0.0;
    for (Eigen::Index j = 1; j < p_; ++j) {
      const double orig = beta_std[j] / cs_.scale[j];
      l1 += std::fabs(orig);
      l2 += orig * orig;
    }
    return loss + pen.lambda * (pen.mix * l1 + 0.5 * (1.0 - pen.mix) * l2);
  }

  const Eigen::MatrixXd* x_;
  const Eigen::VectorXd* a_;
  SolverOptions opts_;
  Eigen::Index p_;
  ColumnScale cs_;
  Eigen::MatrixXd xs_;
  double abar_ = 0.0;
};

}  // namespace detail

inline GlmFit fit_lasso(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                        const PenaltySpec& pen, const SolverOptions& opts = {}) {
  pen.validate();
  detail::GaussianWorkspace ws(x, y, opts);
  Eigen::VectorXd beta;
  bool change_ok = false;
  const int sweeps = ws.solve(pen, beta, change_ok);
  return ws.finalize(pen, beta, sweeps, change_ok);
}

inline GlmFit fit_logistic_lasso(const Eigen::MatrixXd& x, const Eigen::VectorXd& a,
                                 const PenaltySpec& pen, const SolverOptions& opts = {}) {
  pen.validate();
  detail::BinomialWorkspace ws(x, a, opts);
  Eigen::VectorXd beta;
  bool change_ok = false;
  const int sweeps = ws.solve(pen, beta, change_ok);
  return ws.finalize(pen, beta, sweeps, change_ok);
}

// Warm-started fits along a descending lambda sequence.
inline std::vector<GlmFit> fit_path(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                    Family family, const std::vector<double>& lambdas,
                                    double mix = 1.0, const SolverOptions& opts = {}) {
  std::vector<GlmFit> fits;
  fits.reserve(lambdas.size());
  if (family == Family::gaussian) {
    detail::GaussianWorkspace ws(x, y, opts);
    Eigen::VectorXd beta;
    for (double lam : lambdas) {
      PenaltySpec pen{lam, mix};
      pen.validate();
      bool ok = false;
      const int sweeps = ws.solve(pen, beta, ok);
      fits.push_back(ws.finalize(pen, beta, sweeps, ok));
    }
  } else {
    detail::BinomialWorkspace ws(x, y, opts);
    detail::PathState state;
    Eigen::VectorXd beta;
    for (double lam : lambdas) {
      PenaltySpec pen{lam, mix};
      pen.validate();
      bool ok = false;
      const int sweeps = ws.solve(pen, beta, ok, &state);
      fits.push_back(ws.finalize(pen, beta, sweeps, ok));
    }
  }
  return fits;
}

// Log-spaced grid from lambda_max (all slopes zero) down to ratio*lambda_max.
// Default ratio: 1e-3 gaussian, 1e-2 binomial.
inline std::vector<double> lambda_grid(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                       Family family, int count = 100, double ratio = -1.0,
                                       double mix = 1.0,
                                       const SolverOptions& opts = {}) {
  if (count < 2) throw config_error("lambda grid needs at least 2 points");
  if (ratio < 0.0) ratio = family == Family::gaussian ? 1e-3 : 1e-2;
  if (!(ratio > 0.0 && ratio < 1.0)) throw config_error("lambda grid ratio must lie in (0,1)");
  double lmax;
  if (family == Family::gaussian) {
    detail::GaussianWorkspace ws(x, y, opts);
    lmax = ws.lambda_max(mix);
  } else {
    detail::BinomialWorkspace ws(x, y, opts);
    lmax = ws.lambda_max(mix);
  }
  if (lmax <= 0.0) lmax = 1e-12;  // response uncorrelated with every column
  std::vector<double> grid(static_cast<std::size_t>(count));
  const double step = std::log(ratio) / static_cast<double>(count - 1);
  for (int i = 0; i < count; ++i) grid[static_cast<std::size_t>(i)] = lmax * std::exp(step * i);
  return grid;
}

struct CvResult {
  double lambda_star = 0.0;
  std::vector<double> curve;  // mean held-out loss per grid point
  int dropped_folds = 0;      // binomial folds skipped for degenerate training response
};

// K-fold selection of lambda by minimum mean held-out loss (squared error /
// mean negative log-likelihood); ties resolve to the larger lambda.
inline CvResult cross_validate_lambda(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                      Family family, const std::vector<double>& grid,
                                      int cv_folds, std::uint64_t seed,
                                      double mix = 1.0, const SolverOptions& opts = {}) {
  if (grid.empty()) throw config_error("cross_validate_lambda: empty grid");
  if (cv_folds < 2) throw config_error("cross_validate_lambda: cv_folds must be >= 2");
  const int m = static_cast<int>(x.rows());
  const FoldPlan plan = make_folds(m, cv_folds, seed);
  std::vector<double> total(grid.size(), 0.0);
  int used_folds = 0, dropped = 0;

  for (int f = 0; f < cv_folds; ++f) {
    const std::vector<int> test = plan.fold(f);
    const std::vector<int> train = plan.complement(f);
    const Eigen::MatrixXd xtr = take_rows(x, train);
    const Eigen::VectorXd ytr = take_elems(y, train);
    if (family == Family::binomial) {
      const double mb = ytr.mean();
      if (mb <= 0.0 || mb >= 1.0) {
        ++dropped;  // this split cannot support a logistic fit
        continue;
      }
    }
    const Eigen::MatrixXd xte = take_rows(x, test);
    const Eigen::VectorXd yte = take_elems(y, test);
    const std::vector<GlmFit> path = fit_path(xtr, ytr, family, grid, mix, opts);
    for (std::size_t g = 0; g < grid.size(); ++g) {
      const Eigen::VectorXd eta = xte * path[g].coefficients;
      double loss = 0.0;
      if (family == Family::gaussian) {
        loss = (yte - eta).squaredNorm() / static_cast<double>(yte.size());
      } else {
        for (Eigen::Index i = 0; i < eta.size(); ++i)
          loss += -yte[i] * eta[i] + log1pexp(eta[i]);
        loss /= static_cast<double>(yte.size());
      }
      total[g] += loss;
    }
    ++used_folds;
  }
  if (used_folds == 0)
    throw estimation_error("cross_validate_lambda: every fold had a degenerate response");

  CvResult out;
  out.dropped_folds = dropped;
  out.curve.resize(grid.size());
  for (std::size_t g = 0; g < grid.size(); ++g) out.curve[g] = total[g] / used_folds;
  std::size_t best = 0;
  for (std::size_t g = 1; g < grid.size(); ++g)
    if (out.curve[g] < out.curve[best]) best = g;  // strict <, ties keep larger lambda
  out.lambda_star = grid[best];
  return out;
}

inline Eigen::VectorXd predict_linear(const GlmFit& fit, const Eigen::MatrixXd& x) {
  if (x.cols() != fit.coefficients.size())
    throw config_error("predict_linear: design has " + std::to_string(x.cols()) +
                       " columns, fit has " + std::to_string(fit.coefficients.size()));
  return x * fit.coefficients;
}

inline Eigen::VectorXd predict_logistic(const GlmFit& fit, const Eigen::MatrixXd& x) {
  if (x.cols() != fit.coefficients.size())
    throw config_error("predict_logistic: design has " + std::to_string(x.cols()) +
                       " columns, fit has " + std::to_string(fit.coefficients.size()));
  Eigen::VectorXd eta = x * fit.coefficients;
  for (Eigen::Index i = 0; i < eta.size(); ++i) eta[i] = sigmoid(eta[i]);
  return eta;
}

}  // namespace dynate

#endif  // DYNATE_LASSO_HPP
