#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "crp/errors.hpp"
#include "crp/mathutil.hpp"

namespace crp {

// Design for one fit: counts, log-exposure offset, named columns (intercept
// included explicitly by the caller).
struct ModelMatrix {
  Eigen::VectorXd y;
  Eigen::VectorXd offset;
  Eigen::MatrixXd X;
  std::vector<std::string> names;

  void validate() const {
    const Eigen::Index n = y.size();
    if (n == 0) throw Error(ErrorKind::EmptyModelFrame, "model matrix has no rows");
    if (X.rows() != n || offset.size() != n)
      throw Error(ErrorKind::InvalidConfig, "model matrix dimensions disagree");
    if (static_cast<std::size_t>(X.cols()) != names.size())
      throw Error(ErrorKind::InvalidConfig, "column names out of sync");
    if (n <= X.cols())
      throw Error(ErrorKind::InsufficientData,
                  "need more rows (" + std::to_string(n) + ") than columns (" +
                      std::to_string(X.cols()) + ")");
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!(y(i) >= 0) || y(i) != std::floor(y(i)))
        throw Error(ErrorKind::SchemaViolation, "response must be a non-negative integer count");
      if (!std::isfinite(offset(i))) throw Error(ErrorKind::SchemaViolation, "offset must be finite");
    }
    if (!X.allFinite()) throw Error(ErrorKind::SchemaViolation, "covariates must be finite");
  }
};

struct NbControls {
  int max_outer = 100;
  int max_irls = 60;
  double tol = 1e-8;
  double theta_max = 1e8;  // beyond this the Poisson limit is declared
};

struct NbFit {
  Eigen::VectorXd beta;
  Eigen::MatrixXd cov;
  double theta = 1.0;
  bool poisson_limit = false;  // theta diverged; fit completed as Poisson
  double loglik = 0;
  double pearson = 0;
  double df_resid = 0;
  bool converged = false;
  int iterations = 0;
  std::vector<std::string> names;    // kept columns, fit order
  std::vector<int> kept;             // indices into the input columns
  std::vector<std::string> dropped;  // all-zero columns removed with a warning
};

namespace detail {

// Finite-sum forms of lgamma/digamma/trigamma differences for integer counts.
// Subtracting the library functions directly loses all precision once theta is
// many orders of magnitude larger than y, which is exactly the regime the
// Poisson-limit detection has to resolve.
inline double log_rising(double theta, double y) {
  if (y <= 0.0) return 0.0;
  if (y > 4096.0) return std::lgamma(y + theta) - std::lgamma(theta);
  double s = 0;
  for (double j = 0; j < y; ++j) s += std::log(theta + j);
  return s;
}

inline double digamma_shift(double theta, double y) {
  if (y <= 0.0) return 0.0;
  if (y > 4096.0) return digamma(y + theta) - digamma(theta);
  double s = 0;
  for (double j = 0; j < y; ++j) s += 1.0 / (theta + j);
  return s;
}

inline double trigamma_shift(double theta, double y) {
  if (y <= 0.0) return 0.0;
  if (y > 4096.0) return trigamma(y + theta) - trigamma(theta);
  double s = 0;
  for (double j = 0; j < y; ++j) s -= 1.0 / ((theta + j) * (theta + j));
  return s;
}

inline double nb_loglik(const Eigen::VectorXd& y, const Eigen::VectorXd& mu, double theta) {
  double ll = 0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double yi = y(i), mi = mu(i);
    // lgamma(y+theta) - lgamma(theta) + theta*log(theta) + y*log(mu)
    //   - (theta+y)*log(theta+mu), rearranged so nothing large cancels
    ll += log_rising(theta, yi) - std::lgamma(yi + 1.0) - theta * std::log1p(mi / theta) +
          yi * std::log(mi / (theta + mi));
  }
  return ll;
}

inline double poisson_loglik(const Eigen::VectorXd& y, const Eigen::VectorXd& mu) {
  double ll = 0;
  for (Eigen::Index i = 0; i < y.size(); ++i)
    ll += y(i) * std::log(mu(i)) - mu(i) - std::lgamma(y(i) + 1.0);
  return ll;
}

// One IRLS pass to convergence at fixed theta (theta <= 0 means Poisson).
inline Eigen::VectorXd irls(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                            const Eigen::VectorXd& offset, double theta, Eigen::VectorXd beta,
                            int max_iter, double tol) {
  const Eigen::Index n = X.rows();
  for (int iter = 0; iter < max_iter; ++iter) {
    Eigen::VectorXd eta = X * beta + offset;
    Eigen::VectorXd mu(n), w(n), z(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      mu(i) = std::exp(std::clamp(eta(i), -300.0, 300.0));
      const double m = std::max(mu(i), 1e-10);
      w(i) = theta > 0 ? m / (1.0 + m / theta) : m;
      z(i) = (eta(i) - offset(i)) + (y(i) - m) / m;
    }
    Eigen::MatrixXd A = X.transpose() * w.asDiagonal() * X;
    Eigen::VectorXd next = A.ldlt().solve(X.transpose() * (w.asDiagonal() * z));
    const double delta = (next - beta).cwiseAbs().maxCoeff();
    beta = next;
    if (delta < tol) break;
  }
  return beta;
}

// Newton ML update for theta at fixed mu, safeguarded by halving in log-theta.
inline double update_theta(const Eigen::VectorXd& y, const Eigen::VectorXd& mu, double theta,
                           double theta_max) {
  for (int iter = 0; iter < 50; ++iter) {
    double score = 0, hess = 0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      const double yi = y(i), mi = mu(i);
      // log(theta) + 1 - log(theta+mu) - (theta+y)/(theta+mu) = -log1p(mu/theta)
      //   + (mu-y)/(theta+mu); the hessian tail collapses the same way.
      score += digamma_shift(theta, yi) - std::log1p(mi / theta) + (mi - yi) / (theta + mi);
      hess += trigamma_shift(theta, yi) +
              (mi * mi + theta * yi) / (theta * (theta + mi) * (theta + mi));
    }
    if (hess >= 0) {  // not locally concave: move along the score sign instead
      theta = score > 0 ? std::min(theta * 2.0, theta_max * 2.0) : theta / 2.0;
      if (theta > theta_max) return theta;
      continue;
    }
    double step = -score / hess;
    double next = theta + step;
    const double ll0 = nb_loglik(y, mu, theta);
    double shrink = 1.0;
    while ((next <= 0 || nb_loglik(y, mu, next) < ll0) && shrink > 1e-8) {
      shrink *= 0.5;
      next = theta + shrink * step;
    }
    if (next <= 0) next = theta / 2.0;
    const double rel = std::abs(next - theta) / std::max(1.0, theta);
    theta = next;
    if (theta > theta_max) return theta;
    if (rel < 1e-10) break;
  }
  return theta;
}

}  // namespace detail

// Alternating estimation: IRLS for beta at fixed theta, Newton ML for theta at
// fixed beta, until both stabilize. A diverging theta switches to the Poisson
// limit instead of failing.
inline NbFit fit_nb(const ModelMatrix& mm, const NbControls& ctl = {}) {
  mm.validate();
  NbFit fit;

  // drop all-zero columns (a categorical level absent from these rows)
  for (Eigen::Index j = 0; j < mm.X.cols(); ++j) {
    if (mm.X.col(j).cwiseAbs().maxCoeff() == 0.0)
      fit.dropped.push_back(mm.names[static_cast<std::size_t>(j)]);
    else
      fit.kept.push_back(static_cast<int>(j));
  }
  const Eigen::Index p = static_cast<Eigen::Index>(fit.kept.size());
  const Eigen::Index n = mm.y.size();
  Eigen::MatrixXd X(n, p);
  for (Eigen::Index j = 0; j < p; ++j) {
    X.col(j) = mm.X.col(fit.kept[static_cast<std::size_t>(j)]);
    fit.names.push_back(mm.names[static_cast<std::size_t>(fit.kept[static_cast<std::size_t>(j)])]);
  }

  // rank check with pivoted QR; name the aliased columns
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  qr.setThreshold(1e-10);
  if (qr.rank() < p) {
    const auto& perm = qr.colsPermutation().indices();
    std::string aliased;
    for (Eigen::Index j = qr.rank(); j < p; ++j) {
      if (!aliased.empty()) aliased += ", ";
      aliased += fit.names[static_cast<std::size_t>(perm(j))];
    }
    throw Error(ErrorKind::RankDeficient, "aliased columns: " + aliased);
  }

  const Eigen::VectorXd& y = mm.y;
  const Eigen::VectorXd& offset = mm.offset;

  // start from the Poisson fit, then alternate
  fit.beta = detail::irls(X, y, offset, 0.0, Eigen::VectorXd::Zero(p), ctl.max_irls, ctl.tol);
  fit.theta = 1.0;

  auto mu_of = [&](const Eigen::VectorXd& beta) {
    Eigen::VectorXd eta = X * beta + offset;
    Eigen::VectorXd mu(n);
    for (Eigen::Index i = 0; i < n; ++i) mu(i) = std::exp(std::clamp(eta(i), -300.0, 300.0));
    return mu;
  };

  for (fit.iterations = 1; fit.iterations <= ctl.max_outer; ++fit.iterations) {
    Eigen::VectorXd mu = mu_of(fit.beta);
    const double theta_new = detail::update_theta(y, mu, fit.theta, ctl.theta_max);
    if (theta_new > ctl.theta_max) {
      fit.poisson_limit = true;
      fit.theta = std::numeric_limits<double>::infinity();
      fit.beta = detail::irls(X, y, offset, 0.0, fit.beta, ctl.max_irls, ctl.tol);
      fit.converged = true;
      break;
    }
    const Eigen::VectorXd beta_new = detail::irls(X, y, offset, theta_new, fit.beta, ctl.max_irls, ctl.tol);
    const double beta_delta = (beta_new - fit.beta).cwiseAbs().maxCoeff();
    const double theta_rel = std::abs(theta_new - fit.theta) / std::max(1.0, fit.theta);
    fit.beta = beta_new;
    fit.theta = theta_new;
    if (beta_delta < ctl.tol && theta_rel < ctl.tol) {
      fit.converged = true;
      break;
    }
  }
  fit.iterations = std::min(fit.iterations, ctl.max_outer);

  // expected-information covariance at the converged weights
  Eigen::VectorXd mu = mu_of(fit.beta);
  Eigen::VectorXd w(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double m = std::max(mu(i), 1e-10);
    w(i) = fit.poisson_limit ? m : m / (1.0 + m / fit.theta);
  }
  Eigen::MatrixXd XtWX = X.transpose() * w.asDiagonal() * X;
  fit.cov = XtWX.ldlt().solve(Eigen::MatrixXd::Identity(p, p));
  fit.cov = 0.5 * (fit.cov + fit.cov.transpose());

  fit.loglik = fit.poisson_limit ? detail::poisson_loglik(y, mu) : detail::nb_loglik(y, mu, fit.theta);
  fit.pearson = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double m = std::max(mu(i), 1e-10);
    const double v = fit.poisson_limit ? m : m * (1.0 + m / fit.theta);
    fit.pearson += (y(i) - m) * (y(i) - m) / v;
  }
  fit.df_resid = static_cast<double>(n - p);
  return fit;
}

struct Interval {
  double lo = 0, hi = 0;
};

// Two-sided Wald interval at the given level on the link scale.
inline Interval wald_ci(double beta, double se, double level = 0.90) {
  const double z = norm_ppf(0.5 + level / 2.0);
  return {beta - z * se, beta + z * se};
}

inline double coef_se(const NbFit& fit, Eigen::Index j) {
  const double v = fit.cov(j, j);
  return v > 0 ? std::sqrt(v) : 0.0;
}

// Percentage change in the outcome per `unit` step of the covariate.
inline double pct_change(double beta, double unit = 1.0) {
  return 100.0 * (std::exp(beta * unit) - 1.0);
}

inline Interval pct_change(const Interval& ci, double unit = 1.0) {
  return {pct_change(ci.lo, unit), pct_change(ci.hi, unit)};
}

}  // namespace crp
