#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>

#include "crp/errors.hpp"

namespace crp {

// Value-based cubic regression spline: coefficients are the function values at
// the knots, the curve between knots is the natural interpolating cubic, and
// the smoothness penalty is the exact integral of the squared second
// derivative. Evaluation is linear beyond the boundary knots.
class CubicSpline {
 public:
  CubicSpline(std::vector<double> knots) : knots_(std::move(knots)) {
    const int k = static_cast<int>(knots_.size());
    if (k < 4) throw Error(ErrorKind::InsufficientData, "cubic spline needs >= 4 knots");
    for (int i = 1; i < k; ++i)
      if (!(knots_[i] > knots_[i - 1]))
        throw Error(ErrorKind::InvalidConfig, "spline knots must strictly increase");

    // Natural-spline relation: Bmat * delta = D * beta, where delta holds the
    // second derivatives at interior knots and beta the knot values.
    Eigen::MatrixXd D = Eigen::MatrixXd::Zero(k - 2, k);
    Eigen::MatrixXd Bmat = Eigen::MatrixXd::Zero(k - 2, k - 2);
    for (int i = 0; i < k - 2; ++i) {
      const double h0 = knots_[i + 1] - knots_[i];
      const double h1 = knots_[i + 2] - knots_[i + 1];
      D(i, i) = 1.0 / h0;
      D(i, i + 1) = -1.0 / h0 - 1.0 / h1;
      D(i, i + 2) = 1.0 / h1;
      Bmat(i, i) = (h0 + h1) / 3.0;
      if (i + 1 < k - 2) {
        Bmat(i, i + 1) = h1 / 6.0;
        Bmat(i + 1, i) = h1 / 6.0;
      }
    }
    Eigen::MatrixXd BinvD = Bmat.ldlt().solve(D);
    F_ = Eigen::MatrixXd::Zero(k, k);  // rows 0 and k-1 stay zero (natural ends)
    F_.block(1, 0, k - 2, k) = BinvD;
    S_ = D.transpose() * BinvD;
    S_ = 0.5 * (S_ + S_.transpose());  // symmetrize against round-off
  }

  int k() const { return static_cast<int>(knots_.size()); }
  const std::vector<double>& knots() const { return knots_; }

  // Penalty matrix: beta' S beta = integral of f''(x)^2 over the knot span.
  const Eigen::MatrixXd& penalty() const { return S_; }

  // Basis row: f(x) = row(x) . beta.
  Eigen::RowVectorXd row(double x) const {
    const int k = this->k();
    Eigen::RowVectorXd r = Eigen::RowVectorXd::Zero(k);
    if (x <= knots_.front()) {
      // linear extrapolation: f(a) + (x-a) f'(a)
      r(0) = 1.0;
      r += (x - knots_.front()) * deriv_row(0);
      return r;
    }
    if (x >= knots_.back()) {
      r(k - 1) = 1.0;
      r += (x - knots_.back()) * deriv_row(1);
      return r;
    }
    const int j = segment_of(x);
    const double h = knots_[j + 1] - knots_[j];
    const double dl = knots_[j + 1] - x, dr = x - knots_[j];
    const double am = dl / h, ap = dr / h;
    const double cm = (dl * dl * dl / h - h * dl) / 6.0;
    const double cp = (dr * dr * dr / h - h * dr) / 6.0;
    r(j) += am;
    r(j + 1) += ap;
    r += cm * F_.row(j) + cp * F_.row(j + 1);
    return r;
  }

  Eigen::MatrixXd design(const std::vector<double>& x) const {
    Eigen::MatrixXd X(static_cast<Eigen::Index>(x.size()), k());
    for (std::size_t i = 0; i < x.size(); ++i) X.row(static_cast<Eigen::Index>(i)) = row(x[i]);
    return X;
  }

 private:
  int segment_of(double x) const {
    auto it = std::upper_bound(knots_.begin(), knots_.end(), x);
    int j = static_cast<int>(it - knots_.begin()) - 1;
    return std::clamp(j, 0, k() - 2);
  }

  // d/dx of the basis row at a boundary knot (side 0 = first, 1 = last); the
  // natural end condition zeroes the boundary curvature term.
  Eigen::RowVectorXd deriv_row(int side) const {
    const int k = this->k();
    Eigen::RowVectorXd r = Eigen::RowVectorXd::Zero(k);
    if (side == 0) {
      const double h = knots_[1] - knots_[0];
      r(0) = -1.0 / h;
      r(1) = 1.0 / h;
      r -= (h / 6.0) * F_.row(1);
      return r;
    }
    const double h = knots_[k - 1] - knots_[k - 2];
    r(k - 2) = -1.0 / h;
    r(k - 1) = 1.0 / h;
    r += (h / 6.0) * F_.row(k - 2);
    return r;
  }

  std::vector<double> knots_;
  Eigen::MatrixXd F_;  // k x k map from values to second derivatives at knots
  Eigen::MatrixXd S_;  // k x k curvature penalty
};

// Knots at evenly spaced quantiles of the distinct observed values.
inline std::vector<double> quantile_knots(std::vector<double> values, int k) {
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());
  const int u = static_cast<int>(values.size());
  if (u < k)
    throw Error(ErrorKind::InsufficientData, "need >= " + std::to_string(k) +
                                                 " distinct values for " + std::to_string(k) +
                                                 " knots, have " + std::to_string(u));
  std::vector<double> knots(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    const double pos = static_cast<double>(u - 1) * static_cast<double>(i) / static_cast<double>(k - 1);
    const int lo = static_cast<int>(std::floor(pos));
    const double frac = pos - lo;
    knots[static_cast<std::size_t>(i)] =
        frac == 0.0 ? values[static_cast<std::size_t>(lo)]
                    : (1.0 - frac) * values[static_cast<std::size_t>(lo)] + frac * values[static_cast<std::size_t>(lo) + 1];
  }
  return knots;
}

// Orthonormal basis Z of the null space of a single linear constraint c'b = 0,
// via the Householder reflection that maps c to a multiple of e1. Columns of Z
// satisfy c'Z = 0 and Z'Z = I.
inline Eigen::MatrixXd constraint_null_basis(const Eigen::VectorXd& c) {
  const Eigen::Index k = c.size();
  if (k < 2) throw Error(ErrorKind::InvalidConfig, "constraint needs >= 2 coefficients");
  const double nrm = c.norm();
  if (nrm == 0.0) throw Error(ErrorKind::InvalidConfig, "zero constraint vector");
  Eigen::VectorXd v = c;
  v(0) += (c(0) >= 0 ? nrm : -nrm);
  const double vtv = v.squaredNorm();
  Eigen::MatrixXd H = Eigen::MatrixXd::Identity(k, k) - (2.0 / vtv) * (v * v.transpose());
  // H maps c to ±nrm * e1; the remaining k-1 columns of H span the null space.
  return H.rightCols(k - 1);
}

}  // namespace crp
