#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <vector>

#include "crp/csv.hpp"
#include "crp/dates.hpp"
#include "crp/errors.hpp"
#include "crp/parallel.hpp"
#include "crp/spline.hpp"
#include "crp/taxonomy.hpp"

namespace crp {

struct TestCount {
  int msoa = -1;
  Date date;
  long n_positive = 0;
};

// Ingest symptomatic daily positives; duplicate (msoa,date) rows accumulate.
inline std::vector<TestCount> load_tests(const std::string& path, const World& w) {
  CsvTable t = CsvTable::load(path);
  t.require_columns({"msoa", "date", "n_positive", "symptomatic_flag"});
  std::map<std::pair<int, std::int32_t>, long> acc;
  for (std::size_t r = 0; r < t.n_rows(); ++r) {
    long flag = t.get_int(r, "symptomatic_flag");
    if (flag != 0 && flag != 1) t.bad_cell(r, "symptomatic_flag", t.get_str(r, "symptomatic_flag"), "0 or 1");
    if (flag == 0) continue;  // only symptomatic tests are modelled
    const std::string& code = t.get_str(r, "msoa");
    int m = w.msoa_id(code);
    if (m < 0) throw Error(ErrorKind::DanglingReference, path + ": unknown msoa '" + code + "'");
    Date d = parse_date(t.get_str(r, "date"));
    long n = t.get_int(r, "n_positive");
    if (n < 0) t.bad_cell(r, "n_positive", t.get_str(r, "n_positive"), "count >= 0");
    acc[{m, d.days}] += n;
  }
  std::vector<TestCount> counts;
  counts.reserve(acc.size());
  for (const auto& [key, n] : acc) counts.push_back({key.first, Date{key.second}, n});
  return counts;
}

struct GamSpec {
  int k = 10;               // spline basis size per MSOA
  double lambda_time = 1.0;  // spline curvature weight
  double lambda_mrf = 1.0;   // neighbour-field shrinkage
  double lambda_dow = 1.0;   // day-of-week ridge
  int max_iter = 100;
  double tol = 1e-8;
  int max_batch = 200;  // MSOAs per fitting batch

  void validate() const {
    if (k < 4) throw Error(ErrorKind::InvalidConfig, "spline basis size must be >= 4");
    if (lambda_time < 0 || lambda_mrf < 0 || lambda_dow < 0)
      throw Error(ErrorKind::InvalidConfig, "penalty weights must be >= 0");
    if (tol <= 0) throw Error(ErrorKind::InvalidConfig, "tolerance must be > 0");
    if (max_iter < 1) throw Error(ErrorKind::InvalidConfig, "max_iter must be >= 1");
    if (max_batch < 1) throw Error(ErrorKind::InvalidConfig, "max_batch must be >= 1");
  }
};

enum class GamFamily { QuasiPoisson, Gaussian };

// One fitting batch: rows are (MSOA, date) cells, columns are
// [per-MSOA intercepts | day-of-week (sum-to-zero, 6) | per-MSOA centred
// spline (k-1 each)]. The intercept block carries the graph-Laplacian
// penalty, so the field is shrunk toward its neighbours while the batch mean
// stays unpenalized.
struct BatchDesign {
  std::vector<int> msoas;     // global MSOA ids, batch order
  std::vector<int> isolated;  // local ids with no within-batch neighbour
  int M = 0, k = 0, n = 0, p = 0;
  int col_dow0 = 0, col_sp0 = 0;

  Eigen::SparseMatrix<double> X;
  Eigen::VectorXd y, offset;
  std::vector<double> row_x;  // date coordinate per row
  std::vector<int> row_msoa;  // local MSOA per row
  std::vector<int> row_dow;

  Eigen::MatrixXd dowZ;                  // 7 x 6 sum-to-zero basis
  std::vector<CubicSpline> splines;      // per local MSOA
  std::vector<Eigen::MatrixXd> splineZ;  // k x (k-1) centring basis
  std::vector<Eigen::MatrixXd> splineP;  // (k-1) x (k-1) curvature penalty
  Eigen::SparseMatrix<double> laplacian;  // M x M

  int spline_col0(int local_m) const { return col_sp0 + local_m * (k - 1); }

  Eigen::SparseMatrix<double> penalty(const GamSpec& spec) const {
    std::vector<Eigen::Triplet<double>> trips;
    for (int j = 0; j < laplacian.outerSize(); ++j)
      for (Eigen::SparseMatrix<double>::InnerIterator it(laplacian, j); it; ++it)
        if (it.value() != 0.0)
          trips.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()),
                             spec.lambda_mrf * it.value());
    for (int j = 0; j < 6; ++j) trips.emplace_back(col_dow0 + j, col_dow0 + j, spec.lambda_dow);
    for (int m = 0; m < M; ++m) {
      const auto& P = splineP[static_cast<std::size_t>(m)];
      const int c0 = spline_col0(m);
      for (int a = 0; a < P.rows(); ++a)
        for (int b = 0; b < P.cols(); ++b)
          if (P(a, b) != 0.0) trips.emplace_back(c0 + a, c0 + b, spec.lambda_time * P(a, b));
    }
    Eigen::SparseMatrix<double> S(p, p);
    S.setFromTriplets(trips.begin(), trips.end());
    return S;
  }

  // Spline value f(t, m) for local MSOA m at coordinate x, given coefficients.
  double spline_value(int local_m, double x, const Eigen::VectorXd& beta) const {
    const auto& Z = splineZ[static_cast<std::size_t>(local_m)];
    Eigen::RowVectorXd b = splines[static_cast<std::size_t>(local_m)].row(x) * Z;
    double v = 0;
    const int c0 = spline_col0(local_m);
    for (int j = 0; j < k - 1; ++j) v += b(j) * beta(c0 + j);
    return v;
  }
};

inline BatchDesign build_design(const std::vector<TestCount>& counts, const World& w,
                                const std::vector<int>& batch, const GamSpec& spec) {
  spec.validate();
  BatchDesign d;
  d.msoas = batch;
  d.M = static_cast<int>(batch.size());
  d.k = spec.k;

  std::vector<int> local(w.msoas.size(), -1);
  for (int i = 0; i < d.M; ++i) local[static_cast<std::size_t>(batch[static_cast<std::size_t>(i)])] = i;

  // partition this batch's counts by local MSOA, date-sorted (load_tests is
  // already sorted; re-sorting keeps the contract independent of the source)
  std::vector<std::vector<TestCount>> per(static_cast<std::size_t>(d.M));
  for (const auto& c : counts) {
    int lm = local[static_cast<std::size_t>(c.msoa)];
    if (lm >= 0) per[static_cast<std::size_t>(lm)].push_back(c);
  }
  for (auto& v : per)
    std::sort(v.begin(), v.end(), [](const TestCount& a, const TestCount& b) { return a.date < b.date; });

  d.n = 0;
  for (const auto& v : per) d.n += static_cast<int>(v.size());
  if (d.n == 0) throw Error(ErrorKind::EmptyInput, "no test counts in batch");

  d.col_dow0 = d.M;
  d.col_sp0 = d.M + 6;
  d.p = d.M + 6 + d.M * (d.k - 1);

  d.dowZ = constraint_null_basis(Eigen::VectorXd::Ones(7));

  d.y.resize(d.n);
  d.offset.resize(d.n);
  d.row_x.resize(static_cast<std::size_t>(d.n));
  d.row_msoa.resize(static_cast<std::size_t>(d.n));
  d.row_dow.resize(static_cast<std::size_t>(d.n));

  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<std::size_t>(d.n) * static_cast<std::size_t>(7 + d.k));

  int row = 0;
  for (int m = 0; m < d.M; ++m) {
    const auto& v = per[static_cast<std::size_t>(m)];
    std::vector<double> xs;
    xs.reserve(v.size());
    for (const auto& c : v) xs.push_back(static_cast<double>(c.date.days));
    std::vector<double> distinct = xs;
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    if (static_cast<int>(distinct.size()) < spec.k)
      throw Error(ErrorKind::InsufficientData,
                  "msoa '" + w.msoas[static_cast<std::size_t>(batch[static_cast<std::size_t>(m)])].code + "' has " +
                      std::to_string(distinct.size()) + " distinct dates, needs >= " + std::to_string(spec.k));

    CubicSpline sp(quantile_knots(distinct, spec.k));
    Eigen::MatrixXd B = sp.design(xs);
    Eigen::VectorXd c = B.colwise().sum();  // centring constraint over this MSOA's rows
    Eigen::MatrixXd Z = constraint_null_basis(c);
    Eigen::MatrixXd BZ = B * Z;
    d.splineP.push_back(Z.transpose() * sp.penalty() * Z);
    d.splineZ.push_back(std::move(Z));
    d.splines.push_back(std::move(sp));

    const double logP = std::log(static_cast<double>(
        w.msoas[static_cast<std::size_t>(batch[static_cast<std::size_t>(m)])].population_18_64));
    for (std::size_t i = 0; i < v.size(); ++i, ++row) {
      d.y(row) = static_cast<double>(v[i].n_positive);
      d.offset(row) = logP;
      d.row_x[static_cast<std::size_t>(row)] = xs[i];
      d.row_msoa[static_cast<std::size_t>(row)] = m;
      const int dow = day_of_week(v[i].date);
      d.row_dow[static_cast<std::size_t>(row)] = dow;

      trips.emplace_back(row, m, 1.0);
      for (int j = 0; j < 6; ++j) trips.emplace_back(row, d.col_dow0 + j, d.dowZ(dow, j));
      const int c0 = d.spline_col0(m);
      for (int j = 0; j < d.k - 1; ++j) {
        const double val = BZ(static_cast<Eigen::Index>(i), j);
        if (val != 0.0) trips.emplace_back(row, c0 + j, val);
      }
    }
  }

  d.X.resize(d.n, d.p);
  d.X.setFromTriplets(trips.begin(), trips.end());

  // Laplacian of the adjacency restricted to the batch
  std::vector<Eigen::Triplet<double>> ltrips;
  std::vector<int> degree(static_cast<std::size_t>(d.M), 0);
  for (int m = 0; m < d.M; ++m) {
    for (int nb : w.adjacency.neighbors(batch[static_cast<std::size_t>(m)])) {
      int ln = local[static_cast<std::size_t>(nb)];
      if (ln < 0) continue;  // edge leaves the batch
      ltrips.emplace_back(m, ln, -1.0);
      degree[static_cast<std::size_t>(m)]++;
    }
  }
  for (int m = 0; m < d.M; ++m) {
    if (degree[static_cast<std::size_t>(m)] == 0) d.isolated.push_back(m);
    ltrips.emplace_back(m, m, static_cast<double>(degree[static_cast<std::size_t>(m)]));
  }
  d.laplacian.resize(d.M, d.M);
  d.laplacian.setFromTriplets(ltrips.begin(), ltrips.end());
  return d;
}

struct GamFit {
  Eigen::VectorXd beta;
  std::vector<double> a;  // per-MSOA intercept (alpha + g)
  double alpha = 0;       // batch-mean intercept
  std::vector<double> g;  // neighbour field, sums to zero over the batch
  std::array<double, 7> dow{};  // expanded day effects, sum to zero
  Eigen::VectorXd eta;          // linear predictor including offset
  double edf = 0, dispersion = 1, gcv = 0, deviance = 0, pen_deviance = 0;
  bool converged = false;
  int iterations = 0;
};

namespace detail {

inline double quasi_poisson_deviance(const Eigen::VectorXd& y, const Eigen::VectorXd& mu) {
  double dev = 0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double yi = y(i), mi = mu(i);
    dev += 2.0 * ((yi > 0 ? yi * std::log(yi / mi) : 0.0) - (yi - mi));
  }
  return dev;
}

inline Eigen::VectorXd clamp_exp(const Eigen::VectorXd& eta) {
  Eigen::VectorXd mu(eta.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i) mu(i) = std::exp(std::clamp(eta(i), -300.0, 300.0));
  return mu;
}

}  // namespace detail

// Penalized IRLS with step-halving on the penalized deviance. The Gaussian
// branch is the exact one-step ridge solve used to cross-check the machinery.
// An explicit start overrides the default crude-rate initialization; the
// problem is convex, so any start reaches the same constrained components.
inline GamFit fit_gam(const BatchDesign& d, const GamSpec& spec,
                      GamFamily family = GamFamily::QuasiPoisson,
                      const Eigen::VectorXd* start = nullptr) {
  spec.validate();
  const Eigen::SparseMatrix<double> S = d.penalty(spec);
  GamFit fit;
  fit.beta = Eigen::VectorXd::Zero(d.p);

  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver;

  auto penalized = [&](const Eigen::VectorXd& beta, const Eigen::VectorXd& mu) {
    const double dev = family == GamFamily::Gaussian
                           ? (d.y - mu).squaredNorm()
                           : detail::quasi_poisson_deviance(d.y, mu);
    return dev + beta.dot(S * beta);
  };

  Eigen::VectorXd Wdiag(d.n);

  if (family == GamFamily::Gaussian) {
    Eigen::VectorXd z = d.y - d.offset;
    Eigen::SparseMatrix<double> XtX = Eigen::SparseMatrix<double>(d.X.transpose()) * d.X;
    Eigen::SparseMatrix<double> A = XtX + S;
    solver.compute(A);
    if (solver.info() != Eigen::Success)
      throw Error(ErrorKind::SingularSystem, "penalized normal equations not factorizable");
    fit.beta = solver.solve(d.X.transpose() * z);
    fit.eta = d.X * fit.beta + d.offset;
    fit.converged = true;
    fit.iterations = 1;
    Wdiag.setOnes();
  } else {
    if (start != nullptr) {
      if (start->size() != d.p) throw Error(ErrorKind::InvalidConfig, "start vector has wrong length");
      fit.beta = *start;
    } else {
      // start each MSOA's intercept at its crude log rate
      std::vector<double> ysum(static_cast<std::size_t>(d.M), 0.0), psum(static_cast<std::size_t>(d.M), 0.0);
      for (int i = 0; i < d.n; ++i) {
        ysum[static_cast<std::size_t>(d.row_msoa[static_cast<std::size_t>(i)])] += d.y(i);
        psum[static_cast<std::size_t>(d.row_msoa[static_cast<std::size_t>(i)])] += std::exp(d.offset(i));
      }
      for (int m = 0; m < d.M; ++m)
        fit.beta(m) = std::log((ysum[static_cast<std::size_t>(m)] + 0.5) / psum[static_cast<std::size_t>(m)]);
    }

    Eigen::VectorXd eta = d.X * fit.beta + d.offset;
    Eigen::VectorXd mu = detail::clamp_exp(eta);
    double pdev = penalized(fit.beta, mu);

    for (fit.iterations = 1; fit.iterations <= spec.max_iter; ++fit.iterations) {
      for (int i = 0; i < d.n; ++i) Wdiag(i) = std::max(mu(i), 1e-10);
      Eigen::VectorXd z(d.n);
      for (int i = 0; i < d.n; ++i) z(i) = (eta(i) - d.offset(i)) + (d.y(i) - mu(i)) / Wdiag(i);

      Eigen::SparseMatrix<double> XtW = Eigen::SparseMatrix<double>(d.X.transpose()) * Wdiag.asDiagonal();
      Eigen::SparseMatrix<double> A = XtW * d.X + S;
      solver.compute(A);
      if (solver.info() != Eigen::Success)
        throw Error(ErrorKind::SingularSystem, "penalized normal equations not factorizable");
      Eigen::VectorXd proposal = solver.solve(XtW * z);

      // step-halving: accept the first step that does not increase the
      // penalized deviance
      Eigen::VectorXd beta_new = proposal;
      double step = 1.0;
      Eigen::VectorXd eta_new, mu_new;
      double pdev_new = 0;
      for (int half = 0; half < 40; ++half) {
        eta_new = d.X * beta_new + d.offset;
        mu_new = detail::clamp_exp(eta_new);
        pdev_new = penalized(beta_new, mu_new);
        if (pdev_new <= pdev + 1e-12 * (1.0 + std::abs(pdev))) break;
        step *= 0.5;
        beta_new = fit.beta + step * (proposal - fit.beta);
      }

      const double delta = (beta_new - fit.beta).cwiseAbs().maxCoeff();
      fit.beta = beta_new;
      eta = eta_new;
      mu = mu_new;
      pdev = pdev_new;
      if (delta < spec.tol) {
        fit.converged = true;
        break;
      }
    }
    fit.iterations = std::min(fit.iterations, spec.max_iter);
    fit.eta = eta;
    for (int i = 0; i < d.n; ++i) Wdiag(i) = std::max(mu(i), 1e-10);
  }

  // effective degrees of freedom: tr((X'WX+S)^-1 X'WX), reusing the last
  // factorization (at convergence W is the converged weight)
  Eigen::SparseMatrix<double> XtW = Eigen::SparseMatrix<double>(d.X.transpose()) * Wdiag.asDiagonal();
  Eigen::SparseMatrix<double> XtWX = XtW * d.X;
  Eigen::SparseMatrix<double> A = XtWX + S;
  solver.compute(A);
  if (solver.info() != Eigen::Success)
    throw Error(ErrorKind::SingularSystem, "penalized normal equations not factorizable");
  Eigen::MatrixXd dense_XtWX(XtWX);
  double edf = 0;
  for (int j = 0; j < d.p; ++j) edf += solver.solve(dense_XtWX.col(j))(j);
  fit.edf = edf;

  const Eigen::VectorXd mu = family == GamFamily::Gaussian ? fit.eta : detail::clamp_exp(fit.eta);
  fit.deviance = family == GamFamily::Gaussian ? (d.y - mu).squaredNorm()
                                               : detail::quasi_poisson_deviance(d.y, mu);
  fit.pen_deviance = fit.deviance + fit.beta.dot(S * fit.beta);

  double pearson = 0;
  for (int i = 0; i < d.n; ++i) {
    const double v = family == GamFamily::Gaussian ? 1.0 : std::max(mu(i), 1e-10);
    pearson += (d.y(i) - mu(i)) * (d.y(i) - mu(i)) / v;
  }
  const double df_resid = std::max(1.0, static_cast<double>(d.n) - fit.edf);
  fit.dispersion = pearson / df_resid;
  fit.gcv = static_cast<double>(d.n) * fit.deviance / (df_resid * df_resid);

  fit.a.resize(static_cast<std::size_t>(d.M));
  for (int m = 0; m < d.M; ++m) fit.a[static_cast<std::size_t>(m)] = fit.beta(m);
  fit.alpha = 0;
  for (double v : fit.a) fit.alpha += v;
  fit.alpha /= static_cast<double>(d.M);
  fit.g.resize(static_cast<std::size_t>(d.M));
  for (int m = 0; m < d.M; ++m) fit.g[static_cast<std::size_t>(m)] = fit.a[static_cast<std::size_t>(m)] - fit.alpha;

  Eigen::VectorXd dow7 = d.dowZ * fit.beta.segment(d.col_dow0, 6);
  for (int i = 0; i < 7; ++i) fit.dow[static_cast<std::size_t>(i)] = dow7(i);

  for (Eigen::Index i = 0; i < fit.eta.size(); ++i)
    if (!std::isfinite(fit.eta(i)))
      throw Error(ErrorKind::NonConvergence, "non-finite linear predictor");
  return fit;
}

// Coordinate-wise GCV search over a shared log grid; the result always lies
// on the grid, starting from its midpoint.
inline GamSpec select_penalties(const BatchDesign& d, const GamSpec& base, GamFamily family,
                                const std::vector<double>& grid) {
  if (grid.empty()) throw Error(ErrorKind::InvalidConfig, "empty penalty grid");
  GamSpec best = base;
  best.lambda_time = best.lambda_mrf = best.lambda_dow = grid[grid.size() / 2];
  double best_gcv = fit_gam(d, best, family).gcv;

  for (int sweep = 0; sweep < 3; ++sweep) {
    bool changed = false;
    for (int coord = 0; coord < 3; ++coord) {
      for (double lam : grid) {
        GamSpec cand = best;
        (coord == 0 ? cand.lambda_time : coord == 1 ? cand.lambda_mrf : cand.lambda_dow) = lam;
        double gcv = fit_gam(d, cand, family).gcv;
        if (gcv < best_gcv - 1e-12) {
          best_gcv = gcv;
          best = cand;
          changed = true;
        }
      }
    }
    if (!changed) break;
  }
  return best;
}

inline std::vector<double> default_penalty_grid() {
  std::vector<double> g;
  for (int i = -4; i <= 4; ++i) g.push_back(std::pow(10.0, i));
  return g;
}

struct RateCell {
  int msoa = -1;  // global id
  int week = 0;
  double lambda_bar = 0;
};

// Weekly mean of exp(a_m + f(t,m)) over the week's 7 days; the day-of-week
// effect is deliberately left out, giving only the central trend per capita.
inline std::vector<RateCell> weekly_rates(const GamFit& fit, const BatchDesign& d, const WeekGrid& grid,
                                          int first_week, int n_weeks) {
  std::vector<RateCell> out;
  out.reserve(static_cast<std::size_t>(d.M) * static_cast<std::size_t>(n_weeks - first_week));
  for (int m = 0; m < d.M; ++m) {
    const double am = fit.a[static_cast<std::size_t>(m)];
    for (int wk = first_week; wk < n_weeks; ++wk) {
      double sum = 0;
      for (int day = 0; day < 7; ++day) {
        const double x = static_cast<double>((grid.start_of(wk) + day).days);
        sum += std::exp(am + d.spline_value(m, x, fit.beta));
      }
      out.push_back({d.msoas[static_cast<std::size_t>(m)], wk, sum / 7.0});
    }
  }
  return out;
}

struct BatchDiagnostics {
  int batch = 0;
  int n_msoas = 0;
  double edf = 0, dispersion = 0, gcv = 0;
  bool converged = false;
  int iterations = 0;
};

struct SmoothResult {
  std::vector<RateCell> rates;  // sorted (msoa, week)
  std::vector<BatchDiagnostics> diagnostics;
  std::size_t n_isolated = 0;
};

struct SmoothOptions {
  GamSpec spec;
  bool select = false;                       // GCV penalty selection per batch
  std::vector<double> grid = default_penalty_grid();
  int threads = 1;
  bool strict = false;                       // escalate NonConvergence
};

// Batches = connected adjacency components, chunked to the configured cap.
inline std::vector<std::vector<int>> make_batches(const AdjacencyGraph& adj, int cap) {
  std::vector<std::vector<int>> batches;
  for (auto& comp : adj.connected_components()) {
    for (std::size_t off = 0; off < comp.size(); off += static_cast<std::size_t>(cap)) {
      std::size_t end = std::min(comp.size(), off + static_cast<std::size_t>(cap));
      batches.emplace_back(comp.begin() + static_cast<std::ptrdiff_t>(off),
                           comp.begin() + static_cast<std::ptrdiff_t>(end));
    }
  }
  return batches;
}

inline SmoothResult smooth_rates(const std::vector<TestCount>& counts, const World& w,
                                 const SmoothOptions& opt) {
  auto batches = make_batches(w.adjacency, opt.spec.max_batch);
  const WeekGrid grid = w.week_grid();
  const int n_weeks = w.n_weeks();

  std::vector<SmoothResult> per(batches.size());
  std::vector<std::pair<ErrorKind, std::string>> failures(batches.size(),
                                                          {ErrorKind::NonConvergence, {}});
  parallel_for(batches.size(), opt.threads, [&](std::size_t b) {
    try {
      BatchDesign d = build_design(counts, w, batches[b], opt.spec);
      GamSpec spec = opt.select ? select_penalties(d, opt.spec, GamFamily::QuasiPoisson, opt.grid)
                                : opt.spec;
      GamFit fit = fit_gam(d, spec, GamFamily::QuasiPoisson);
      if (!fit.converged && opt.strict)
        throw Error(ErrorKind::NonConvergence,
                    "batch " + std::to_string(b) + " did not converge in " +
                        std::to_string(spec.max_iter) + " iterations");
      per[b].rates = weekly_rates(fit, d, grid, 0, n_weeks);
      per[b].diagnostics.push_back({static_cast<int>(b), d.M, fit.edf, fit.dispersion, fit.gcv,
                                    fit.converged, fit.iterations});
      per[b].n_isolated = d.isolated.size();
    } catch (const Error& e) {
      // surface the first failure after the parallel section ends
      failures[b] = {e.kind(), e.what()};
    }
  });
  for (const auto& f : failures)
    if (!f.second.empty()) throw Error(f.first, f.second);

  SmoothResult out;
  for (auto& r : per) {
    out.rates.insert(out.rates.end(), r.rates.begin(), r.rates.end());
    out.diagnostics.insert(out.diagnostics.end(), r.diagnostics.begin(), r.diagnostics.end());
    out.n_isolated += r.n_isolated;
  }
  std::sort(out.rates.begin(), out.rates.end(), [](const RateCell& a, const RateCell& b) {
    return std::tie(a.msoa, a.week) < std::tie(b.msoa, b.week);
  });
  return out;
}

inline void write_smoothed_rates_csv(const std::string& path, const std::vector<RateCell>& rates,
                                     const World& w) {
  const WeekGrid grid = w.week_grid();
  CsvWriter out(path);
  out.row("msoa", "week_start", "lambda_bar");
  for (const auto& r : rates)
    out.row(w.msoas[static_cast<std::size_t>(r.msoa)].code, to_iso(grid.start_of(r.week)), r.lambda_bar);
  out.commit();
}

inline std::vector<RateCell> read_smoothed_rates_csv(const std::string& path, const World& w) {
  CsvTable t = CsvTable::load(path);
  t.require_columns({"msoa", "week_start", "lambda_bar"});
  const WeekGrid grid = w.week_grid();
  std::vector<RateCell> rates;
  rates.reserve(t.n_rows());
  for (std::size_t r = 0; r < t.n_rows(); ++r) {
    RateCell c;
    const std::string& code = t.get_str(r, "msoa");
    c.msoa = w.msoa_id(code);
    if (c.msoa < 0) throw Error(ErrorKind::DanglingReference, path + ": unknown msoa '" + code + "'");
    Date ws = parse_date(t.get_str(r, "week_start"));
    c.week = grid.index_of(ws);
    if (grid.start_of(c.week) != ws)
      t.bad_cell(r, "week_start", t.get_str(r, "week_start"), "week start on the horizon grid");
    c.lambda_bar = t.get_double(r, "lambda_bar");
    if (!(c.lambda_bar > 0) || !std::isfinite(c.lambda_bar))
      t.bad_cell(r, "lambda_bar", t.get_str(r, "lambda_bar"), "positive finite rate");
    rates.push_back(c);
  }
  return rates;
}

inline void write_gam_diagnostics_csv(const std::string& path,
                                      const std::vector<BatchDiagnostics>& diags) {
  CsvWriter out(path);
  out.row("batch", "n_msoas", "edf", "dispersion", "converged", "iterations", "gcv");
  for (const auto& d : diags)
    out.row(d.batch, d.n_msoas, d.edf, d.dispersion, d.converged ? 1 : 0, d.iterations, d.gcv);
  out.commit();
}

}  // namespace crp
