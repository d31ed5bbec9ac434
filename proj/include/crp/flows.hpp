#pragma once

// Commuter-side covariates. Residential characteristics, vaccination uptake,
// and smoothed case rates live at the home MSOA; workplaces sit in workzones
// nested inside workplace MSOAs. Pushing a residential quantity through the
// home->workzone commuter flows, weighting by each workzone's industry mix,
// and summing workzones within a workplace MSOA gives the expected value of
// that quantity among commuters attending a given industry there.

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "crp/clusters.hpp"
#include "crp/csv.hpp"
#include "crp/dates.hpp"
#include "crp/errors.hpp"
#include "crp/gam.hpp"
#include "crp/taxonomy.hpp"

namespace crp {

// ---------------------------------------------------------------------------
// flow network

struct FlowEdge {
  int home = -1;      // MSOA id
  int workzone = -1;  // workzone id
  double commuters = 0.0;
};

// Inbound commuter flows grouped by workzone. Workzones with no inbound
// commuters are tracked separately; they cannot carry covariates.
class FlowNetwork {
 public:
  FlowNetwork() = default;

  FlowNetwork(const World& w, const std::vector<FlowEdge>& edges) {
    by_workzone_.resize(w.workzones.size());
    totals_.assign(w.workzones.size(), 0.0);
    for (const FlowEdge& e : edges) {
      if (e.commuters < 0 || !std::isfinite(e.commuters))
        throw Error(ErrorKind::SchemaViolation, "negative or non-finite commuter count");
      auto& in = by_workzone_[static_cast<std::size_t>(e.workzone)];
      for (const FlowEdge& prev : in)
        if (prev.home == e.home)
          throw Error(ErrorKind::SchemaViolation,
                      "duplicate flow edge " + w.msoas[static_cast<std::size_t>(e.home)].code +
                          " -> " + w.workzones[static_cast<std::size_t>(e.workzone)].code);
      in.push_back(e);
      totals_[static_cast<std::size_t>(e.workzone)] += e.commuters;
    }
    for (auto& in : by_workzone_)
      std::sort(in.begin(), in.end(),
                [](const FlowEdge& a, const FlowEdge& b) { return a.home < b.home; });
    for (std::size_t z = 0; z < totals_.size(); ++z)
      if (totals_[z] <= 0.0) dead_.push_back(static_cast<int>(z));
  }

  int n_workzones() const { return static_cast<int>(by_workzone_.size()); }

  const std::vector<FlowEdge>& inbound(int workzone) const {
    return by_workzone_[static_cast<std::size_t>(workzone)];
  }

  double total_inbound(int workzone) const { return totals_[static_cast<std::size_t>(workzone)]; }

  bool has_commuters(int workzone) const { return total_inbound(workzone) > 0.0; }

  // workzones with zero inbound flow, excluded from every aggregate
  const std::vector<int>& dead_workzones() const { return dead_; }

 private:
  std::vector<std::vector<FlowEdge>> by_workzone_;
  std::vector<double> totals_;
  std::vector<int> dead_;
};

inline FlowNetwork load_flows(const std::string& path, const World& w) {
  CsvTable t = CsvTable::load(path);
  t.require_columns({"home_msoa", "workzone", "n_commuters"});
  std::vector<FlowEdge> edges;
  edges.reserve(t.n_rows());
  for (std::size_t r = 0; r < t.n_rows(); ++r) {
    FlowEdge e;
    const std::string& home = t.get_str(r, "home_msoa");
    const std::string& wz = t.get_str(r, "workzone");
    e.home = w.msoa_id(home);
    if (e.home < 0) throw Error(ErrorKind::DanglingReference, path + ": unknown MSOA " + home);
    e.workzone = w.workzone_id(wz);
    if (e.workzone < 0)
      throw Error(ErrorKind::DanglingReference, path + ": unknown workzone " + wz);
    e.commuters = t.get_double(r, "n_commuters");
    if (e.commuters < 0 || !std::isfinite(e.commuters))
      t.bad_cell(r, "n_commuters", t.get_str(r, "n_commuters"), "non-negative count");
    edges.push_back(e);
  }
  return FlowNetwork(w, edges);
}

// ---------------------------------------------------------------------------
// industry mix per workzone

// Share of each sector's businesses within a workzone; rows sum to one for
// every workzone present in the file.
class MixTable {
 public:
  MixTable() = default;

  explicit MixTable(int n_workzones)
      : shares_(Eigen::MatrixXd::Zero(n_workzones, kSectorCount)),
        present_(static_cast<std::size_t>(n_workzones), 0) {}

  void set(int workzone, Sector s, double share) {
    shares_(workzone, static_cast<int>(s)) = share;
    present_[static_cast<std::size_t>(workzone)] = 1;
  }

  double share(int workzone, Sector s) const { return shares_(workzone, static_cast<int>(s)); }

  bool present(int workzone) const { return present_[static_cast<std::size_t>(workzone)] != 0; }

  void validate(const World& w) const {
    for (int z = 0; z < shares_.rows(); ++z) {
      if (!present(z)) continue;
      double sum = 0;
      for (int s = 0; s < kSectorCount; ++s) {
        const double v = shares_(z, s);
        if (v < 0 || v > 1 || !std::isfinite(v))
          throw Error(ErrorKind::SchemaViolation,
                      "industry share outside [0,1] for workzone " +
                          w.workzones[static_cast<std::size_t>(z)].code);
        sum += v;
      }
      if (std::abs(sum - 1.0) > 1e-9)
        throw Error(ErrorKind::SchemaViolation,
                    "industry shares for workzone " + w.workzones[static_cast<std::size_t>(z)].code +
                        " sum to " + format_double(sum) + ", expected 1");
    }
  }

 private:
  Eigen::MatrixXd shares_;
  std::vector<char> present_;
};

inline MixTable load_industry_mix(const std::string& path, const World& w) {
  CsvTable t = CsvTable::load(path);
  t.require_columns({"workzone", "sector", "share"});
  MixTable mix(static_cast<int>(w.workzones.size()));
  std::vector<std::array<char, kSectorCount>> seen(w.workzones.size(), std::array<char, kSectorCount>{});
  for (std::size_t r = 0; r < t.n_rows(); ++r) {
    const std::string& wz = t.get_str(r, "workzone");
    const int z = w.workzone_id(wz);
    if (z < 0) throw Error(ErrorKind::DanglingReference, path + ": unknown workzone " + wz);
    auto s = parse_sector(t.get_str(r, "sector"));
    if (!s) t.bad_cell(r, "sector", t.get_str(r, "sector"), "industry sector");
    auto& flag = seen[static_cast<std::size_t>(z)][static_cast<int>(*s)];
    if (flag)
      throw Error(ErrorKind::SchemaViolation,
                  path + ": duplicate share for workzone " + wz + ", sector " + to_string(*s));
    flag = 1;
    mix.set(z, *s, t.get_double(r, "share"));
  }
  mix.validate(w);
  return mix;
}

// ---------------------------------------------------------------------------
// residential profiles

inline constexpr std::array<const char*, 4> kAgeGroups = {"18-29", "30-44", "45-59", "60-64"};
inline constexpr std::array<const char*, 2> kSexGroups = {"Female", "Male"};
inline constexpr std::array<const char*, 4> kEthnicityGroups = {"White", "Asian",
                                                                "Black/African/Caribbean",
                                                                "Mixed/Multiple/Other"};
inline constexpr std::array<const char*, 5> kTravelModes = {"Train", "Taxi/vehicle passenger",
                                                            "Single occupancy", "Bus/metro/tram",
                                                            "Other"};

// Census share families for the residents of one home MSOA; each family sums
// to one. IMD is the share of residents in each deprivation quintile (1..5).
struct ResidentialProfile {
  std::array<double, 4> age{};
  std::array<double, 2> sex{};
  std::array<double, 4> ethnicity{};
  std::array<double, 5> travel{};
  std::array<double, 5> imd{};
};

namespace detail {

inline void check_share_family(const double* v, std::size_t n, const std::string& what,
                               const std::string& msoa) {
  double sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (v[i] < 0 || v[i] > 1 || !std::isfinite(v[i]))
      throw Error(ErrorKind::SchemaViolation, what + " share outside [0,1] for MSOA " + msoa);
    sum += v[i];
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw Error(ErrorKind::SchemaViolation,
                what + " shares for MSOA " + msoa + " sum to " + format_double(sum) + ", expected 1");
}

}  // namespace detail

inline const std::array<const char*, 21>& residential_profile_columns() {
  static const std::array<const char*, 21> cols = {
      "age_18_29",     "age_30_44",
      "age_45_59",     "age_60_64",
      "sex_female",    "sex_male",
      "eth_white",     "eth_asian",
      "eth_black_african_caribbean", "eth_mixed_multiple_other",
      "travel_train",  "travel_taxi_vehicle_passenger",
      "travel_single_occupancy",     "travel_bus_metro_tram",
      "travel_other",  "imd_q1",
      "imd_q2",        "imd_q3",
      "imd_q4",        "imd_q5",
      "msoa"};
  return cols;
}

inline std::vector<ResidentialProfile> load_residential_profiles(const std::string& path,
                                                                 const World& w) {
  CsvTable t = CsvTable::load(path);
  for (const char* c : residential_profile_columns()) t.column(c);
  std::vector<ResidentialProfile> profiles(w.msoas.size());
  std::vector<char> seen(w.msoas.size(), 0);
  for (std::size_t r = 0; r < t.n_rows(); ++r) {
    const std::string& code = t.get_str(r, "msoa");
    const int m = w.msoa_id(code);
    if (m < 0) throw Error(ErrorKind::DanglingReference, path + ": unknown MSOA " + code);
    if (seen[static_cast<std::size_t>(m)])
      throw Error(ErrorKind::SchemaViolation, path + ": duplicate profile for MSOA " + code);
    seen[static_cast<std::size_t>(m)] = 1;
    ResidentialProfile& p = profiles[static_cast<std::size_t>(m)];
    p.age = {t.get_double(r, "age_18_29"), t.get_double(r, "age_30_44"),
             t.get_double(r, "age_45_59"), t.get_double(r, "age_60_64")};
    p.sex = {t.get_double(r, "sex_female"), t.get_double(r, "sex_male")};
    p.ethnicity = {t.get_double(r, "eth_white"), t.get_double(r, "eth_asian"),
                   t.get_double(r, "eth_black_african_caribbean"),
                   t.get_double(r, "eth_mixed_multiple_other")};
    p.travel = {t.get_double(r, "travel_train"), t.get_double(r, "travel_taxi_vehicle_passenger"),
                t.get_double(r, "travel_single_occupancy"),
                t.get_double(r, "travel_bus_metro_tram"), t.get_double(r, "travel_other")};
    p.imd = {t.get_double(r, "imd_q1"), t.get_double(r, "imd_q2"), t.get_double(r, "imd_q3"),
             t.get_double(r, "imd_q4"), t.get_double(r, "imd_q5")};
    detail::check_share_family(p.age.data(), p.age.size(), "age", code);
    detail::check_share_family(p.sex.data(), p.sex.size(), "sex", code);
    detail::check_share_family(p.ethnicity.data(), p.ethnicity.size(), "ethnicity", code);
    detail::check_share_family(p.travel.data(), p.travel.size(), "travel", code);
    detail::check_share_family(p.imd.data(), p.imd.size(), "imd", code);
  }
  for (std::size_t m = 0; m < seen.size(); ++m)
    if (!seen[m])
      throw Error(ErrorKind::SchemaViolation, path + ": no profile for MSOA " + w.msoas[m].code);
  return profiles;
}

// ---------------------------------------------------------------------------
// weekly per-MSOA series (dense msoa x week matrices)

// Reads one value column keyed (msoa, week_start) into a dense matrix over the
// study grid; every (MSOA, week) cell must be present exactly once.
inline Eigen::MatrixXd load_weekly_matrix(const CsvTable& t, const World& w,
                                          const std::string& value_col, double lo, double hi) {
  const WeekGrid grid = w.week_grid();
  const int n_weeks = w.n_weeks();
  Eigen::MatrixXd out(static_cast<Eigen::Index>(w.msoas.size()), n_weeks);
  out.setConstant(std::numeric_limits<double>::quiet_NaN());
  for (std::size_t r = 0; r < t.n_rows(); ++r) {
    const std::string& code = t.get_str(r, "msoa");
    const int m = w.msoa_id(code);
    if (m < 0) throw Error(ErrorKind::DanglingReference, t.source() + ": unknown MSOA " + code);
    const Date d = parse_date(t.get_str(r, "week_start"));
    if (d != grid.start_of(grid.index_of(d)) || grid.index_of(d) < 0 ||
        grid.index_of(d) >= n_weeks)
      t.bad_cell(r, "week_start", t.get_str(r, "week_start"), "week start on the study grid");
    const int wk = grid.index_of(d);
    if (!std::isnan(out(m, wk)))
      throw Error(ErrorKind::SchemaViolation,
                  t.source() + ": duplicate row for MSOA " + code + ", week " + to_iso(d));
    const double v = t.get_double(r, value_col);
    if (!std::isfinite(v) || v < lo || v > hi)
      t.bad_cell(r, value_col, t.get_str(r, value_col), "value in expected range");
    out(m, wk) = v;
  }
  if (out.hasNaN())
    throw Error(ErrorKind::SchemaViolation,
                t.source() + ": missing (msoa, week) cells; the series must cover the full grid");
  return out;
}

// Commuter-side vaccination uptake by home MSOA: cumulative share with two or
// more doses, which can only grow through time.
inline Eigen::MatrixXd load_vaccination(const std::string& path, const World& w) {
  CsvTable t = CsvTable::load(path);
  t.require_columns({"msoa", "week_start", "prop_two_doses"});
  Eigen::MatrixXd m = load_weekly_matrix(t, w, "prop_two_doses", 0.0, 1.0);
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 1; c < m.cols(); ++c)
      if (m(r, c) < m(r, c - 1))
        throw Error(ErrorKind::SchemaViolation,
                    path + ": two-dose proportion decreases over time for MSOA " +
                        w.msoas[static_cast<std::size_t>(r)].code);
  return m;
}

struct ResidentialWeekly {
  Eigen::MatrixXd case_rate;  // proportion of residents testing positive
  Eigen::MatrixXd dose1;      // share with >=1 dose
  Eigen::MatrixXd dose2;      // share with >=2 doses
};

inline ResidentialWeekly load_residential_weekly(const std::string& path, const World& w) {
  CsvTable t = CsvTable::load(path);
  t.require_columns({"msoa", "week_start", "resident_case_rate", "resident_dose1",
                     "resident_dose2"});
  ResidentialWeekly out;
  out.case_rate = load_weekly_matrix(t, w, "resident_case_rate", 0.0, 1.0);
  out.dose1 = load_weekly_matrix(t, w, "resident_dose1", 0.0, 1.0);
  out.dose2 = load_weekly_matrix(t, w, "resident_dose2", 0.0, 1.0);
  return out;
}

// Smoothed case-rate cells (from the spatial smoother) as a dense matrix.
inline Eigen::MatrixXd rates_to_matrix(const std::vector<RateCell>& cells, const World& w) {
  const int n_weeks = w.n_weeks();
  Eigen::MatrixXd out(static_cast<Eigen::Index>(w.msoas.size()), n_weeks);
  out.setConstant(std::numeric_limits<double>::quiet_NaN());
  for (const RateCell& c : cells) {
    if (c.msoa < 0 || c.msoa >= static_cast<int>(w.msoas.size()) || c.week < 0 ||
        c.week >= n_weeks)
      throw Error(ErrorKind::OutOfRange, "rate cell outside the study grid");
    if (!std::isnan(out(c.msoa, c.week)))
      throw Error(ErrorKind::SchemaViolation, "duplicate smoothed-rate cell");
    out(c.msoa, c.week) = c.lambda_bar;
  }
  if (out.hasNaN())
    throw Error(ErrorKind::InsufficientData,
                "smoothed rates do not cover every (MSOA, week) cell");
  return out;
}

// ---------------------------------------------------------------------------
// single-workzone operations

// Flow-weighted mean of a per-home-MSOA quantity over a workzone's inbound
// commuters; with smoothed case rates this is the commuter case rate C_w.
inline double commuter_case_rate(const FlowNetwork& flows, const std::vector<double>& per_msoa,
                                 int workzone) {
  const double total = flows.total_inbound(workzone);
  if (total <= 0.0)
    throw Error(ErrorKind::NoCommuters,
                "workzone " + std::to_string(workzone) + " has no inbound commuters");
  double acc = 0;
  for (const FlowEdge& e : flows.inbound(workzone))
    acc += per_msoa[static_cast<std::size_t>(e.home)] * e.commuters;
  return acc / total;
}

// Commuters are assumed to spread uniformly over a workzone's industries, so
// the per-industry rate is the workzone rate scaled by the industry share.
inline double industry_rate(double c_w, double rho) { return c_w * rho; }

// Employee-weighted mean proximity and permanence over the SIC divisions of a
// sector within an MSOA. Permanence is returned as a proportion.
inline std::pair<double, double> sic_weighted_workplace_vars(const World& w, int msoa, Sector s) {
  const auto& divs = w.employees_by_msoa_sector_sic[static_cast<std::size_t>(msoa)]
                                                   [static_cast<int>(s)];
  double employees = 0, prox = 0, perm = 0;
  for (const auto& [code, count] : divs) {
    const SicDivision& d = w.sic.at(code);
    employees += static_cast<double>(count);
    prox += d.proximity * static_cast<double>(count);
    perm += d.permanence * static_cast<double>(count);
  }
  if (employees <= 0)
    throw Error(ErrorKind::NoEmployees, "no employees for " + std::string(to_string(s)) +
                                            " in MSOA " + w.msoas[static_cast<std::size_t>(msoa)].code);
  return {prox / employees, perm / employees};
}

// Lagged rates enter the models on the log scale; epsilon keeps zero rates
// finite without disturbing rates of realistic size.
inline double lagged_log(double prev_rate, double epsilon) { return std::log(epsilon + prev_rate); }

// ---------------------------------------------------------------------------
// the covariate frame

struct CovariateRow {
  int msoa = -1;
  Sector industry = Sector::Services;
  int week = 0;  // week the outcome is observed; lags reach back one week

  // workplace block
  double proximity = 0;        // 0..100 score
  double permanence = 0;       // percentage
  MobilityClass mobility = MobilityClass::Suburban;

  // commuter block (percentages)
  double vax2 = 0;
  std::array<double, 4> age{};
  std::array<double, 4> ethnicity{};
  std::array<double, 2> sex{};
  double imd_mean = 0;  // mean quintile, 1..5
  int imd_mode = 0;     // modal quintile, 1..5

  // travel block (percentages)
  std::array<double, 5> travel{};

  // lagged rate block (log scale)
  double log_commuter_rate_lag = 0;
  double log_cluster_rate_lag = 0;
  double log_cluster_rate_other_lag = 0;

  // residential block
  int resident_imd = 0;          // modal quintile among residents
  double resident_case_rate = 0;  // proportion, same week
  double resident_dose1 = 0;      // percentage
  double resident_dose2 = 0;      // percentage
};

struct ExposureReport {
  std::size_t n_dead_workzones = 0;       // zero inbound flow
  std::size_t n_pairs_no_commuters = 0;   // workplaces exist, no commuter weight
  std::size_t n_pairs_no_employees = 0;   // workplaces exist, zero recorded employees
  std::vector<std::string> notes;         // one line per omission class
};

struct CovariateFrame {
  WeekGrid grid;
  int n_weeks = 0;
  int first_week = 1;  // earliest week with a full lag history
  std::vector<CovariateRow> rows;  // sorted by (msoa, industry, week)
  ExposureReport report;
};

struct ExposureInputs {
  const FlowNetwork* flows = nullptr;
  const MixTable* mix = nullptr;
  const std::vector<ResidentialProfile>* profiles = nullptr;
  const Eigen::MatrixXd* lambda = nullptr;      // smoothed case rate, msoa x week
  const Eigen::MatrixXd* vax2 = nullptr;        // commuter two-dose share, msoa x week
  const ResidentialWeekly* residential = nullptr;
  const ClusterSeries* series = nullptr;        // full series, before any exclusion
};

struct ExposureOptions {
  double epsilon = 1e-10;  // floor inside log() for zero rates
};

namespace detail {

// static residential quantities pushed through the network, in column order
inline constexpr int kStaticPush = 4 + 2 + 4 + 5 + 5;  // age, sex, eth, travel, imd

inline void fill_static(const ResidentialProfile& p, double weight, double* acc) {
  int k = 0;
  for (double v : p.age) acc[k++] += weight * v;
  for (double v : p.sex) acc[k++] += weight * v;
  for (double v : p.ethnicity) acc[k++] += weight * v;
  for (double v : p.travel) acc[k++] += weight * v;
  for (double v : p.imd) acc[k++] += weight * v;
}

}  // namespace detail

// Builds the full (msoa, industry, week) covariate frame. Pairs that cannot
// carry covariates (no commuter weight, or no recorded employees) are omitted
// and counted in the report, mirroring the incomplete permutation set of the
// study data.
inline CovariateFrame build_covariates(const World& w, const ExposureInputs& in,
                                       const ExposureOptions& opt = {}) {
  if (!in.flows || !in.mix || !in.profiles || !in.lambda || !in.vax2 || !in.residential ||
      !in.series)
    throw Error(ErrorKind::InvalidConfig, "exposure inputs incomplete");
  if (opt.epsilon <= 0)
    throw Error(ErrorKind::InvalidConfig, "epsilon must be positive");

  const int n_msoas = static_cast<int>(w.msoas.size());
  const int n_zones = static_cast<int>(w.workzones.size());
  const int n_weeks = w.n_weeks();
  CovariateFrame frame;
  frame.grid = w.week_grid();
  frame.n_weeks = n_weeks;
  frame.report.n_dead_workzones = in.flows->dead_workzones().size();
  if (frame.report.n_dead_workzones > 0)
    frame.report.notes.push_back(std::to_string(frame.report.n_dead_workzones) +
                                 " workzone(s) with no inbound commuters excluded");

  // per-workzone flow sums: static share families and the two weekly series
  Eigen::MatrixXd static_sums = Eigen::MatrixXd::Zero(n_zones, detail::kStaticPush);
  Eigen::MatrixXd rate_sums = Eigen::MatrixXd::Zero(n_zones, n_weeks);
  Eigen::MatrixXd vax_sums = Eigen::MatrixXd::Zero(n_zones, n_weeks);
  for (int z = 0; z < n_zones; ++z) {
    if (!in.flows->has_commuters(z)) continue;
    if (!in.mix->present(z))
      throw Error(ErrorKind::SchemaViolation,
                  "no industry mix for workzone " + w.workzones[static_cast<std::size_t>(z)].code);
    std::array<double, detail::kStaticPush> acc{};
    for (const FlowEdge& e : in.flows->inbound(z)) {
      detail::fill_static((*in.profiles)[static_cast<std::size_t>(e.home)], e.commuters,
                          acc.data());
      rate_sums.row(z) += e.commuters * in.lambda->row(e.home);
      vax_sums.row(z) += e.commuters * in.vax2->row(e.home);
    }
    for (int k = 0; k < detail::kStaticPush; ++k) static_sums(z, k) = acc[static_cast<std::size_t>(k)];
  }

  // workzones grouped under their parent (workplace) MSOA
  std::vector<std::vector<int>> zones_of(static_cast<std::size_t>(n_msoas));
  for (int z = 0; z < n_zones; ++z)
    zones_of[static_cast<std::size_t>(w.workzones[static_cast<std::size_t>(z)].msoa)].push_back(z);

  // active-cluster counts re-indexed per (msoa, sector, week), plus per-MSOA
  // weekly totals so "other industries" is a subtraction, not a second pass
  std::vector<std::array<int, kSectorCount>> cell_of(static_cast<std::size_t>(n_msoas));
  for (auto& a : cell_of) a.fill(-1);
  std::vector<std::vector<double>> cell_active;
  std::vector<long> total_workplaces(static_cast<std::size_t>(n_msoas), 0);
  Eigen::MatrixXd total_active = Eigen::MatrixXd::Zero(n_msoas, n_weeks);
  for (const SeriesRow& row : in.series->rows) {
    if (row.n_workplaces != w.n_workplaces(row.msoa, row.industry))
      throw Error(ErrorKind::SchemaViolation,
                  "cluster series workplace counts disagree with the ingested world");
    int& cell = cell_of[static_cast<std::size_t>(row.msoa)][static_cast<int>(row.industry)];
    if (cell < 0) {
      cell = static_cast<int>(cell_active.size());
      cell_active.emplace_back(static_cast<std::size_t>(n_weeks),
                               -std::numeric_limits<double>::infinity());
      total_workplaces[static_cast<std::size_t>(row.msoa)] += row.n_workplaces;
    }
    double& slot = cell_active[static_cast<std::size_t>(cell)][static_cast<std::size_t>(row.week)];
    if (slot >= 0)
      throw Error(ErrorKind::SchemaViolation, "duplicate cluster series row");
    slot = static_cast<double>(row.active);
    total_active(row.msoa, row.week) += static_cast<double>(row.active);
  }
  for (const auto& series : cell_active)
    for (double v : series)
      if (v < 0)
        throw Error(ErrorKind::SchemaViolation, "cluster series is not dense over the grid");

  for (int m = 0; m < n_msoas; ++m) {
    for (int s = 0; s < kSectorCount; ++s) {
      const Sector sector = static_cast<Sector>(s);
      const long n_work = w.n_workplaces(m, sector);
      if (n_work <= 0) continue;

      // commuter weight for this (MSOA, industry): sum of rho * inbound flow
      double denom = 0;
      for (int z : zones_of[static_cast<std::size_t>(m)])
        if (in.flows->has_commuters(z)) denom += in.mix->share(z, sector) * in.flows->total_inbound(z);
      if (denom <= 0) {
        frame.report.n_pairs_no_commuters++;
        continue;
      }

      double proximity, permanence;
      try {
        std::tie(proximity, permanence) = sic_weighted_workplace_vars(w, m, sector);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::NoEmployees) throw;
        frame.report.n_pairs_no_employees++;
        continue;
      }

      // pushed static shares
      std::array<double, detail::kStaticPush> pushed{};
      Eigen::VectorXd rate(n_weeks), vax(n_weeks);
      rate.setZero();
      vax.setZero();
      for (int z : zones_of[static_cast<std::size_t>(m)]) {
        if (!in.flows->has_commuters(z)) continue;
        const double rho = in.mix->share(z, sector);
        if (rho == 0) continue;
        for (int k = 0; k < detail::kStaticPush; ++k) pushed[static_cast<std::size_t>(k)] += rho * static_sums(z, k);
        rate += rho * rate_sums.row(z).transpose();
        vax += rho * vax_sums.row(z).transpose();
      }
      for (double& v : pushed) v /= denom;
      rate /= denom;
      vax /= denom;

      // IMD summaries from the pushed quintile distribution
      const double* imd = pushed.data() + 15;
      double imd_mean = 0;
      int imd_mode = 1;
      for (int q = 0; q < 5; ++q) {
        imd_mean += (q + 1) * imd[q];
        if (imd[q] > imd[imd_mode - 1]) imd_mode = q + 1;
      }

      const int cell = cell_of[static_cast<std::size_t>(m)][s];
      if (cell < 0)
        throw Error(ErrorKind::SchemaViolation,
                    "cluster series misses " + std::string(to_string(sector)) + " in MSOA " +
                        w.msoas[static_cast<std::size_t>(m)].code);
      const std::vector<double>& own = cell_active[static_cast<std::size_t>(cell)];
      const long other_workplaces = total_workplaces[static_cast<std::size_t>(m)] - n_work;

      for (int t = frame.first_week; t < n_weeks; ++t) {
        CovariateRow row;
        row.msoa = m;
        row.industry = sector;
        row.week = t;
        row.proximity = proximity;
        row.permanence = 100.0 * permanence;
        row.mobility = w.msoas[static_cast<std::size_t>(m)].mobility;
        row.vax2 = 100.0 * vax(t);
        for (int k = 0; k < 4; ++k) row.age[static_cast<std::size_t>(k)] = 100.0 * pushed[static_cast<std::size_t>(k)];
        for (int k = 0; k < 2; ++k) row.sex[static_cast<std::size_t>(k)] = 100.0 * pushed[static_cast<std::size_t>(4 + k)];
        for (int k = 0; k < 4; ++k) row.ethnicity[static_cast<std::size_t>(k)] = 100.0 * pushed[static_cast<std::size_t>(6 + k)];
        for (int k = 0; k < 5; ++k) row.travel[static_cast<std::size_t>(k)] = 100.0 * pushed[static_cast<std::size_t>(10 + k)];
        row.imd_mean = imd_mean;
        row.imd_mode = imd_mode;

        const double own_prev = own[static_cast<std::size_t>(t - 1)] / static_cast<double>(n_work);
        const double other_prev =
            other_workplaces > 0
                ? (total_active(m, t - 1) - own[static_cast<std::size_t>(t - 1)]) /
                      static_cast<double>(other_workplaces)
                : 0.0;
        row.log_commuter_rate_lag = lagged_log(rate(t - 1), opt.epsilon);
        row.log_cluster_rate_lag = lagged_log(own_prev, opt.epsilon);
        row.log_cluster_rate_other_lag = lagged_log(other_prev, opt.epsilon);

        row.resident_imd = w.msoas[static_cast<std::size_t>(m)].imd_quintile;
        row.resident_case_rate = in.residential->case_rate(m, t);
        row.resident_dose1 = 100.0 * in.residential->dose1(m, t);
        row.resident_dose2 = 100.0 * in.residential->dose2(m, t);
        frame.rows.push_back(row);
      }
    }
  }
  if (frame.report.n_pairs_no_commuters > 0)
    frame.report.notes.push_back(std::to_string(frame.report.n_pairs_no_commuters) +
                                 " (MSOA, industry) pair(s) without commuter weight omitted");
  if (frame.report.n_pairs_no_employees > 0)
    frame.report.notes.push_back(std::to_string(frame.report.n_pairs_no_employees) +
                                 " (MSOA, industry) pair(s) without recorded employees omitted");
  return frame;
}

// ---------------------------------------------------------------------------
// covariate frame I/O

inline const std::vector<std::string>& covariate_columns() {
  static const std::vector<std::string> cols = {
      "proximity", "permanence", "mobility", "commuter_vax2",
      "age_18_29", "age_30_44", "age_45_59", "age_60_64",
      "eth_white", "eth_asian", "eth_black_african_caribbean", "eth_mixed_multiple_other",
      "sex_female", "sex_male", "commuter_imd_mean", "commuter_imd_mode",
      "travel_train", "travel_taxi_vehicle_passenger", "travel_single_occupancy",
      "travel_bus_metro_tram", "travel_other",
      "log_commuter_rate_lag", "log_cluster_rate_lag", "log_cluster_rate_other_lag",
      "resident_imd", "resident_case_rate", "resident_dose1", "resident_dose2"};
  return cols;
}

// Numeric value of a named frame column. "mobility" is categorical and must
// be read from the row directly; asking for it (or an unknown name) throws.
inline double covariate_value(const CovariateRow& r, const std::string& col) {
  if (col == "proximity") return r.proximity;
  if (col == "permanence") return r.permanence;
  if (col == "commuter_vax2") return r.vax2;
  if (col == "age_18_29") return r.age[0];
  if (col == "age_30_44") return r.age[1];
  if (col == "age_45_59") return r.age[2];
  if (col == "age_60_64") return r.age[3];
  if (col == "eth_white") return r.ethnicity[0];
  if (col == "eth_asian") return r.ethnicity[1];
  if (col == "eth_black_african_caribbean") return r.ethnicity[2];
  if (col == "eth_mixed_multiple_other") return r.ethnicity[3];
  if (col == "sex_female") return r.sex[0];
  if (col == "sex_male") return r.sex[1];
  if (col == "commuter_imd_mean") return r.imd_mean;
  if (col == "commuter_imd_mode") return r.imd_mode;
  if (col == "travel_train") return r.travel[0];
  if (col == "travel_taxi_vehicle_passenger") return r.travel[1];
  if (col == "travel_single_occupancy") return r.travel[2];
  if (col == "travel_bus_metro_tram") return r.travel[3];
  if (col == "travel_other") return r.travel[4];
  if (col == "log_commuter_rate_lag") return r.log_commuter_rate_lag;
  if (col == "log_cluster_rate_lag") return r.log_cluster_rate_lag;
  if (col == "log_cluster_rate_other_lag") return r.log_cluster_rate_other_lag;
  if (col == "resident_imd") return r.resident_imd;
  if (col == "resident_case_rate") return r.resident_case_rate;
  if (col == "resident_dose1") return r.resident_dose1;
  if (col == "resident_dose2") return r.resident_dose2;
  throw Error(ErrorKind::UnknownRiskFactor, "no numeric covariate column '" + col + "'");
}

inline void write_covariates_csv(const std::string& path, const CovariateFrame& frame,
                                 const World& w) {
  CsvWriter out(path);
  out.field("msoa");
  out.field("industry");
  out.field("week_start");
  for (const std::string& c : covariate_columns()) out.field(c);
  out.end_row();
  for (const CovariateRow& r : frame.rows) {
    out.field(w.msoas[static_cast<std::size_t>(r.msoa)].code);
    out.field(to_string(r.industry));
    out.field(to_iso(frame.grid.start_of(r.week)));
    out.field(r.proximity);
    out.field(r.permanence);
    out.field(to_string(r.mobility));
    out.field(r.vax2);
    for (double v : r.age) out.field(v);
    for (double v : r.ethnicity) out.field(v);
    for (double v : r.sex) out.field(v);
    out.field(r.imd_mean);
    out.field(r.imd_mode);
    for (double v : r.travel) out.field(v);
    out.field(r.log_commuter_rate_lag);
    out.field(r.log_cluster_rate_lag);
    out.field(r.log_cluster_rate_other_lag);
    out.field(r.resident_imd);
    out.field(r.resident_case_rate);
    out.field(r.resident_dose1);
    out.field(r.resident_dose2);
    out.end_row();
  }
  out.commit();
}

inline CovariateFrame read_covariates_csv(const std::string& path, const World& w) {
  CsvTable t = CsvTable::load(path);
  t.require_columns({"msoa", "industry", "week_start"});
  for (const std::string& c : covariate_columns()) t.column(c);
  CovariateFrame frame;
  frame.grid = w.week_grid();
  frame.n_weeks = w.n_weeks();
  frame.rows.reserve(t.n_rows());
  for (std::size_t r = 0; r < t.n_rows(); ++r) {
    CovariateRow row;
    const std::string& code = t.get_str(r, "msoa");
    row.msoa = w.msoa_id(code);
    if (row.msoa < 0) throw Error(ErrorKind::DanglingReference, path + ": unknown MSOA " + code);
    auto s = parse_sector(t.get_str(r, "industry"));
    if (!s) t.bad_cell(r, "industry", t.get_str(r, "industry"), "industry sector");
    row.industry = *s;
    const Date d = parse_date(t.get_str(r, "week_start"));
    row.week = frame.grid.index_of(d);
    if (row.week < frame.first_week || row.week >= frame.n_weeks ||
        frame.grid.start_of(row.week) != d)
      t.bad_cell(r, "week_start", t.get_str(r, "week_start"), "modelled week start");
    row.proximity = t.get_double(r, "proximity");
    row.permanence = t.get_double(r, "permanence");
    auto mob = parse_mobility(t.get_str(r, "mobility"));
    if (!mob) t.bad_cell(r, "mobility", t.get_str(r, "mobility"), "mobility class");
    row.mobility = *mob;
    row.vax2 = t.get_double(r, "commuter_vax2");
    row.age = {t.get_double(r, "age_18_29"), t.get_double(r, "age_30_44"),
               t.get_double(r, "age_45_59"), t.get_double(r, "age_60_64")};
    row.ethnicity = {t.get_double(r, "eth_white"), t.get_double(r, "eth_asian"),
                     t.get_double(r, "eth_black_african_caribbean"),
                     t.get_double(r, "eth_mixed_multiple_other")};
    row.sex = {t.get_double(r, "sex_female"), t.get_double(r, "sex_male")};
    row.imd_mean = t.get_double(r, "commuter_imd_mean");
    row.imd_mode = static_cast<int>(t.get_int(r, "commuter_imd_mode"));
    row.travel = {t.get_double(r, "travel_train"), t.get_double(r, "travel_taxi_vehicle_passenger"),
                  t.get_double(r, "travel_single_occupancy"),
                  t.get_double(r, "travel_bus_metro_tram"), t.get_double(r, "travel_other")};
    row.log_commuter_rate_lag = t.get_double(r, "log_commuter_rate_lag");
    row.log_cluster_rate_lag = t.get_double(r, "log_cluster_rate_lag");
    row.log_cluster_rate_other_lag = t.get_double(r, "log_cluster_rate_other_lag");
    row.resident_imd = static_cast<int>(t.get_int(r, "resident_imd"));
    row.resident_case_rate = t.get_double(r, "resident_case_rate");
    row.resident_dose1 = t.get_double(r, "resident_dose1");
    row.resident_dose2 = t.get_double(r, "resident_dose2");
    frame.rows.push_back(row);
  }
  return frame;
}

}  // namespace crp
