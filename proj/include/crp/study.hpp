#pragma once

// Study orchestration. A registry of risk factors (each a block of covariate
// columns with a reporting baseline) is crossed with three adjustment tiers,
// every industry, and the applicable study periods. Tier rules follow a fixed
// causal ordering of the risk-factor groups; model frames are assembled per
// cell and fitted independently, so one bad cell cannot take down the run.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "crp/clusters.hpp"
#include "crp/errors.hpp"
#include "crp/flows.hpp"
#include "crp/nbglm.hpp"
#include "crp/taxonomy.hpp"

namespace crp {

enum class RiskFactorGroup : int {
  WorkplaceCharacteristics = 0,
  CommuterCharacteristics,
  MethodOfTravel,
};

inline const char* to_string(RiskFactorGroup g) {
  switch (g) {
    case RiskFactorGroup::WorkplaceCharacteristics: return "workplace";
    case RiskFactorGroup::CommuterCharacteristics: return "commuter";
    case RiskFactorGroup::MethodOfTravel: return "travel";
  }
  throw Error(ErrorKind::InvalidConfig, "unknown risk-factor group");
}

enum class AdjustmentTier : int { Unadjusted = 1, Minimal = 2, FullyAdjusted = 3 };

inline int tier_number(AdjustmentTier t) { return static_cast<int>(t); }

inline const std::array<AdjustmentTier, 3>& all_tiers() {
  static const std::array<AdjustmentTier, 3> tiers = {
      AdjustmentTier::Unadjusted, AdjustmentTier::Minimal, AdjustmentTier::FullyAdjusted};
  return tiers;
}

// One reported row of a risk factor. A term with a column enters the design
// matrix; a term without one is the reference level, rendered as "baseline"
// in its listed position.
struct RiskTerm {
  std::string column;  // empty for the baseline row
  std::string label;

  bool baseline() const { return column.empty(); }
};

struct RiskFactor {
  std::string id;
  RiskFactorGroup group;
  std::string heading;          // table section line, e.g. "Commuter - age"
  std::vector<RiskTerm> terms;  // reporting order, baseline included
  bool industry_restricted = false;  // only fitted for configured industries
  bool period_split = false;         // fitted per variant period, never Overall
  bool categorical = false;          // terms are dummy columns of one factor

  std::vector<std::string> design_columns() const {
    std::vector<std::string> cols;
    for (const RiskTerm& t : terms)
      if (!t.baseline()) cols.push_back(t.column);
    return cols;
  }
};

// Every modelled variable, grouped and labelled as reported. Compositional
// blocks (age, ethnicity, sex, travel) drop one share as the baseline.
// Mobility is dummy-coded against Suburban.
inline const std::vector<RiskFactor>& risk_factors() {
  static const std::vector<RiskFactor> reg = {
      {"proximity",
       RiskFactorGroup::WorkplaceCharacteristics,
       "Workplace - proximity",
       {{"proximity", "Physical proximity in the workplace"}},
       true,
       false,
       false},
      {"permanence",
       RiskFactorGroup::WorkplaceCharacteristics,
       "Workplace - permanence",
       {{"permanence", "Proportion of workers on permanent contracts"}},
       true,
       false,
       false},
      {"mobility_class",
       RiskFactorGroup::WorkplaceCharacteristics,
       "Workplace - mobility class",
       {{"mobility_exurban", "Mobility class - Exurban"},
        {"mobility_metropolitan", "Mobility class - Metropolitan"},
        {"mobility_rural", "Mobility class - Rural"},
        {"", "Mobility class - Suburban"}},
       false,
       false,
       true},
      {"commuter_vaccination",
       RiskFactorGroup::CommuterCharacteristics,
       "Commuter - vaccination",
       {{"commuter_vax2", "Proportion of commuters with 2 or more vaccination doses"}},
       false,
       true,
       false},
      {"commuter_age",
       RiskFactorGroup::CommuterCharacteristics,
       "Commuter - age",
       {{"age_18_29", "Proportion of commuters aged 18-29"},
        {"", "Proportion of commuters aged 30-44"},
        {"age_45_59", "Proportion of commuters aged 45-59"},
        {"age_60_64", "Proportion of commuters aged 60-64"}},
       false,
       false,
       false},
      {"commuter_ethnicity",
       RiskFactorGroup::CommuterCharacteristics,
       "Commuter - ethnicity",
       {{"eth_asian", "Proportion of commuters with an asian ethnicity"},
        {"eth_black_african_caribbean",
         "Proportion of commuters with a black/african/caribbean ethnicity"},
        {"eth_mixed_multiple_other",
         "Proportion of commuters with a mixed/multiple/other ethnicity"},
        {"", "Proportion of commuters with a white ethnicity"}},
       false,
       false,
       false},
      {"commuter_sex",
       RiskFactorGroup::CommuterCharacteristics,
       "Commuter - sex",
       {{"sex_female", "Proportion of commuters who identify as Female"},
        {"", "Proportion of commuters who identify as Male"}},
       false,
       false,
       false},
      {"commuter_imd",
       RiskFactorGroup::CommuterCharacteristics,
       "Commuter - IMD",
       {{"commuter_imd_mean", "Commuter IMD quintile"}},
       false,
       false,
       false},
      {"travel_mode",
       RiskFactorGroup::MethodOfTravel,
       "Method of travel to work",
       {{"travel_bus_metro_tram", "Proportion of commuters using bus/metro/tram"},
        {"travel_other", "Proportion of commuters using other transport"},
        {"", "Proportion of commuters using single occupancy"},
        {"travel_taxi_vehicle_passenger",
         "Proportion of commuters using taxi/vehicle passenger"},
        {"travel_train", "Proportion of commuters using train"}},
       false,
       false,
       false},
  };
  return reg;
}

inline const RiskFactor& find_risk_factor(const std::string& id) {
  for (const RiskFactor& rf : risk_factors())
    if (rf.id == id) return rf;
  throw Error(ErrorKind::UnknownRiskFactor, "no registered risk factor '" + id + "'");
}

// Causal ordering of the risk-factor groups. Residential conditions are
// upstream of everything and live in the minimal set, so only the three
// groups need an order; earlier groups may adjust models of later ones.
struct DagConfig {
  std::vector<RiskFactorGroup> precedence = {RiskFactorGroup::CommuterCharacteristics,
                                             RiskFactorGroup::MethodOfTravel,
                                             RiskFactorGroup::WorkplaceCharacteristics};

  void validate() const {
    if (precedence.size() != 3)
      throw Error(ErrorKind::InvalidConfig, "group precedence must list all three groups");
    std::set<int> seen;
    for (RiskFactorGroup g : precedence) seen.insert(static_cast<int>(g));
    if (seen.size() != 3)
      throw Error(ErrorKind::InvalidConfig, "group precedence repeats a group");
  }

  // groups strictly before g, in precedence order
  std::vector<RiskFactorGroup> prior_groups(RiskFactorGroup g) const {
    std::vector<RiskFactorGroup> out;
    for (RiskFactorGroup p : precedence) {
      if (p == g) break;
      out.push_back(p);
    }
    return out;
  }
};

struct AdjustmentPlan {
  std::string risk_factor;
  AdjustmentTier tier = AdjustmentTier::Unadjusted;
  std::vector<std::string> focal;      // the factor's own design columns
  std::vector<std::string> adjusters;  // confounder columns, fixed order

  std::vector<std::string> columns() const {
    std::vector<std::string> all = focal;
    all.insert(all.end(), adjusters.begin(), adjusters.end());
    return all;
  }
};

namespace detail {

inline const std::vector<std::string>& mobility_dummy_columns() {
  static const std::vector<std::string> cols = {"mobility_exurban", "mobility_metropolitan",
                                                "mobility_rural"};
  return cols;
}

// Resolves a design column against a covariate row; mobility dummies are
// derived from the row's class, everything else is a frame column.
inline double design_value(const CovariateRow& r, const std::string& col) {
  if (col == "mobility_exurban") return r.mobility == MobilityClass::Exurban ? 1.0 : 0.0;
  if (col == "mobility_metropolitan") return r.mobility == MobilityClass::Metropolitan ? 1.0 : 0.0;
  if (col == "mobility_rural") return r.mobility == MobilityClass::Rural ? 1.0 : 0.0;
  return covariate_value(r, col);
}

inline std::vector<std::string> group_columns(RiskFactorGroup g) {
  std::vector<std::string> cols;
  for (const RiskFactor& rf : risk_factors())
    if (rf.group == g)
      for (const RiskTerm& t : rf.terms)
        if (!t.baseline()) cols.push_back(t.column);
  return cols;
}

inline void push_unique(std::vector<std::string>& v, const std::string& s) {
  if (std::find(v.begin(), v.end(), s) == v.end()) v.push_back(s);
}

}  // namespace detail

// Columns shared by every minimal-adjusted model: local residential
// conditions and the lagged epidemic state of the cell itself.
inline const std::vector<std::string>& minimal_adjustment_columns() {
  static const std::vector<std::string> cols = {
      "resident_imd",          "resident_dose1",       "resident_dose2",
      "resident_case_rate",    "log_commuter_rate_lag", "log_cluster_rate_lag",
      "log_cluster_rate_other_lag"};
  return cols;
}

// Tier rules. Minimal adds the common confounders plus the mobility class of
// the workplace's MSOA; mobility is itself a workplace-group risk factor, so
// it stays out of workplace-focal models (no factor is ever adjusted for a
// variable of its own group, including itself). FullyAdjusted adds every
// variable of the groups before the focal group in the causal order.
inline AdjustmentPlan build_plan(const std::string& risk_factor_id, const DagConfig& dag,
                                 AdjustmentTier tier) {
  dag.validate();
  const RiskFactor& rf = find_risk_factor(risk_factor_id);

  AdjustmentPlan plan;
  plan.risk_factor = rf.id;
  plan.tier = tier;
  plan.focal = rf.design_columns();
  if (tier == AdjustmentTier::Unadjusted) return plan;

  if (rf.group != RiskFactorGroup::WorkplaceCharacteristics)
    for (const std::string& c : detail::mobility_dummy_columns()) plan.adjusters.push_back(c);
  for (const std::string& c : minimal_adjustment_columns()) plan.adjusters.push_back(c);
  if (tier == AdjustmentTier::Minimal) return plan;

  for (RiskFactorGroup g : dag.prior_groups(rf.group))
    for (const std::string& c : detail::group_columns(g)) {
      if (std::find(plan.focal.begin(), plan.focal.end(), c) != plan.focal.end()) continue;
      detail::push_unique(plan.adjusters, c);
    }
  return plan;
}

struct StudyConfig {
  std::vector<std::string> periods = {"Overall"};
  std::vector<std::string> vaccination_periods = {"Delta", "Omicron"};
  std::vector<Sector> industries;  // empty: every industry present in the frame
  std::vector<Sector> proximity_permanence_industries = {
      Sector::Services, Sector::Utilities, Sector::TransportDistributionWarehousing,
      Sector::Manufacturing, Sector::Construction};
  std::vector<std::string> risk_factor_ids;  // empty: full registry
  bool education_exclusion = true;
  double ci_z = 1.6448536269514722;  // normal 95th percentile: two-sided 90% CI
  DagConfig dag;
  NbControls controls;
};

namespace detail {

// A week belongs to the period containing its start; a partial trailing week
// counts toward the period it starts in, so the final modelled week runs up
// to the period's end date.
inline bool week_within(const WeekGrid& grid, int week, const DateRange& range) {
  return range.contains(grid.start_of(week));
}

inline bool education_excluded_week(const WeekGrid& grid, int week) {
  const Date ws = grid.start_of(week);
  const Date we = grid.end_of(week);
  for (const DateRange& r : education_exclusion_ranges())
    if (r.overlaps(ws, we)) return true;
  return false;
}

inline const SeriesRow* find_series_row(const ClusterSeries& s, int msoa, Sector industry,
                                        int week) {
  const auto key = std::make_tuple(msoa, static_cast<int>(industry), week);
  auto it = std::lower_bound(s.rows.begin(), s.rows.end(), key,
                             [](const SeriesRow& r, const std::tuple<int, int, int>& k) {
                               return std::make_tuple(r.msoa, static_cast<int>(r.industry),
                                                      r.week) < k;
                             });
  if (it == s.rows.end() || it->msoa != msoa || it->industry != industry || it->week != week)
    return nullptr;
  return &*it;
}

}  // namespace detail

// Builds the per-cell model frame: one row per (MSOA, week) of the industry
// with the week fully inside the period, joined to the outcome series for the
// response and the workplace-count offset.
inline ModelMatrix assemble(const CovariateFrame& frame, const ClusterSeries& series,
                            const AdjustmentPlan& plan, Sector industry,
                            const StudyPeriod& period, const StudyConfig& cfg = {}) {
  const RiskFactor& rf = find_risk_factor(plan.risk_factor);
  if (rf.period_split) {
    const auto& allowed = cfg.vaccination_periods;
    if (std::find(allowed.begin(), allowed.end(), period.name) == allowed.end())
      throw Error(ErrorKind::VaccinationPeriodRule,
                  "'" + rf.id + "' is fitted per variant period; '" + period.name +
                      "' is not one of them");
  }

  const std::vector<std::string> cols = plan.columns();
  std::vector<const CovariateRow*> picked;
  std::vector<const SeriesRow*> outcome;
  for (const CovariateRow& r : frame.rows) {
    if (r.industry != industry) continue;
    if (!detail::week_within(frame.grid, r.week, period.range)) continue;
    if (cfg.education_exclusion && industry == Sector::Education &&
        detail::education_excluded_week(frame.grid, r.week))
      continue;
    const SeriesRow* s = detail::find_series_row(series, r.msoa, industry, r.week);
    if (s == nullptr)
      throw Error(ErrorKind::DanglingReference,
                  "covariate row (" + std::to_string(r.msoa) + ", " + to_string(industry) +
                      ", week " + std::to_string(r.week) + ") has no outcome row");
    picked.push_back(&r);
    outcome.push_back(s);
  }

  ModelMatrix mm;
  const Eigen::Index n = static_cast<Eigen::Index>(picked.size());
  if (n == 0) throw Error(ErrorKind::EmptyModelFrame, "no rows for " + to_string(industry) +
                                                          " in period " + period.name);
  mm.y.resize(n);
  mm.offset.resize(n);
  mm.X.resize(n, static_cast<Eigen::Index>(cols.size()) + 1);
  mm.names.reserve(cols.size() + 1);
  mm.names.push_back("(intercept)");
  for (const std::string& c : cols) mm.names.push_back(c);
  for (Eigen::Index i = 0; i < n; ++i) {
    mm.y(i) = static_cast<double>(outcome[static_cast<std::size_t>(i)]->active);
    mm.offset(i) =
        std::log(static_cast<double>(outcome[static_cast<std::size_t>(i)]->n_workplaces));
    mm.X(i, 0) = 1.0;
    for (std::size_t c = 0; c < cols.size(); ++c)
      mm.X(i, static_cast<Eigen::Index>(c) + 1) =
          detail::design_value(*picked[static_cast<std::size_t>(i)], cols[c]);
  }
  mm.validate();
  return mm;
}

struct FitTerm {
  std::string column;
  std::string label;
  double beta = 0;
  double se = 0;
  double ci_lo = 0;
  double ci_hi = 0;
  // per-unit percentage change in the cluster rate, with its interval
  double pct = 0;
  double pct_lo = 0;
  double pct_hi = 0;
};

enum class CellStatus { Fitted, Ineligible, Failed };

inline const char* to_string(CellStatus s) {
  switch (s) {
    case CellStatus::Fitted: return "fitted";
    case CellStatus::Ineligible: return "ineligible";
    case CellStatus::Failed: return "failed";
  }
  throw Error(ErrorKind::InvalidConfig, "unknown cell status");
}

struct FitCell {
  std::string risk_factor;
  AdjustmentTier tier = AdjustmentTier::Unadjusted;
  Sector industry = Sector::Services;
  std::string period;
  CellStatus status = CellStatus::Failed;
  std::string note;  // why the cell is not fitted; empty when it is
  std::vector<FitTerm> terms;
  NbFit fit;              // populated only when status == Fitted
  std::size_t n_rows = 0;
};

struct StudyResult {
  StudyConfig config;  // as resolved for the run
  std::vector<FitCell> cells;

  const FitCell* cell(const std::string& risk_factor, AdjustmentTier tier, Sector industry,
                      const std::string& period) const {
    for (const FitCell& c : cells)
      if (c.risk_factor == risk_factor && c.tier == tier && c.industry == industry &&
          c.period == period)
        return &c;
    return nullptr;
  }
};

namespace detail {

inline std::vector<Sector> industries_present(const CovariateFrame& frame) {
  std::array<char, kSectorCount> seen{};
  for (const CovariateRow& r : frame.rows) seen[static_cast<int>(r.industry)] = 1;
  std::vector<Sector> out;
  for (int s = 0; s < kSectorCount; ++s)
    if (seen[s]) out.push_back(static_cast<Sector>(s));
  return out;
}

inline FitCell fit_one_cell(const CovariateFrame& frame, const ClusterSeries& series,
                            const AdjustmentPlan& plan, const RiskFactor& rf, Sector industry,
                            const StudyPeriod& period, const StudyConfig& cfg) {
  FitCell cell;
  cell.risk_factor = rf.id;
  cell.tier = plan.tier;
  cell.industry = industry;
  cell.period = period.name;
  try {
    ModelMatrix mm = assemble(frame, series, plan, industry, period, cfg);
    cell.n_rows = static_cast<std::size_t>(mm.y.size());
    NbFit fit = fit_nb(mm, cfg.controls);
    if (!fit.converged) {
      cell.status = CellStatus::Failed;
      cell.note = "fit did not converge";
      return cell;
    }
    std::size_t f = 0;
    for (const RiskTerm& rt : rf.terms) {
      if (rt.baseline()) continue;
      const int input_col = static_cast<int>(f++) + 1;  // input 0 is the intercept
      auto it = std::find(fit.kept.begin(), fit.kept.end(), input_col);
      if (it == fit.kept.end()) {
        cell.status = CellStatus::Failed;
        cell.note = "column '" + rt.column + "' has no variation in this industry";
        cell.terms.clear();
        return cell;
      }
      const Eigen::Index p = static_cast<Eigen::Index>(it - fit.kept.begin());
      FitTerm term;
      term.column = rt.column;
      term.label = rt.label;
      if (rf.period_split) term.label += " - " + period.name;
      term.beta = fit.beta(p);
      term.se = std::sqrt(fit.cov(p, p));
      term.ci_lo = term.beta - cfg.ci_z * term.se;
      term.ci_hi = term.beta + cfg.ci_z * term.se;
      term.pct = 100.0 * std::expm1(term.beta);
      term.pct_lo = 100.0 * std::expm1(term.ci_lo);
      term.pct_hi = 100.0 * std::expm1(term.ci_hi);
      cell.terms.push_back(term);
    }
    cell.status = CellStatus::Fitted;
    cell.fit = std::move(fit);
  } catch (const Error& e) {
    cell.status = CellStatus::Failed;
    cell.note = e.what();  // what() already carries the error kind prefix
    cell.terms.clear();
  }
  return cell;
}

}  // namespace detail

// Runs the full grid of fits. Cells are attempted independently: a failure is
// recorded on the cell and the run continues. Industry eligibility for the
// restricted workplace variables is decided before assembling anything.
inline StudyResult run_study(const StudyConfig& config, const World& world,
                             const CovariateFrame& frame, const ClusterSeries& series) {
  StudyResult out;
  out.config = config;
  out.config.dag.validate();
  if (out.config.industries.empty()) out.config.industries = detail::industries_present(frame);
  if (out.config.risk_factor_ids.empty())
    for (const RiskFactor& rf : risk_factors()) out.config.risk_factor_ids.push_back(rf.id);

  for (const std::string& id : out.config.risk_factor_ids) {
    const RiskFactor& rf = find_risk_factor(id);
    const std::vector<std::string>& period_names =
        rf.period_split ? out.config.vaccination_periods : out.config.periods;
    for (AdjustmentTier tier : all_tiers()) {
      const AdjustmentPlan plan = build_plan(rf.id, out.config.dag, tier);
      for (Sector industry : out.config.industries) {
        const auto& allowed = out.config.proximity_permanence_industries;
        const bool eligible =
            !rf.industry_restricted ||
            std::find(allowed.begin(), allowed.end(), industry) != allowed.end();
        for (const std::string& pname : period_names) {
          const StudyPeriod& period = world.periods.by_name(pname);
          if (!eligible) {
            FitCell cell;
            cell.risk_factor = rf.id;
            cell.tier = tier;
            cell.industry = industry;
            cell.period = period.name;
            cell.status = CellStatus::Ineligible;
            cell.note = "'" + rf.id + "' is not considered for " + to_string(industry);
            out.cells.push_back(std::move(cell));
            continue;
          }
          out.cells.push_back(
              detail::fit_one_cell(frame, series, plan, rf, industry, period, out.config));
        }
      }
    }
  }
  return out;
}

// Descriptive summary: one column per industry, means weighted by each
// MSOA's workplace count (the modelling unit), modal values for the ordinal
// and categorical variables.
struct Table2 {
  enum class Kind {
    Count,          // grouped integer total
    Score,          // unit-free 0..100 score, 2 significant figures
    Percent,        // percentage, 3 significant figures + '%'
    Rate,           // small nonnegative rate, 2 significant figures
    LogRate,        // mean of a log column, 2 decimals
    ModalClass,     // MobilityClass index
    ModalQuintile,  // 1..5
  };
  struct Row {
    std::string section;
    std::string label;
    Kind kind = Kind::Score;
    std::vector<double> values;  // one per industry
  };
  std::vector<Sector> industries;
  std::vector<Row> rows;
};

namespace detail {

struct IndustryAccumulator {
  double wsum = 0;                      // total row weight
  std::map<std::string, double> means;  // weighted sums, divided at the end
  std::array<double, kMobilityCount> mobility_w{};
  std::array<double, 6> commuter_imd_w{};  // quintiles 1..5
  std::array<double, 6> resident_imd_w{};
  long workplaces = 0;
  double active_sum = 0;
  long cell_weeks = 0;
};

}  // namespace detail

inline Table2 descriptives(const World& world, const CovariateFrame& frame,
                           const ClusterSeries& series, const StudyConfig& config = {}) {
  Table2 t;
  t.industries =
      config.industries.empty() ? detail::industries_present(frame) : config.industries;

  const std::vector<std::string> mean_cols = {
      "proximity",      "permanence",
      "commuter_vax2",  "age_18_29",
      "age_30_44",      "age_45_59",
      "age_60_64",      "eth_asian",
      "eth_black_african_caribbean", "eth_mixed_multiple_other",
      "eth_white",      "travel_bus_metro_tram",
      "travel_taxi_vehicle_passenger", "travel_other",
      "travel_train",   "travel_single_occupancy",
      "sex_female",     "sex_male",
      "resident_dose2", "log_commuter_rate_lag",
      "log_cluster_rate_other_lag",    "log_cluster_rate_lag"};

  std::map<Sector, detail::IndustryAccumulator> acc;
  for (Sector s : t.industries) acc[s];

  for (const CovariateRow& r : frame.rows) {
    auto it = acc.find(r.industry);
    if (it == acc.end()) continue;
    detail::IndustryAccumulator& a = it->second;
    const double w = static_cast<double>(world.n_workplaces(r.msoa, r.industry));
    a.wsum += w;
    for (const std::string& c : mean_cols) a.means[c] += w * covariate_value(r, c);
    if (r.week == frame.first_week) {  // static per MSOA: weight each one once
      a.mobility_w[static_cast<int>(r.mobility)] += w;
      a.commuter_imd_w[static_cast<std::size_t>(r.imd_mode)] += w;
      a.resident_imd_w[static_cast<std::size_t>(r.resident_imd)] += w;
      a.workplaces += world.n_workplaces(r.msoa, r.industry);
    }
  }
  for (const SeriesRow& r : series.rows) {
    auto it = acc.find(r.industry);
    if (it == acc.end()) continue;
    it->second.active_sum += static_cast<double>(r.active);
    it->second.cell_weeks += 1;
  }

  auto mean_row = [&](const std::string& section, const std::string& label,
                      const std::string& col, Table2::Kind kind) {
    Table2::Row row{section, label, kind, {}};
    for (Sector s : t.industries) {
      const detail::IndustryAccumulator& a = acc.at(s);
      row.values.push_back(a.wsum > 0 ? a.means.at(col) / a.wsum : 0.0);
    }
    t.rows.push_back(std::move(row));
  };
  auto modal = [](const auto& weights) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(weights.size()); ++i)
      if (weights[static_cast<std::size_t>(i)] > weights[static_cast<std::size_t>(best)])
        best = i;
    return static_cast<double>(best);
  };

  {
    Table2::Row row{"Workplace characteristics", "Total number of workplaces included",
                    Table2::Kind::Count, {}};
    for (Sector s : t.industries)
      row.values.push_back(static_cast<double>(acc.at(s).workplaces));
    t.rows.push_back(std::move(row));
  }
  mean_row("Workplace characteristics", "Mean physical proximity in the workplace", "proximity",
           Table2::Kind::Score);
  mean_row("Workplace characteristics", "Mean proportion of workers on permanent contracts",
           "permanence", Table2::Kind::Percent);
  {
    Table2::Row row{"Workplace characteristics", "Most common mobility class",
                    Table2::Kind::ModalClass, {}};
    for (Sector s : t.industries) row.values.push_back(modal(acc.at(s).mobility_w));
    t.rows.push_back(std::move(row));
  }

  {
    Table2::Row row{"Case and cluster rates", "Mean number of active clusters",
                    Table2::Kind::Rate, {}};
    for (Sector s : t.industries) {
      const detail::IndustryAccumulator& a = acc.at(s);
      row.values.push_back(a.cell_weeks > 0 ? a.active_sum / static_cast<double>(a.cell_weeks)
                                            : 0.0);
    }
    t.rows.push_back(std::move(row));
  }
  mean_row("Case and cluster rates", "Mean log_commuter_rate_lag", "log_commuter_rate_lag",
           Table2::Kind::LogRate);
  mean_row("Case and cluster rates", "Mean log_cluster_rate_other_lag",
           "log_cluster_rate_other_lag", Table2::Kind::LogRate);
  mean_row("Case and cluster rates", "Mean log_cluster_rate_lag", "log_cluster_rate_lag",
           Table2::Kind::LogRate);

  const std::string cc = "Commuter characteristics";
  mean_row(cc, "Mean proportion of commuters with 2 or more vaccination doses", "commuter_vax2",
           Table2::Kind::Percent);
  mean_row(cc, "Mean proportion of commuters aged 18-29", "age_18_29", Table2::Kind::Percent);
  mean_row(cc, "Mean proportion of commuters aged 30-44", "age_30_44", Table2::Kind::Percent);
  mean_row(cc, "Mean proportion of commuters aged 45-59", "age_45_59", Table2::Kind::Percent);
  mean_row(cc, "Mean proportion of commuters aged 60-64", "age_60_64", Table2::Kind::Percent);
  mean_row(cc, "Mean proportion of commuters with an asian ethnicity", "eth_asian",
           Table2::Kind::Percent);
  mean_row(cc, "Mean proportion of commuters with a black/african/caribbean ethnicity",
           "eth_black_african_caribbean", Table2::Kind::Percent);
  mean_row(cc, "Mean proportion of commuters with a mixed/multiple/other ethnicity",
           "eth_mixed_multiple_other", Table2::Kind::Percent);
  mean_row(cc, "Mean proportion of commuters with a white ethnicity", "eth_white",
           Table2::Kind::Percent);
  mean_row(cc, "Mean proportion of commuters using bus/metro/tram", "travel_bus_metro_tram",
           Table2::Kind::Percent);
  mean_row(cc, "Mean proportion of commuters using taxi/vehicle passenger",
           "travel_taxi_vehicle_passenger", Table2::Kind::Percent);
  mean_row(cc, "Mean proportion of commuters using other transport", "travel_other",
           Table2::Kind::Percent);
  mean_row(cc, "Mean proportion of commuters using train", "travel_train", Table2::Kind::Percent);
  mean_row(cc, "Mean proportion of commuters using single occupancy", "travel_single_occupancy",
           Table2::Kind::Percent);
  mean_row(cc, "Mean proportion of commuters who identify as Female", "sex_female",
           Table2::Kind::Percent);
  mean_row(cc, "Mean proportion of commuters who identify as Male", "sex_male",
           Table2::Kind::Percent);
  {
    Table2::Row row{cc, "Most common IMD quintile among commuters", Table2::Kind::ModalQuintile,
                    {}};
    for (Sector s : t.industries) row.values.push_back(modal(acc.at(s).commuter_imd_w));
    t.rows.push_back(std::move(row));
  }

  mean_row("Residential characteristics",
           "Mean proportion of residents with 2 or more vaccination doses", "resident_dose2",
           Table2::Kind::Percent);
  {
    Table2::Row row{"Residential characteristics", "Most common IMD quintile among residents",
                    Table2::Kind::ModalQuintile, {}};
    for (Sector s : t.industries) row.values.push_back(modal(acc.at(s).resident_imd_w));
    t.rows.push_back(std::move(row));
  }
  return t;
}

// ---------------------------------------------------------------------------
// result artifact
//
// The fitted grid travels between pipeline stages as JSON: every cell with its
// status and note, plus the resolved configuration the tables are rendered
// from. Fit internals beyond theta and convergence stay in the coefficient
// dump (fits.csv); they are not needed to rebuild the tables.

inline constexpr int kStudyCellsSchema = 1;

inline void write_study_cells_json(const std::string& path, const StudyResult& res) {
  auto sector_names_of = [](const std::vector<Sector>& v) {
    std::vector<std::string> names;
    names.reserve(v.size());
    for (Sector s : v) names.push_back(to_string(s));
    return names;
  };

  nlohmann::ordered_json j;
  j["schema_version"] = kStudyCellsSchema;
  j["config"] = {
      {"periods", res.config.periods},
      {"vaccination_periods", res.config.vaccination_periods},
      {"industries", sector_names_of(res.config.industries)},
      {"proximity_permanence_industries",
       sector_names_of(res.config.proximity_permanence_industries)},
      {"risk_factor_ids", res.config.risk_factor_ids},
      {"education_exclusion", res.config.education_exclusion},
      {"ci_z", res.config.ci_z},
  };
  nlohmann::ordered_json cells = nlohmann::ordered_json::array();
  for (const FitCell& c : res.cells) {
    nlohmann::ordered_json cell;
    cell["risk_factor"] = c.risk_factor;
    cell["tier"] = tier_number(c.tier);
    cell["industry"] = to_string(c.industry);
    cell["period"] = c.period;
    cell["status"] = to_string(c.status);
    cell["note"] = c.note;
    cell["n_rows"] = c.n_rows;
    if (c.status == CellStatus::Fitted) {
      // a diverged dispersion means the fit completed as Poisson; JSON has no
      // infinity, so that case is carried as null
      if (std::isfinite(c.fit.theta))
        cell["theta"] = c.fit.theta;
      else
        cell["theta"] = nullptr;
      cell["poisson_limit"] = c.fit.poisson_limit;
      cell["converged"] = c.fit.converged;
    }
    nlohmann::ordered_json terms = nlohmann::ordered_json::array();
    for (const FitTerm& t : c.terms)
      terms.push_back({{"column", t.column},
                       {"label", t.label},
                       {"beta", t.beta},
                       {"se", t.se},
                       {"ci_lo", t.ci_lo},
                       {"ci_hi", t.ci_hi},
                       {"pct", t.pct},
                       {"pct_lo", t.pct_lo},
                       {"pct_hi", t.pct_hi}});
    cell["terms"] = std::move(terms);
    cells.push_back(std::move(cell));
  }
  j["cells"] = std::move(cells);

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::MissingFile, "cannot open for write: " + tmp);
    out << j.dump(2) << '\n';
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw Error(ErrorKind::MissingFile, "cannot rename " + tmp + " to " + path);
}

namespace detail {

inline Sector sector_or_throw(const std::string& name, const std::string& where) {
  const std::optional<Sector> s = parse_sector(name);
  if (!s) throw Error(ErrorKind::SchemaViolation, where + ": unknown industry '" + name + "'");
  return *s;
}

inline CellStatus cell_status_or_throw(const std::string& name, const std::string& where) {
  if (name == "fitted") return CellStatus::Fitted;
  if (name == "ineligible") return CellStatus::Ineligible;
  if (name == "failed") return CellStatus::Failed;
  throw Error(ErrorKind::SchemaViolation, where + ": unknown cell status '" + name + "'");
}

}  // namespace detail

inline StudyResult read_study_cells_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::MissingFile, path);
  StudyResult res;
  try {
    nlohmann::json j = nlohmann::json::parse(in);
    if (j.at("schema_version").get<int>() != kStudyCellsSchema)
      throw Error(ErrorKind::SchemaViolation,
                  path + ": unsupported schema_version " + j.at("schema_version").dump());
    const nlohmann::json& cfg = j.at("config");
    res.config.periods = cfg.at("periods").get<std::vector<std::string>>();
    res.config.vaccination_periods =
        cfg.at("vaccination_periods").get<std::vector<std::string>>();
    res.config.industries.clear();
    for (const auto& name : cfg.at("industries"))
      res.config.industries.push_back(detail::sector_or_throw(name.get<std::string>(), path));
    res.config.proximity_permanence_industries.clear();
    for (const auto& name : cfg.at("proximity_permanence_industries"))
      res.config.proximity_permanence_industries.push_back(
          detail::sector_or_throw(name.get<std::string>(), path));
    res.config.risk_factor_ids = cfg.at("risk_factor_ids").get<std::vector<std::string>>();
    res.config.education_exclusion = cfg.at("education_exclusion").get<bool>();
    res.config.ci_z = cfg.at("ci_z").get<double>();

    for (const auto& cj : j.at("cells")) {
      FitCell c;
      c.risk_factor = cj.at("risk_factor").get<std::string>();
      const int tier = cj.at("tier").get<int>();
      if (tier < 1 || tier > 3)
        throw Error(ErrorKind::SchemaViolation, path + ": tier out of range: " + std::to_string(tier));
      c.tier = static_cast<AdjustmentTier>(tier);
      c.industry = detail::sector_or_throw(cj.at("industry").get<std::string>(), path);
      c.period = cj.at("period").get<std::string>();
      c.status = detail::cell_status_or_throw(cj.at("status").get<std::string>(), path);
      c.note = cj.at("note").get<std::string>();
      c.n_rows = cj.at("n_rows").get<std::size_t>();
      if (c.status == CellStatus::Fitted) {
        c.fit.theta = cj.at("theta").is_null() ? std::numeric_limits<double>::infinity()
                                               : cj.at("theta").get<double>();
        c.fit.poisson_limit = cj.at("poisson_limit").get<bool>();
        c.fit.converged = cj.at("converged").get<bool>();
      }
      for (const auto& tj : cj.at("terms")) {
        FitTerm t;
        t.column = tj.at("column").get<std::string>();
        t.label = tj.at("label").get<std::string>();
        t.beta = tj.at("beta").get<double>();
        t.se = tj.at("se").get<double>();
        t.ci_lo = tj.at("ci_lo").get<double>();
        t.ci_hi = tj.at("ci_hi").get<double>();
        t.pct = tj.at("pct").get<double>();
        t.pct_lo = tj.at("pct_lo").get<double>();
        t.pct_hi = tj.at("pct_hi").get<double>();
        c.terms.push_back(std::move(t));
      }
      res.cells.push_back(std::move(c));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::SchemaViolation, path + ": " + e.what());
  }
  return res;
}

}  // namespace crp
