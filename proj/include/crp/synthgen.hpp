#pragma once

// Synthetic-world generator with a machine-readable truth ledger. Writes the
// exact ingest file set the pipeline consumes (geography, commuter flows,
// demographics, test counts, case events) and records every planted quantity
// in truth_ledger.json, so tests can recompute expected outputs without
// touching the engine under test.
//
// Weekly cluster counts per (MSOA, industry) are drawn from a negative
// binomial whose log-mean is a planted linear predictor over the same
// covariate frame the pipeline builds, plus log workplaces as offset. Each
// drawn cluster is realized as 2-6 events at one workplace within its week;
// a workplace is reused only after a 7+ day quiet gap, so separate draws can
// never chain into one cluster and singleton noise can never join one.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <json.hpp>

#include "crp/clusters.hpp"
#include "crp/csv.hpp"
#include "crp/dates.hpp"
#include "crp/errors.hpp"
#include "crp/flows.hpp"
#include "crp/gam.hpp"
#include "crp/rng.hpp"
#include "crp/taxonomy.hpp"

namespace crp {

struct GenSpec {
  // world shape
  int n_msoas = 25;
  int workzones_per_msoa = 2;
  std::vector<Sector> industries = {Sector::Services, Sector::Manufacturing, Sector::Education,
                                    Sector::Construction,
                                    Sector::TransportDistributionWarehousing};
  int n_weeks = 36;
  std::uint64_t seed = 1;

  // world sizes
  int workplaces_per_pair = 8;   // mean linked workplaces per (MSOA, industry)
  int workplace_jitter = 2;      // uniform +/- jitter on that count
  double unlinked_share = 0.02;  // extra workplaces with no division code
  long population_lo = 4000, population_hi = 12000;
  long employees_lo = 3, employees_hi = 40;
  double flow_decay = 1.5;  // grid-distance decay length for commuting

  // outcome process
  double base_log_rate = std::log(0.05);  // log weekly clusters per workplace,
                                          // holding covariates at their anchors
  std::map<std::string, double> slopes;   // planted effect per frame column
  double theta = 4.0;                     // NB dispersion; infinity = Poisson
  double noise_rate = 0.0;                // singleton events per cell-week
  double spatial_tilt = 0.0;              // couples division mix and age structure
                                          // to the spatial field (confounding knob)

  // infection field behind the smoothing stage
  double rate_center = 2.5e-4;    // central daily positive rate per capita
  double rate_spatial_sd = 0.35;  // log-scale sd of the spatial field

  void validate() const {
    if (n_msoas < 1) throw Error(ErrorKind::InvalidConfig, "n_msoas must be >= 1");
    if (workzones_per_msoa < 1)
      throw Error(ErrorKind::InvalidConfig, "workzones_per_msoa must be >= 1");
    if (n_weeks < 2) throw Error(ErrorKind::InvalidConfig, "n_weeks must be >= 2 (lags need history)");
    if (industries.empty()) throw Error(ErrorKind::InvalidConfig, "no industries requested");
    for (std::size_t i = 0; i < industries.size(); ++i)
      for (std::size_t j = i + 1; j < industries.size(); ++j)
        if (industries[i] == industries[j])
          throw Error(ErrorKind::InvalidConfig, "duplicate industry " + to_string(industries[i]));
    if (workplaces_per_pair - workplace_jitter < 2)
      throw Error(ErrorKind::InvalidConfig, "need at least 2 workplaces per (MSOA, industry)");
    if (workplace_jitter < 0) throw Error(ErrorKind::InvalidConfig, "negative workplace jitter");
    if (static_cast<long>(workplaces_per_pair - workplace_jitter) *
            static_cast<long>(industries.size()) <
        workzones_per_msoa)
      throw Error(ErrorKind::InvalidConfig, "not enough workplaces to populate every workzone");
    if (unlinked_share < 0 || unlinked_share > 1)
      throw Error(ErrorKind::InvalidConfig, "unlinked_share must be in [0,1]");
    if (population_lo < 1 || population_hi < population_lo)
      throw Error(ErrorKind::InvalidConfig, "bad population range");
    if (employees_lo < 1 || employees_hi < employees_lo)
      throw Error(ErrorKind::InvalidConfig, "bad employees range");
    if (!(flow_decay > 0)) throw Error(ErrorKind::InvalidConfig, "flow_decay must be positive");
    if (!(theta > 0)) throw Error(ErrorKind::InvalidConfig, "theta must be positive");
    if (noise_rate < 0) throw Error(ErrorKind::InvalidConfig, "negative noise rate");
    if (!(rate_center > 0) || !(rate_spatial_sd >= 0))
      throw Error(ErrorKind::InvalidConfig, "bad infection-field parameters");
    const auto& cols = covariate_columns();
    for (const auto& [name, beta] : slopes) {
      if (name == "mobility")
        throw Error(ErrorKind::InvalidConfig, "mobility is categorical; no numeric slope");
      if (std::find(cols.begin(), cols.end(), name) == cols.end())
        throw Error(ErrorKind::InvalidConfig, "unknown slope column '" + name + "'");
      if (!std::isfinite(beta))
        throw Error(ErrorKind::InvalidConfig, "non-finite slope for '" + name + "'");
    }
  }
};

struct GenPaths {
  std::string dir;
  std::string msoas, workzones, sic, workplaces, adjacency, periods;
  std::string flows, industry_mix, residential_profiles, vaccination, residential_weekly;
  std::string tests, rates_true, events, ledger;

  static GenPaths under(const std::string& dir) {
    auto join = [&dir](const char* name) { return (std::filesystem::path(dir) / name).string(); };
    GenPaths p;
    p.dir = dir;
    p.msoas = join("msoas.csv");
    p.workzones = join("workzones.csv");
    p.sic = join("sic.csv");
    p.workplaces = join("workplaces.csv");
    p.adjacency = join("adjacency.csv");
    p.periods = join("periods.csv");
    p.flows = join("flows.csv");
    p.industry_mix = join("industry_mix.csv");
    p.residential_profiles = join("residential_profiles.csv");
    p.vaccination = join("vaccination.csv");
    p.residential_weekly = join("residential_weekly.csv");
    p.tests = join("tests.csv");
    p.rates_true = join("rates_true.csv");
    p.events = join("events.csv");
    p.ledger = join("truth_ledger.json");
    return p;
  }

  WorldPaths world() const { return {msoas, workzones, workplaces, sic, adjacency, periods}; }
};

// Everything needed to recompute expected pipeline outputs independently.
struct TruthLedger {
  int schema_version = 1;
  std::string rng_algorithm;
  std::uint64_t seed = 0;
  std::uint64_t event_seed = 0;

  // planted outcome model: log mean = intercept[i] + sum_c slope[c] * x_c + log W
  std::string family;  // "negative_binomial" or "poisson"
  double theta = 0;    // meaningful for negative_binomial only
  double epsilon = 0;  // floor inside the lagged log columns
  double base_log_rate = 0;
  std::map<std::string, double> slopes;
  std::map<std::string, double> intercepts;                       // per industry name
  std::map<std::string, std::map<std::string, double>> anchors;   // industry -> column
  std::string week0_policy;  // how week-0 draws treat the missing history

  // planted infection field: daily positives per capita
  //   lambda_m(d) = rate_center * exp(u_m * sd + amp_m * sin(2pi (d - phase) / season))
  std::vector<double> spatial_field;  // u_m, MSOA order
  std::vector<double> amplitude;      // amp_m
  double season_len = 0, season_phase = 0;
  double rate_center = 0, rate_spatial_sd = 0;
  std::array<double, 7> dow{};  // planted log day-of-week multipliers, Sunday first

  struct CountCell {
    int msoa = -1;
    int sector = -1;  // Sector enum value
    int week = 0;
    long clusters = 0;
  };
  std::vector<CountCell> weekly_counts;  // nonzero cells, sorted (msoa, sector, week)

  long n_workplaces_linked = 0, n_workplaces_unlinked = 0;
  long n_commuters = 0;
  long n_events = 0, n_noise_events = 0, n_clusters = 0;
  long n_truncated = 0, n_noise_dropped = 0;

  std::vector<std::string> msoa_codes;      // aligns spatial_field / amplitude
  std::vector<std::string> industry_names;  // industries present, enum order

  long planted_count(int msoa, Sector s, int week) const {
    CountCell probe{msoa, static_cast<int>(s), week, 0};
    auto it = std::lower_bound(weekly_counts.begin(), weekly_counts.end(), probe,
                               [](const CountCell& a, const CountCell& b) {
                                 return std::tie(a.msoa, a.sector, a.week) <
                                        std::tie(b.msoa, b.sector, b.week);
                               });
    if (it == weekly_counts.end() || it->msoa != msoa || it->sector != static_cast<int>(s) ||
        it->week != week)
      return 0;
    return it->clusters;
  }
};

namespace detail {

inline long uniform_int(Rng& rng, long lo, long hi) {
  return lo + static_cast<long>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
}

// deliberate offset so the event stream is independent of world-building draws
inline constexpr std::uint64_t kEventStreamSalt = 0x9E3779B97F4A7C15ULL;

struct GridGeo {
  int cols = 1;
  double dist(int a, int b) const {
    const double dr = a / cols - b / cols;
    const double dc = a % cols - b % cols;
    return std::sqrt(dr * dr + dc * dc);
  }
};

// Two synthetic divisions per sector, codes unique across sectors.
inline const std::array<std::pair<int, int>, kSectorCount>& division_codes() {
  static const std::array<std::pair<int, int>, kSectorCount> codes = {{
      {46, 56},  // Services
      {35, 36},  // Utilities
      {85, 88},  // Education
      {49, 52},  // Transport, distribution and warehousing
      {5, 8},    // Mining and Quarrying
      {10, 25},  // Manufacturing
      {84, 94},  // Public service activities
      {41, 43},  // Construction
      {86, 87},  // Human health and social work
      {38, 39},  // Waste management and remediation
      {1, 3},    // Agriculture, forestry and fishing
  }};
  return codes;
}

inline void write_json_atomic(const std::string& path, const nlohmann::ordered_json& j) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::MissingFile, "cannot open for write: " + tmp);
    // compact: the weekly-count table dominates and is not for human eyes
    out << j.dump() << '\n';
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw Error(ErrorKind::MissingFile, "cannot rename " + tmp + " to " + path);
}

inline std::string code_of(const char* prefix, int width, long n) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%0*ld", prefix, width, n);
  return buf;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// ledger serialization

inline void write_truth_ledger(const std::string& path, const TruthLedger& L) {
  nlohmann::ordered_json j;
  j["schema_version"] = L.schema_version;
  j["rng"] = {{"algorithm", L.rng_algorithm}, {"seed", L.seed}, {"event_seed", L.event_seed}};
  nlohmann::ordered_json model;
  model["family"] = L.family;
  if (L.family == "negative_binomial") model["theta"] = L.theta;
  model["epsilon"] = L.epsilon;
  model["base_log_rate"] = L.base_log_rate;
  model["slopes"] = L.slopes;
  model["intercepts"] = L.intercepts;
  model["anchors"] = L.anchors;
  model["week0_policy"] = L.week0_policy;
  j["model"] = std::move(model);
  j["infection_field"] = {{"spatial_field", L.spatial_field},
                          {"amplitude", L.amplitude},
                          {"season_len", L.season_len},
                          {"season_phase", L.season_phase},
                          {"rate_center", L.rate_center},
                          {"rate_spatial_sd", L.rate_spatial_sd},
                          {"dow_log_multipliers", L.dow}};
  j["totals"] = {{"workplaces_linked", L.n_workplaces_linked},
                 {"workplaces_unlinked", L.n_workplaces_unlinked},
                 {"commuters", L.n_commuters},
                 {"events", L.n_events},
                 {"noise_events", L.n_noise_events},
                 {"clusters", L.n_clusters},
                 {"truncated_clusters", L.n_truncated},
                 {"noise_dropped", L.n_noise_dropped}};
  j["msoas"] = L.msoa_codes;
  j["industries"] = L.industry_names;
  nlohmann::ordered_json counts = nlohmann::ordered_json::array();
  for (const auto& c : L.weekly_counts)
    counts.push_back(nlohmann::ordered_json::array({c.msoa, c.sector, c.week, c.clusters}));
  j["weekly_counts"] = std::move(counts);
  detail::write_json_atomic(path, j);
}

inline TruthLedger read_truth_ledger(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::MissingFile, "cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::SchemaViolation, path + ": " + e.what());
  }
  try {
    TruthLedger L;
    L.schema_version = j.at("schema_version").get<int>();
    if (L.schema_version != 1)
      throw Error(ErrorKind::SchemaViolation,
                  path + ": unsupported ledger schema version " +
                      std::to_string(L.schema_version));
    L.rng_algorithm = j.at("rng").at("algorithm").get<std::string>();
    L.seed = j.at("rng").at("seed").get<std::uint64_t>();
    L.event_seed = j.at("rng").at("event_seed").get<std::uint64_t>();
    const auto& m = j.at("model");
    L.family = m.at("family").get<std::string>();
    L.theta = L.family == "negative_binomial" ? m.at("theta").get<double>()
                                              : std::numeric_limits<double>::infinity();
    L.epsilon = m.at("epsilon").get<double>();
    L.base_log_rate = m.at("base_log_rate").get<double>();
    L.slopes = m.at("slopes").get<std::map<std::string, double>>();
    L.intercepts = m.at("intercepts").get<std::map<std::string, double>>();
    L.anchors = m.at("anchors").get<std::map<std::string, std::map<std::string, double>>>();
    L.week0_policy = m.at("week0_policy").get<std::string>();
    const auto& f = j.at("infection_field");
    L.spatial_field = f.at("spatial_field").get<std::vector<double>>();
    L.amplitude = f.at("amplitude").get<std::vector<double>>();
    L.season_len = f.at("season_len").get<double>();
    L.season_phase = f.at("season_phase").get<double>();
    L.rate_center = f.at("rate_center").get<double>();
    L.rate_spatial_sd = f.at("rate_spatial_sd").get<double>();
    for (int i = 0; i < 7; ++i)
      L.dow[static_cast<std::size_t>(i)] = f.at("dow_log_multipliers").at(static_cast<std::size_t>(i)).get<double>();
    const auto& t = j.at("totals");
    L.n_workplaces_linked = t.at("workplaces_linked").get<long>();
    L.n_workplaces_unlinked = t.at("workplaces_unlinked").get<long>();
    L.n_commuters = t.at("commuters").get<long>();
    L.n_events = t.at("events").get<long>();
    L.n_noise_events = t.at("noise_events").get<long>();
    L.n_clusters = t.at("clusters").get<long>();
    L.n_truncated = t.at("truncated_clusters").get<long>();
    L.n_noise_dropped = t.at("noise_dropped").get<long>();
    L.msoa_codes = j.at("msoas").get<std::vector<std::string>>();
    L.industry_names = j.at("industries").get<std::vector<std::string>>();
    for (const auto& row : j.at("weekly_counts"))
      L.weekly_counts.push_back(
          {row.at(0).get<int>(), row.at(1).get<int>(), row.at(2).get<int>(), row.at(3).get<long>()});
    return L;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::SchemaViolation, path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// world generation

// Writes the full ingest file set under `paths` and starts the ledger. The
// adjacency is a rectangular grid (connected, planar); flows decay with grid
// distance; demographics are Dirichlet draws per MSOA. A positive
// spatial_tilt makes high-proximity divisions and young age structure track
// the same latent field, which is what a confounding study needs.
inline TruthLedger gen_world(const GenSpec& spec, const GenPaths& paths) {
  spec.validate();
  Rng rng(spec.seed);

  TruthLedger L;
  L.rng_algorithm = Rng::kAlgorithm;
  L.seed = spec.seed;
  L.event_seed = spec.seed + detail::kEventStreamSalt;
  L.family = std::isfinite(spec.theta) ? "negative_binomial" : "poisson";
  L.theta = spec.theta;
  L.base_log_rate = spec.base_log_rate;
  L.slopes = spec.slopes;
  L.rate_center = spec.rate_center;
  L.rate_spatial_sd = spec.rate_spatial_sd;

  const int n = spec.n_msoas;
  std::vector<Sector> industries = spec.industries;
  std::sort(industries.begin(), industries.end());
  for (Sector s : industries) L.industry_names.push_back(to_string(s));

  // rectangular grid, row-major; edges right and down
  detail::GridGeo geo{std::max(1, static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n)))))};

  // latent spatial field: neighbor-averaged white noise, standardized
  std::vector<double> raw(static_cast<std::size_t>(n));
  for (auto& g : raw) g = rng.normal();
  std::vector<double> u(static_cast<std::size_t>(n));
  for (int m = 0; m < n; ++m) {
    double sum = raw[static_cast<std::size_t>(m)];
    int cnt = 1;
    const int r = m / geo.cols, c = m % geo.cols;
    auto take = [&](int rr, int cc) {
      const int v = rr * geo.cols + cc;
      if (rr >= 0 && cc >= 0 && cc < geo.cols && v < n) {
        sum += raw[static_cast<std::size_t>(v)];
        ++cnt;
      }
    };
    take(r - 1, c);
    take(r + 1, c);
    take(r, c - 1);
    take(r, c + 1);
    u[static_cast<std::size_t>(m)] = sum / cnt;
  }
  double mean = 0, var = 0;
  for (double v : u) mean += v;
  mean /= n;
  for (double v : u) var += (v - mean) * (v - mean);
  var = n > 1 ? var / n : 0.0;
  const double sd = std::sqrt(var);
  for (double& v : u) v = sd > 0 ? (v - mean) / sd : 0.0;
  L.spatial_field = u;

  // --- msoas.csv ------------------------------------------------------------
  std::vector<long> population(static_cast<std::size_t>(n));
  {
    CsvWriter out(paths.msoas);
    out.row("msoa", "population_18_64", "imd_quintile", "mobility_levels");
    for (int m = 0; m < n; ++m) {
      L.msoa_codes.push_back(detail::code_of("M", 4, m + 1));
      population[static_cast<std::size_t>(m)] =
          detail::uniform_int(rng, spec.population_lo, spec.population_hi);
      const long imd = detail::uniform_int(rng, 1, 5);
      std::string levels;
      for (int k = 0; k < 4; ++k) {
        if (k) levels += ';';
        levels += std::to_string(detail::uniform_int(rng, 1, 8));
      }
      out.row(L.msoa_codes.back(), population[static_cast<std::size_t>(m)], imd, levels);
    }
    out.commit();
  }

  // --- workzones.csv ---------------------------------------------------------
  const int zpm = spec.workzones_per_msoa;
  {
    CsvWriter out(paths.workzones);
    out.row("workzone", "msoa");
    for (int m = 0; m < n; ++m)
      for (int k = 0; k < zpm; ++k)
        out.row(detail::code_of("W", 5, static_cast<long>(m) * zpm + k + 1),
                L.msoa_codes[static_cast<std::size_t>(m)]);
    out.commit();
  }

  // --- sic.csv: two divisions per present sector, low and high proximity -----
  struct Division {
    int code;
    double proximity, permanence;
  };
  std::map<int, std::pair<Division, Division>> divisions;  // sector -> (lo, hi)
  {
    CsvWriter out(paths.sic);
    out.row("sic_division", "sector", "proximity", "permanence");
    for (Sector s : industries) {
      const auto [lo_code, hi_code] = detail::division_codes()[static_cast<std::size_t>(s)];
      Division lo{lo_code, rng.uniform(22.0, 45.0), rng.uniform(0.45, 0.95)};
      Division hi{hi_code, rng.uniform(62.0, 92.0), rng.uniform(0.45, 0.95)};
      divisions[static_cast<int>(s)] = {lo, hi};
      out.row(lo.code, to_string(s), lo.proximity, lo.permanence);
      out.row(hi.code, to_string(s), hi.proximity, hi.permanence);
    }
    out.commit();
  }

  // --- workplaces.csv ---------------------------------------------------------
  // Round-robin zone assignment guarantees every workzone hosts linked
  // workplaces (so every live zone has an industry mix).
  struct Workplace {
    long seq;
    int msoa, zone_local;  // zone index within the MSOA
    int sic;               // 0 = unlinked
    long employees;
  };
  std::vector<Workplace> works;
  long linked_total = 0;
  for (int m = 0; m < n; ++m) {
    int zone_cursor = static_cast<int>(detail::uniform_int(rng, 0, zpm - 1));
    const double tilt = std::tanh(spec.spatial_tilt * u[static_cast<std::size_t>(m)]);
    for (Sector s : industries) {
      const long count = detail::uniform_int(rng, spec.workplaces_per_pair - spec.workplace_jitter,
                                             spec.workplaces_per_pair + spec.workplace_jitter);
      const double p_hi =
          std::clamp(0.5 + 0.35 * tilt + 0.08 * rng.normal(), 0.05, 0.95);
      const auto& [lo, hi] = divisions[static_cast<int>(s)];
      for (long k = 0; k < count; ++k) {
        Workplace wp;
        wp.seq = ++linked_total;
        wp.msoa = m;
        wp.zone_local = zone_cursor;
        zone_cursor = (zone_cursor + 1) % zpm;
        wp.sic = rng.uniform() < p_hi ? hi.code : lo.code;
        wp.employees = detail::uniform_int(rng, spec.employees_lo, spec.employees_hi);
        works.push_back(wp);
      }
    }
  }
  L.n_workplaces_linked = linked_total;
  L.n_workplaces_unlinked = std::lround(spec.unlinked_share * static_cast<double>(linked_total));
  for (long k = 0; k < L.n_workplaces_unlinked; ++k) {
    Workplace wp;
    wp.seq = linked_total + k + 1;
    wp.msoa = static_cast<int>(detail::uniform_int(rng, 0, n - 1));
    wp.zone_local = static_cast<int>(detail::uniform_int(rng, 0, zpm - 1));
    wp.sic = 0;
    wp.employees = detail::uniform_int(rng, spec.employees_lo, spec.employees_hi);
    works.push_back(wp);
  }
  {
    CsvWriter out(paths.workplaces);
    out.row("uprn", "msoa", "workzone", "sic_division", "employees");
    for (const Workplace& wp : works) {
      out.field(detail::code_of("U", 6, wp.seq));
      out.field(L.msoa_codes[static_cast<std::size_t>(wp.msoa)]);
      out.field(detail::code_of("W", 5, static_cast<long>(wp.msoa) * zpm + wp.zone_local + 1));
      if (wp.sic > 0)
        out.field(wp.sic);
      else
        out.field("");
      out.field(wp.employees);
      out.end_row();
    }
    out.commit();
  }

  // --- adjacency.csv: grid edges ----------------------------------------------
  {
    CsvWriter out(paths.adjacency);
    out.row("msoa_a", "msoa_b");
    for (int m = 0; m < n; ++m) {
      if ((m % geo.cols) + 1 < geo.cols && m + 1 < n)
        out.row(L.msoa_codes[static_cast<std::size_t>(m)], L.msoa_codes[static_cast<std::size_t>(m + 1)]);
      if (m + geo.cols < n)
        out.row(L.msoa_codes[static_cast<std::size_t>(m)],
                L.msoa_codes[static_cast<std::size_t>(m + geo.cols)]);
    }
    out.commit();
  }

  // --- periods.csv --------------------------------------------------------------
  const Date anchor = make_date(2021, 6, 20);
  const WeekGrid grid{anchor};
  {
    CsvWriter out(paths.periods);
    out.row("name", "start", "end");
    if (spec.n_weeks == 36) {
      const StudyPeriods defaults;
      for (const StudyPeriod* p : {&defaults.overall, &defaults.delta, &defaults.omicron})
        out.row(p->name, to_iso(p->range.first), to_iso(p->range.last));
    } else {
      const int dw = std::max(1, static_cast<int>(std::lround(0.4 * spec.n_weeks)));
      const int ow = std::max(1, static_cast<int>(std::lround(0.3 * spec.n_weeks)));
      out.row("Overall", to_iso(grid.start_of(0)), to_iso(grid.end_of(spec.n_weeks - 1)));
      out.row("Delta", to_iso(grid.start_of(0)), to_iso(grid.end_of(dw - 1)));
      out.row("Omicron", to_iso(grid.start_of(spec.n_weeks - ow)),
              to_iso(grid.end_of(spec.n_weeks - 1)));
    }
    out.commit();
  }

  // --- flows.csv: gravity allocation of each MSOA's workforce -------------------
  const int n_zones = n * zpm;
  std::vector<double> attract(static_cast<std::size_t>(n_zones));
  for (auto& a : attract) a = rng.uniform(0.5, 1.5);
  std::vector<long> inbound(static_cast<std::size_t>(n_zones), 0);
  std::vector<std::array<long, 3>> edges;  // home, zone, commuters
  for (int m = 0; m < n; ++m) {
    const long workforce = std::lround(0.42 * static_cast<double>(population[static_cast<std::size_t>(m)]));
    std::vector<double> wgt(static_cast<std::size_t>(n_zones));
    double total = 0;
    for (int z = 0; z < n_zones; ++z) {
      wgt[static_cast<std::size_t>(z)] =
          attract[static_cast<std::size_t>(z)] * std::exp(-geo.dist(m, z / zpm) / spec.flow_decay);
      total += wgt[static_cast<std::size_t>(z)];
    }
    for (int z = 0; z < n_zones; ++z) {
      const long c = std::lround(static_cast<double>(workforce) * wgt[static_cast<std::size_t>(z)] / total);
      if (c > 0) {
        edges.push_back({m, z, c});
        inbound[static_cast<std::size_t>(z)] += c;
      }
    }
  }
  // rounding can starve a far-away zone; give it a token local flow
  for (int z = 0; z < n_zones; ++z)
    if (inbound[static_cast<std::size_t>(z)] == 0) {
      edges.push_back({z / zpm, z, 5});
      inbound[static_cast<std::size_t>(z)] = 5;
    }
  {
    CsvWriter out(paths.flows);
    out.row("home_msoa", "workzone", "n_commuters");
    for (const auto& e : edges) {
      out.row(L.msoa_codes[static_cast<std::size_t>(e[0])], detail::code_of("W", 5, e[1] + 1), e[2]);
      L.n_commuters += e[2];
    }
    out.commit();
  }

  // --- industry_mix.csv: sector share of each zone's linked workplaces ----------
  {
    std::vector<std::array<long, kSectorCount>> zone_counts(
        static_cast<std::size_t>(n_zones), std::array<long, kSectorCount>{});
    std::vector<long> zone_totals(static_cast<std::size_t>(n_zones), 0);
    std::map<int, Sector> sector_of_division;
    for (Sector s : industries) {
      const auto& [lo, hi] = divisions[static_cast<int>(s)];
      sector_of_division[lo.code] = s;
      sector_of_division[hi.code] = s;
    }
    for (const Workplace& wp : works) {
      if (wp.sic == 0) continue;
      const int z = wp.msoa * zpm + wp.zone_local;
      zone_counts[static_cast<std::size_t>(z)][static_cast<int>(sector_of_division.at(wp.sic))]++;
      zone_totals[static_cast<std::size_t>(z)]++;
    }
    CsvWriter out(paths.industry_mix);
    out.row("workzone", "sector", "share");
    for (int z = 0; z < n_zones; ++z) {
      if (zone_totals[static_cast<std::size_t>(z)] == 0) continue;
      for (int s = 0; s < kSectorCount; ++s) {
        const long c = zone_counts[static_cast<std::size_t>(z)][s];
        if (c == 0) continue;
        out.row(detail::code_of("W", 5, z + 1), to_string(static_cast<Sector>(s)),
                static_cast<double>(c) / static_cast<double>(zone_totals[static_cast<std::size_t>(z)]));
      }
    }
    out.commit();
  }

  // --- residential_profiles.csv: Dirichlet share families ------------------------
  {
    CsvWriter out(paths.residential_profiles);
    for (const char* c : residential_profile_columns()) out.field(c);
    out.end_row();
    for (int m = 0; m < n; ++m) {
      const double tilt = std::exp(0.5 * spec.spatial_tilt * u[static_cast<std::size_t>(m)]);
      const auto age = rng.dirichlet({3.0 * tilt, 4.0, 3.5, 1.0});
      const auto sex = rng.dirichlet({12.0, 12.0});
      const auto eth = rng.dirichlet({12.0, 3.0, 2.0, 2.0});
      const auto travel = rng.dirichlet({1.5, 1.0, 5.0, 2.0, 0.8});
      std::vector<double> imd_alpha(5, 1.2);
      imd_alpha[static_cast<std::size_t>(detail::uniform_int(rng, 0, 4))] += 2.5;
      const auto imd = rng.dirichlet(imd_alpha);
      for (double v : age) out.field(v);
      for (double v : sex) out.field(v);
      for (double v : eth) out.field(v);
      for (double v : travel) out.field(v);
      for (double v : imd) out.field(v);
      out.field(L.msoa_codes[static_cast<std::size_t>(m)]);
      out.end_row();
    }
    out.commit();
  }

  // --- vaccination.csv + residential_weekly.csv: logistic two-dose ramps ---------
  std::vector<double> cap2(static_cast<std::size_t>(n)), mid2(static_cast<std::size_t>(n)),
      wid2(static_cast<std::size_t>(n)), cap1(static_cast<std::size_t>(n)),
      mid1(static_cast<std::size_t>(n));
  for (int m = 0; m < n; ++m) {
    cap2[static_cast<std::size_t>(m)] = rng.uniform(0.72, 0.93);
    mid2[static_cast<std::size_t>(m)] = rng.uniform(7.0, 18.0);
    wid2[static_cast<std::size_t>(m)] = rng.uniform(2.5, 5.0);
    cap1[static_cast<std::size_t>(m)] = std::min(0.98, cap2[static_cast<std::size_t>(m)] + rng.uniform(0.02, 0.06));
    mid1[static_cast<std::size_t>(m)] = mid2[static_cast<std::size_t>(m)] - rng.uniform(3.0, 5.0);
  }
  auto ramp = [](double cap, double mid, double width, int t) {
    return cap / (1.0 + std::exp(-(static_cast<double>(t) - mid) / width));
  };

  // --- infection field + tests.csv -----------------------------------------------
  L.season_len = rng.uniform(100.0, 140.0);
  L.season_phase = rng.uniform(0.0, L.season_len);
  L.amplitude.resize(static_cast<std::size_t>(n));
  for (auto& a : L.amplitude) a = rng.uniform(0.4, 0.9);
  L.dow = {-0.30, 0.08, 0.12, 0.10, 0.06, 0.04, -0.10};  // sums to zero, Sunday first

  const int n_days = 7 * spec.n_weeks;
  auto lambda_day = [&](int m, int d) {
    const double season =
        L.amplitude[static_cast<std::size_t>(m)] *
        std::sin(2.0 * std::numbers::pi * (static_cast<double>(d) - L.season_phase) / L.season_len);
    return L.rate_center * std::exp(u[static_cast<std::size_t>(m)] * L.rate_spatial_sd + season);
  };
  {
    CsvWriter out(paths.tests);
    out.row("msoa", "date", "n_positive", "symptomatic_flag");
    for (int m = 0; m < n; ++m) {
      for (int d = 0; d < n_days; ++d) {
        const Date date{anchor.days + d};
        const double mu = static_cast<double>(population[static_cast<std::size_t>(m)]) *
                          lambda_day(m, d) * std::exp(L.dow[static_cast<std::size_t>(d % 7)]);
        const long k = rng.poisson(mu);
        if (k > 0) out.row(L.msoa_codes[static_cast<std::size_t>(m)], to_iso(date), k, 1);
        // occasional asymptomatic rows; the smoother must ignore them
        if (d % 37 == 17) {
          const long a = rng.poisson(0.4 * mu);
          if (a > 0) out.row(L.msoa_codes[static_cast<std::size_t>(m)], to_iso(date), a, 0);
        }
      }
    }
    out.commit();
  }

  // --- rates_true.csv: weekly mean of the planted daily rate ---------------------
  {
    std::vector<RateCell> cells;
    cells.reserve(static_cast<std::size_t>(n) * static_cast<std::size_t>(spec.n_weeks));
    for (int m = 0; m < n; ++m)
      for (int wk = 0; wk < spec.n_weeks; ++wk) {
        double sum = 0;
        for (int d = 0; d < 7; ++d) sum += lambda_day(m, 7 * wk + d);
        cells.push_back({m, wk, sum / 7.0});
      }
    // reuse the pipeline's rate-file format so the exposure stage can read it
    CsvWriter out(paths.rates_true);
    out.row("msoa", "week_start", "lambda_bar");
    for (const auto& c : cells)
      out.row(L.msoa_codes[static_cast<std::size_t>(c.msoa)], to_iso(grid.start_of(c.week)), c.lambda_bar);
    out.commit();
  }

  {
    CsvWriter vax(paths.vaccination);
    vax.row("msoa", "week_start", "prop_two_doses");
    CsvWriter res(paths.residential_weekly);
    res.row("msoa", "week_start", "resident_case_rate", "resident_dose1", "resident_dose2");
    for (int m = 0; m < n; ++m) {
      for (int wk = 0; wk < spec.n_weeks; ++wk) {
        const double two = ramp(cap2[static_cast<std::size_t>(m)], mid2[static_cast<std::size_t>(m)],
                                wid2[static_cast<std::size_t>(m)], wk);
        const double one = ramp(cap1[static_cast<std::size_t>(m)], mid1[static_cast<std::size_t>(m)],
                                wid2[static_cast<std::size_t>(m)], wk);
        double lam = 0;
        for (int d = 0; d < 7; ++d) lam += lambda_day(m, 7 * wk + d);
        const std::string ws = to_iso(grid.start_of(wk));
        vax.row(L.msoa_codes[static_cast<std::size_t>(m)], ws, two);
        res.row(L.msoa_codes[static_cast<std::size_t>(m)], ws, std::min(1.0, lam), one, two);
      }
    }
    vax.commit();
    res.commit();
  }

  return L;
}

// ---------------------------------------------------------------------------
// event generation

// Draws weekly cluster counts cell by cell and realizes them as events.
// Reloads the just-written inputs through the public loaders, so the linear
// predictor is evaluated on exactly the frame the pipeline will see; the two
// cluster-lag columns are filled from realized counts as generation walks
// forward through the weeks.
inline void gen_events(const World& w, const GenSpec& spec, TruthLedger& L,
                       const GenPaths& paths) {
  spec.validate();
  Rng rng(L.event_seed);

  FlowNetwork flows = load_flows(paths.flows, w);
  MixTable mix = load_industry_mix(paths.industry_mix, w);
  std::vector<ResidentialProfile> profiles = load_residential_profiles(paths.residential_profiles, w);
  Eigen::MatrixXd vax2 = load_vaccination(paths.vaccination, w);
  ResidentialWeekly residential = load_residential_weekly(paths.residential_weekly, w);
  Eigen::MatrixXd lambda = rates_to_matrix(read_smoothed_rates_csv(paths.rates_true, w), w);

  const int n = static_cast<int>(w.msoas.size());
  const int n_weeks = w.n_weeks();
  const WeekGrid grid = w.week_grid();
  // data collection stops at the horizon end, so events planted in a partial
  // final week all land on its in-horizon days
  const int horizon_last = w.periods.overall.range.last.days;

  std::vector<Sector> industries = spec.industries;
  std::sort(industries.begin(), industries.end());

  // covariate frame with an all-zero outcome history; every column except the
  // two cluster-lag ones is already final
  ClusterSeries zero{grid, n_weeks, {}, 0};
  for (int m = 0; m < n; ++m)
    for (int s = 0; s < kSectorCount; ++s) {
      const long W = w.n_workplaces(m, static_cast<Sector>(s));
      if (W <= 0) continue;
      for (int t = 0; t < n_weeks; ++t)
        zero.rows.push_back({m, static_cast<Sector>(s), t, 0, W});
    }
  ExposureInputs in;
  in.flows = &flows;
  in.mix = &mix;
  in.profiles = &profiles;
  in.lambda = &lambda;
  in.vax2 = &vax2;
  in.residential = &residential;
  in.series = &zero;
  const ExposureOptions opt{};
  CovariateFrame frame = build_covariates(w, in, opt);
  L.epsilon = opt.epsilon;

  // index frame rows: cell = (msoa, industry), weeks 1..n_weeks-1 contiguous
  struct Cell {
    int msoa;
    Sector sector;
    std::size_t row0;  // frame row for week 1
    long W;
    std::vector<int> pool;  // linked workplace ids
  };
  std::vector<Cell> cells;
  {
    std::map<std::pair<int, int>, std::size_t> row0;
    for (std::size_t r = 0; r < frame.rows.size(); ++r)
      if (frame.rows[r].week == 1)
        row0[{frame.rows[r].msoa, static_cast<int>(frame.rows[r].industry)}] = r;
    for (int m = 0; m < n; ++m)
      for (Sector s : industries) {
        auto it = row0.find({m, static_cast<int>(s)});
        if (it == row0.end())
          throw Error(ErrorKind::InsufficientData,
                      "generated world left (MSOA " + w.msoas[static_cast<std::size_t>(m)].code +
                          ", " + to_string(s) + ") without a covariate row");
        cells.push_back({m, s, it->second, w.n_workplaces(m, s), {}});
      }
    for (int uid = 0; uid < static_cast<int>(w.uprns.size()); ++uid) {
      const UprnRecord& u = w.uprns[static_cast<std::size_t>(uid)];
      if (!u.linked()) continue;
      const Sector s = w.sector_of(*u.sic);
      for (Cell& c : cells)
        if (c.msoa == u.msoa && c.sector == s) {
          c.pool.push_back(uid);
          break;
        }
    }
  }

  // anchors: per-industry frame means, except the outcome-lag columns which
  // anchor at the planted base rate (their steady state when nothing else acts)
  const double lag_anchor = std::log(opt.epsilon + std::exp(spec.base_log_rate));
  L.anchors.clear();
  L.intercepts.clear();
  for (Sector s : industries) {
    std::map<std::string, double> a;
    for (const auto& [col, beta] : spec.slopes) {
      (void)beta;
      if (col == "log_cluster_rate_lag" || col == "log_cluster_rate_other_lag") {
        a[col] = lag_anchor;
        continue;
      }
      double sum = 0;
      long cnt = 0;
      for (const CovariateRow& r : frame.rows)
        if (r.industry == s) {
          sum += covariate_value(r, col);
          ++cnt;
        }
      a[col] = cnt > 0 ? sum / static_cast<double>(cnt) : 0.0;
    }
    double intercept = spec.base_log_rate;
    for (const auto& [col, beta] : spec.slopes) intercept -= beta * a.at(col);
    L.anchors[to_string(s)] = a;
    L.intercepts[to_string(s)] = intercept;
  }
  L.week0_policy = "week-0 draws use the week-1 covariate row with lagged columns at their anchors";
  L.n_events = L.n_noise_events = L.n_clusters = L.n_truncated = L.n_noise_dropped = 0;

  // per-MSOA workplace totals over generated cells, for the "other industries" lag
  std::vector<long> total_W(static_cast<std::size_t>(n), 0);
  for (const Cell& c : cells) total_W[static_cast<std::size_t>(c.msoa)] += c.W;

  struct Ev {
    int uprn;
    Date date;
    long cluster;  // -1 for noise singletons
  };
  std::vector<Ev> events;
  std::vector<int> last_use(w.uprns.size(), std::numeric_limits<int>::min());
  std::vector<std::vector<long>> realized(cells.size(),
                                          std::vector<long>(static_cast<std::size_t>(n_weeks), 0));
  std::vector<std::vector<long>> msoa_total(static_cast<std::size_t>(n),
                                            std::vector<long>(static_cast<std::size_t>(n_weeks), 0));
  long cluster_seq = 0;

  auto pick_available = [&](const Cell& c, int week_start) -> int {
    std::vector<int> avail;
    for (int uid : c.pool)
      if (last_use[static_cast<std::size_t>(uid)] <= week_start - 7) avail.push_back(uid);
    if (avail.empty()) return -1;
    return avail[static_cast<std::size_t>(rng.below(avail.size()))];
  };

  for (int t = 0; t < n_weeks; ++t) {
    const int ws = grid.start_of(t).days;
    for (std::size_t ci = 0; ci < cells.size(); ++ci) {
      const Cell& c = cells[ci];
      const CovariateRow& row = frame.rows[c.row0 + static_cast<std::size_t>(std::max(t, 1) - 1)];

      double eta = L.intercepts.at(to_string(c.sector));
      for (const auto& [col, beta] : spec.slopes) {
        double x;
        if (col == "log_cluster_rate_lag") {
          x = t == 0 ? lag_anchor
                     : lagged_log(static_cast<double>(realized[ci][static_cast<std::size_t>(t - 1)]) /
                                      static_cast<double>(c.W),
                                  opt.epsilon);
        } else if (col == "log_cluster_rate_other_lag") {
          const long otherW = total_W[static_cast<std::size_t>(c.msoa)] - c.W;
          x = t == 0 ? lag_anchor
                     : lagged_log(otherW > 0
                                      ? static_cast<double>(
                                            msoa_total[static_cast<std::size_t>(c.msoa)]
                                                      [static_cast<std::size_t>(t - 1)] -
                                            realized[ci][static_cast<std::size_t>(t - 1)]) /
                                            static_cast<double>(otherW)
                                      : 0.0,
                                  opt.epsilon);
        } else {
          x = covariate_value(row, col);
        }
        eta += beta * x;
      }
      const double mu = std::exp(eta) * static_cast<double>(c.W);

      long k = std::isfinite(spec.theta) ? rng.negative_binomial(mu, spec.theta) : rng.poisson(mu);
      long placed = 0;
      for (long j = 0; j < k; ++j) {
        const int uid = pick_available(c, ws);
        if (uid < 0) {
          L.n_truncated += k - j;
          break;
        }
        const long id = cluster_seq++;
        const long n_ev = 2 + static_cast<long>(rng.below(5));
        int last = ws;
        for (long e = 0; e < n_ev; ++e) {
          const int d = std::min(ws + static_cast<int>(rng.below(7)), horizon_last);
          events.push_back({uid, Date{d}, id});
          last = std::max(last, d);
        }
        last_use[static_cast<std::size_t>(uid)] = last;
        ++placed;
      }
      realized[ci][static_cast<std::size_t>(t)] = placed;
      msoa_total[static_cast<std::size_t>(c.msoa)][static_cast<std::size_t>(t)] += placed;
      L.n_clusters += placed;

      if (spec.noise_rate > 0) {
        const long noise = rng.poisson(spec.noise_rate);
        for (long j = 0; j < noise; ++j) {
          const int uid = pick_available(c, ws);
          if (uid < 0) {
            L.n_noise_dropped += noise - j;
            break;
          }
          const int d = std::min(ws + static_cast<int>(rng.below(7)), horizon_last);
          events.push_back({uid, Date{d}, -1});
          last_use[static_cast<std::size_t>(uid)] = d;
          ++L.n_noise_events;
        }
      }
    }
  }

  // the chaining contract, asserted rather than trusted: within a cluster all
  // gaps are <= 6 days, across uses of one workplace all gaps are >= 7
  {
    std::map<int, std::vector<std::pair<int, long>>> by_uprn;
    for (const Ev& e : events) by_uprn[e.uprn].push_back({e.date.days, e.cluster});
    for (auto& [uid, v] : by_uprn) {
      std::sort(v.begin(), v.end());
      for (std::size_t i = 1; i < v.size(); ++i) {
        const int gap = v[i].first - v[i - 1].first;
        const bool same = v[i].second == v[i - 1].second && v[i].second >= 0;
        if (same ? gap > kEpisodeDays : gap <= kEpisodeDays)
          throw Error(ErrorKind::SchemaViolation,
                      "generated events violate the chaining contract at workplace " +
                          w.uprns[static_cast<std::size_t>(uid)].code);
      }
    }
  }

  {
    CsvWriter out(paths.events);
    out.row("case_id", "uprn", "event_date");
    long seq = 0;
    for (const Ev& e : events)
      out.row(detail::code_of("C", 7, ++seq), w.uprns[static_cast<std::size_t>(e.uprn)].code,
              to_iso(e.date));
    out.commit();
  }
  L.n_events = static_cast<long>(events.size());

  L.weekly_counts.clear();
  for (std::size_t ci = 0; ci < cells.size(); ++ci)
    for (int t = 0; t < n_weeks; ++t)
      if (realized[ci][static_cast<std::size_t>(t)] > 0)
        L.weekly_counts.push_back({cells[ci].msoa, static_cast<int>(cells[ci].sector), t,
                                   realized[ci][static_cast<std::size_t>(t)]});
  std::sort(L.weekly_counts.begin(), L.weekly_counts.end(),
            [](const TruthLedger::CountCell& a, const TruthLedger::CountCell& b) {
              return std::tie(a.msoa, a.sector, a.week) < std::tie(b.msoa, b.sector, b.week);
            });

  write_truth_ledger(paths.ledger, L);
}

struct GenResult {
  World world;
  TruthLedger ledger;
  GenPaths paths;
};

// One-call generation: world files, events, and the completed ledger.
inline GenResult generate(const GenSpec& spec, const std::string& dir) {
  std::filesystem::create_directories(dir);
  GenPaths paths = GenPaths::under(dir);
  TruthLedger ledger = gen_world(spec, paths);
  World w = load_world(paths.world());
  gen_events(w, spec, ledger, paths);
  return {std::move(w), std::move(ledger), std::move(paths)};
}

}  // namespace crp
