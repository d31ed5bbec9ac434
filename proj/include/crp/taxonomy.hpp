#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "crp/csv.hpp"
#include "crp/dates.hpp"
#include "crp/errors.hpp"

namespace crp {

// The 11 broad industry sectors. Closed enumeration; order is the canonical
// reporting order.
enum class Sector : int {
  Services = 0,
  Utilities,
  Education,
  TransportDistributionWarehousing,
  MiningQuarrying,
  Manufacturing,
  PublicServiceActivities,
  Construction,
  HumanHealthSocialWork,
  WasteManagementRemediation,
  AgricultureForestryFishing,
};

inline constexpr int kSectorCount = 11;

inline const std::array<std::string, kSectorCount>& sector_names() {
  static const std::array<std::string, kSectorCount> names = {
      "Services",
      "Utilities",
      "Education",
      "Transport, distribution and warehousing",
      "Mining and Quarrying",
      "Manufacturing",
      "Public service activities",
      "Construction",
      "Human health and social work",
      "Waste management and remediation",
      "Agriculture, forestry and fishing",
  };
  return names;
}

inline const std::string& to_string(Sector s) { return sector_names()[static_cast<int>(s)]; }

inline std::optional<Sector> parse_sector(const std::string& name) {
  const auto& names = sector_names();
  for (int i = 0; i < kSectorCount; ++i)
    if (names[i] == name) return static_cast<Sector>(i);
  return std::nullopt;
}

inline std::vector<Sector> all_sectors() {
  std::vector<Sector> v;
  v.reserve(kSectorCount);
  for (int i = 0; i < kSectorCount; ++i) v.push_back(static_cast<Sector>(i));
  return v;
}

// Rural/urban refinement. Order matters: modal ties break toward the lower
// enum value (Metropolitan first), a documented choice.
enum class MobilityClass : int { Metropolitan = 0, Exurban, Suburban, Rural };

inline constexpr int kMobilityCount = 4;

inline const char* to_string(MobilityClass m) {
  switch (m) {
    case MobilityClass::Metropolitan: return "Metropolitan";
    case MobilityClass::Exurban: return "Exurban";
    case MobilityClass::Suburban: return "Suburban";
    case MobilityClass::Rural: return "Rural";
  }
  return "?";
}

inline std::optional<MobilityClass> parse_mobility(const std::string& name) {
  for (int i = 0; i < kMobilityCount; ++i) {
    auto m = static_cast<MobilityClass>(i);
    if (name == to_string(m)) return m;
  }
  return std::nullopt;
}

// Levels 1-8 regrouped pairwise: 1,2 Metropolitan; 3,4 Exurban; 5,6 Suburban;
// 7,8 Rural.
inline MobilityClass regroup_mobility(int level) {
  if (level < 1 || level > 8)
    throw Error(ErrorKind::OutOfRange, "mobility level " + std::to_string(level) + " not in 1..8");
  return static_cast<MobilityClass>((level - 1) / 2);
}

// Modal class of an MSOA's LSOA levels; ties break by class order.
inline MobilityClass msoa_mobility(const std::vector<int>& lsoa_levels) {
  if (lsoa_levels.empty()) throw Error(ErrorKind::EmptyInput, "no LSOA mobility levels");
  std::array<int, kMobilityCount> counts{};
  for (int lvl : lsoa_levels) counts[static_cast<int>(regroup_mobility(lvl))]++;
  int best = 0;
  for (int i = 1; i < kMobilityCount; ++i)
    if (counts[i] > counts[best]) best = i;
  return static_cast<MobilityClass>(best);
}

struct StudyPeriod {
  std::string name;
  DateRange range;
};

struct StudyPeriods {
  StudyPeriod delta{"Delta", {make_date(2021, 6, 20), make_date(2021, 9, 30)}};
  StudyPeriod omicron{"Omicron", {make_date(2021, 12, 7), make_date(2022, 2, 20)}};
  StudyPeriod overall{"Overall", {make_date(2021, 6, 20), make_date(2022, 2, 20)}};

  const StudyPeriod& by_name(const std::string& name) const {
    if (name == "Delta") return delta;
    if (name == "Omicron") return omicron;
    if (name == "Overall") return overall;
    throw Error(ErrorKind::InvalidConfig, "unknown study period '" + name + "'");
  }
};

// School holiday windows removed from Education modeling; each range already
// includes the settling week after pupils return.
inline const std::vector<DateRange>& education_exclusion_ranges() {
  static const std::vector<DateRange> ranges = {
      {make_date(2021, 7, 18), make_date(2021, 9, 12)},
      {make_date(2021, 10, 24), make_date(2021, 10, 31)},
      {make_date(2021, 12, 19), make_date(2022, 1, 9)},
  };
  return ranges;
}

struct SicDivision {
  int code = 0;  // two-digit SIC division, 1..99
  Sector sector = Sector::Services;
  double proximity = 0.0;    // 0..100
  double permanence = 0.0;   // proportion 0..1
};

struct MsoaRecord {
  std::string code;
  long population_18_64 = 0;
  int imd_quintile = 0;
  std::vector<int> mobility_levels;
  MobilityClass mobility = MobilityClass::Suburban;
};

struct WorkzoneRecord {
  std::string code;
  int msoa = -1;
};

struct UprnRecord {
  std::string code;
  int msoa = -1;
  int workzone = -1;
  std::optional<int> sic = {};  // unlinked workplaces carry no division
  long employees = 0;

  bool linked() const { return sic.has_value(); }
};

// Shared-border MSOA neighbourhood; symmetric, no self-loops.
class AdjacencyGraph {
 public:
  void resize(int n) { neighbors_.assign(static_cast<std::size_t>(n), {}); }

  int n_nodes() const { return static_cast<int>(neighbors_.size()); }

  void add_edge(int a, int b) {
    if (a == b) throw Error(ErrorKind::SchemaViolation, "self-loop in adjacency");
    insert_sorted(neighbors_[a], b);
    insert_sorted(neighbors_[b], a);
  }

  const std::vector<int>& neighbors(int m) const { return neighbors_[m]; }

  bool has_edge(int a, int b) const {
    const auto& ns = neighbors_[a];
    return std::binary_search(ns.begin(), ns.end(), b);
  }

  std::size_t n_edges() const {
    std::size_t total = 0;
    for (const auto& ns : neighbors_) total += ns.size();
    return total / 2;
  }

  std::vector<std::vector<int>> connected_components() const {
    std::vector<std::vector<int>> comps;
    std::vector<char> seen(neighbors_.size(), 0);
    std::vector<int> stack;
    for (int start = 0; start < n_nodes(); ++start) {
      if (seen[start]) continue;
      comps.emplace_back();
      stack.push_back(start);
      seen[start] = 1;
      while (!stack.empty()) {
        int v = stack.back();
        stack.pop_back();
        comps.back().push_back(v);
        for (int w : neighbors_[v]) {
          if (!seen[w]) {
            seen[w] = 1;
            stack.push_back(w);
          }
        }
      }
      std::sort(comps.back().begin(), comps.back().end());
    }
    return comps;
  }

 private:
  static void insert_sorted(std::vector<int>& v, int x) {
    auto it = std::lower_bound(v.begin(), v.end(), x);
    if (it == v.end() || *it != x) v.insert(it, x);
  }

  std::vector<std::vector<int>> neighbors_;
};

struct IngestReport {
  std::size_t n_uprns_total = 0;
  std::size_t n_uprns_unlinked = 0;

  double dropped_fraction() const {
    return n_uprns_total == 0 ? 0.0 : static_cast<double>(n_uprns_unlinked) / static_cast<double>(n_uprns_total);
  }
};

// All static tables, immutable after load; safe to share across threads.
struct World {
  std::vector<MsoaRecord> msoas;
  std::vector<WorkzoneRecord> workzones;
  std::vector<UprnRecord> uprns;
  std::unordered_map<int, SicDivision> sic;  // keyed by division code
  AdjacencyGraph adjacency;
  StudyPeriods periods;
  IngestReport ingest;

  std::unordered_map<std::string, int> msoa_index;
  std::unordered_map<std::string, int> workzone_index;
  std::unordered_map<std::string, int> uprn_index;

  // workplace denominators per (msoa, sector); only industry-linked UPRNs count
  std::vector<std::array<long, kSectorCount>> workplaces_by_msoa_sector;
  // employee totals per (msoa, sector, sic division), for SIC-weighted variables
  std::vector<std::array<std::vector<std::pair<int, long>>, kSectorCount>> employees_by_msoa_sector_sic;

  int msoa_id(const std::string& code) const {
    auto it = msoa_index.find(code);
    return it == msoa_index.end() ? -1 : it->second;
  }

  int workzone_id(const std::string& code) const {
    auto it = workzone_index.find(code);
    return it == workzone_index.end() ? -1 : it->second;
  }

  Sector sector_of(int sic_code) const { return sic.at(sic_code).sector; }

  long n_workplaces(int msoa, Sector s) const {
    return workplaces_by_msoa_sector[msoa][static_cast<int>(s)];
  }

  WeekGrid week_grid() const { return WeekGrid{periods.overall.range.first}; }

  int n_weeks() const {
    return week_grid().index_of(periods.overall.range.last) + 1;
  }
};

struct WorldPaths {
  std::string msoas;
  std::string workzones;
  std::string workplaces;
  std::string sic;
  std::string adjacency;
  std::string periods;  // optional override; empty = defaults
};

namespace detail {

inline std::vector<int> parse_levels(const CsvTable& t, std::size_t r, const std::string& col) {
  const std::string& raw = t.get_str(r, col);
  std::vector<int> levels;
  std::size_t pos = 0;
  while (pos <= raw.size()) {
    std::size_t next = raw.find(';', pos);
    std::string tok = raw.substr(pos, next == std::string::npos ? std::string::npos : next - pos);
    if (!tok.empty()) {
      int v = 0;
      auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (ec != std::errc() || p != tok.data() + tok.size() || v < 1 || v > 8)
        t.bad_cell(r, col, tok, "mobility level 1..8");
      levels.push_back(v);
    }
    if (next == std::string::npos) break;
    pos = next + 1;
  }
  if (levels.empty()) t.bad_cell(r, col, raw, "semicolon-joined mobility levels");
  return levels;
}

}  // namespace detail

inline World load_world(const WorldPaths& paths) {
  World w;

  {
    CsvTable t = CsvTable::load(paths.msoas);
    t.require_columns({"msoa", "population_18_64", "imd_quintile", "mobility_levels"});
    for (std::size_t r = 0; r < t.n_rows(); ++r) {
      MsoaRecord rec;
      rec.code = t.get_str(r, "msoa");
      if (rec.code.empty()) t.bad_cell(r, "msoa", "", "non-empty identifier");
      if (w.msoa_index.count(rec.code))
        throw Error(ErrorKind::SchemaViolation, paths.msoas + " row " + std::to_string(r + 2) +
                                                    ": duplicate msoa '" + rec.code + "'");
      rec.population_18_64 = t.get_int(r, "population_18_64");
      if (rec.population_18_64 <= 0)
        t.bad_cell(r, "population_18_64", t.get_str(r, "population_18_64"), "positive integer");
      rec.imd_quintile = static_cast<int>(t.get_int(r, "imd_quintile"));
      if (rec.imd_quintile < 1 || rec.imd_quintile > 5)
        t.bad_cell(r, "imd_quintile", t.get_str(r, "imd_quintile"), "quintile 1..5");
      rec.mobility_levels = detail::parse_levels(t, r, "mobility_levels");
      rec.mobility = msoa_mobility(rec.mobility_levels);
      w.msoa_index[rec.code] = static_cast<int>(w.msoas.size());
      w.msoas.push_back(std::move(rec));
    }
  }

  {
    CsvTable t = CsvTable::load(paths.workzones);
    t.require_columns({"workzone", "msoa"});
    for (std::size_t r = 0; r < t.n_rows(); ++r) {
      WorkzoneRecord rec;
      rec.code = t.get_str(r, "workzone");
      if (rec.code.empty()) t.bad_cell(r, "workzone", "", "non-empty identifier");
      if (w.workzone_index.count(rec.code))
        throw Error(ErrorKind::SchemaViolation, paths.workzones + " row " + std::to_string(r + 2) +
                                                    ": duplicate workzone '" + rec.code + "'");
      const std::string& msoa = t.get_str(r, "msoa");
      rec.msoa = w.msoa_id(msoa);
      if (rec.msoa < 0)
        throw Error(ErrorKind::DanglingReference,
                    "workzone '" + rec.code + "' references unknown msoa '" + msoa + "'");
      w.workzone_index[rec.code] = static_cast<int>(w.workzones.size());
      w.workzones.push_back(std::move(rec));
    }
  }

  {
    CsvTable t = CsvTable::load(paths.sic);
    t.require_columns({"sic_division", "sector", "proximity", "permanence"});
    for (std::size_t r = 0; r < t.n_rows(); ++r) {
      SicDivision rec;
      rec.code = static_cast<int>(t.get_int(r, "sic_division"));
      if (rec.code < 1 || rec.code > 99)
        t.bad_cell(r, "sic_division", t.get_str(r, "sic_division"), "division code 1..99");
      if (w.sic.count(rec.code))
        throw Error(ErrorKind::SchemaViolation, paths.sic + " row " + std::to_string(r + 2) +
                                                    ": duplicate sic_division " + std::to_string(rec.code));
      const std::string& sector = t.get_str(r, "sector");
      auto parsed = parse_sector(sector);
      if (!parsed) t.bad_cell(r, "sector", sector, "one of the 11 industry sectors");
      rec.sector = *parsed;
      rec.proximity = t.get_double(r, "proximity");
      if (rec.proximity < 0.0 || rec.proximity > 100.0)
        t.bad_cell(r, "proximity", t.get_str(r, "proximity"), "score in [0,100]");
      rec.permanence = t.get_double(r, "permanence");
      if (rec.permanence < 0.0 || rec.permanence > 1.0)
        t.bad_cell(r, "permanence", t.get_str(r, "permanence"), "proportion in [0,1]");
      w.sic[rec.code] = rec;
    }
  }

  {
    CsvTable t = CsvTable::load(paths.workplaces);
    t.require_columns({"uprn", "msoa", "workzone", "sic_division", "employees"});
    for (std::size_t r = 0; r < t.n_rows(); ++r) {
      UprnRecord rec;
      rec.code = t.get_str(r, "uprn");
      if (rec.code.empty()) t.bad_cell(r, "uprn", "", "non-empty identifier");
      if (w.uprn_index.count(rec.code))
        throw Error(ErrorKind::SchemaViolation, paths.workplaces + " row " + std::to_string(r + 2) +
                                                    ": duplicate uprn '" + rec.code + "'");
      const std::string& msoa = t.get_str(r, "msoa");
      rec.msoa = w.msoa_id(msoa);
      if (rec.msoa < 0)
        throw Error(ErrorKind::DanglingReference,
                    "uprn '" + rec.code + "' references unknown msoa '" + msoa + "'");
      const std::string& wz = t.get_str(r, "workzone");
      rec.workzone = w.workzone_id(wz);
      if (rec.workzone < 0)
        throw Error(ErrorKind::DanglingReference,
                    "uprn '" + rec.code + "' references unknown workzone '" + wz + "'");
      if (w.workzones[rec.workzone].msoa != rec.msoa)
        throw Error(ErrorKind::DanglingReference, "uprn '" + rec.code + "': workzone '" + wz +
                                                      "' is not nested in msoa '" + msoa + "'");
      const std::string& sic = t.get_str(r, "sic_division");
      if (!sic.empty()) {
        int code = 0;
        auto [p, ec] = std::from_chars(sic.data(), sic.data() + sic.size(), code);
        if (ec != std::errc() || p != sic.data() + sic.size())
          t.bad_cell(r, "sic_division", sic, "integer division code or empty");
        if (!w.sic.count(code))
          throw Error(ErrorKind::DanglingReference,
                      "uprn '" + rec.code + "' references unknown sic_division " + std::to_string(code));
        rec.sic = code;
      }
      rec.employees = t.get_int(r, "employees");
      if (rec.employees < 0) t.bad_cell(r, "employees", t.get_str(r, "employees"), "non-negative integer");
      w.uprn_index[rec.code] = static_cast<int>(w.uprns.size());
      w.uprns.push_back(std::move(rec));
    }
  }

  w.adjacency.resize(static_cast<int>(w.msoas.size()));
  {
    CsvTable t = CsvTable::load(paths.adjacency);
    t.require_columns({"msoa_a", "msoa_b"});
    for (std::size_t r = 0; r < t.n_rows(); ++r) {
      const std::string& a = t.get_str(r, "msoa_a");
      const std::string& b = t.get_str(r, "msoa_b");
      int ia = w.msoa_id(a), ib = w.msoa_id(b);
      if (ia < 0) throw Error(ErrorKind::DanglingReference, "adjacency references unknown msoa '" + a + "'");
      if (ib < 0) throw Error(ErrorKind::DanglingReference, "adjacency references unknown msoa '" + b + "'");
      if (ia == ib)
        throw Error(ErrorKind::SchemaViolation,
                    paths.adjacency + " row " + std::to_string(r + 2) + ": self-adjacent msoa '" + a + "'");
      w.adjacency.add_edge(ia, ib);
    }
  }

  if (!paths.periods.empty()) {
    CsvTable t = CsvTable::load(paths.periods);
    t.require_columns({"name", "start", "end"});
    for (std::size_t r = 0; r < t.n_rows(); ++r) {
      const std::string& name = t.get_str(r, "name");
      DateRange range{parse_date(t.get_str(r, "start")), parse_date(t.get_str(r, "end"))};
      if (range.last < range.first) t.bad_cell(r, "end", t.get_str(r, "end"), "end date >= start date");
      if (name == "Delta") w.periods.delta.range = range;
      else if (name == "Omicron") w.periods.omicron.range = range;
      else if (name == "Overall") w.periods.overall.range = range;
      else t.bad_cell(r, "name", name, "Delta, Omicron, or Overall");
    }
  }

  w.workplaces_by_msoa_sector.assign(w.msoas.size(), {});
  w.employees_by_msoa_sector_sic.assign(w.msoas.size(), {});
  for (const auto& u : w.uprns) {
    ++w.ingest.n_uprns_total;
    if (!u.linked()) {
      ++w.ingest.n_uprns_unlinked;
      continue;
    }
    const Sector s = w.sector_of(*u.sic);
    w.workplaces_by_msoa_sector[u.msoa][static_cast<int>(s)]++;
    auto& divs = w.employees_by_msoa_sector_sic[u.msoa][static_cast<int>(s)];
    auto it = std::find_if(divs.begin(), divs.end(), [&](const auto& p) { return p.first == *u.sic; });
    if (it == divs.end()) divs.emplace_back(*u.sic, u.employees);
    else it->second += u.employees;
  }
  for (auto& per_msoa : w.employees_by_msoa_sector_sic)
    for (auto& divs : per_msoa)
      std::sort(divs.begin(), divs.end());

  return w;
}

}  // namespace crp
