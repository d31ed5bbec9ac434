#pragma once

#include <algorithm>
#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include "crp/taxonomy.hpp"

namespace testutil {

// Minimal in-memory world for model-level tests: MSOAs, adjacency, default
// periods. No workzones/workplaces unless the test adds them.
inline crp::World model_world(int n_msoas, const std::vector<std::pair<int, int>>& edges,
                              long population = 10000) {
  crp::World w;
  for (int m = 0; m < n_msoas; ++m) {
    crp::MsoaRecord rec;
    char code[16];
    std::snprintf(code, sizeof code, "M%03d", m);
    rec.code = code;
    rec.population_18_64 = population;
    rec.imd_quintile = 1 + m % 5;
    rec.mobility_levels = {1};
    rec.mobility = crp::MobilityClass::Metropolitan;
    w.msoa_index[rec.code] = m;
    w.msoas.push_back(std::move(rec));
  }
  w.adjacency.resize(n_msoas);
  for (auto [a, b] : edges) w.adjacency.add_edge(a, b);
  w.workplaces_by_msoa_sector.assign(static_cast<std::size_t>(n_msoas), {});
  w.employees_by_msoa_sector_sic.assign(static_cast<std::size_t>(n_msoas), {});
  return w;
}

inline std::vector<std::pair<int, int>> path_edges(int n) {
  std::vector<std::pair<int, int>> e;
  for (int i = 0; i + 1 < n; ++i) e.emplace_back(i, i + 1);
  return e;
}

// Adds a workzone under the given MSOA and returns its id.
inline int add_workzone(crp::World& w, int msoa) {
  crp::WorkzoneRecord rec;
  char code[16];
  std::snprintf(code, sizeof code, "W%04d", static_cast<int>(w.workzones.size()));
  rec.code = code;
  rec.msoa = msoa;
  const int id = static_cast<int>(w.workzones.size());
  w.workzone_index[rec.code] = id;
  w.workzones.push_back(std::move(rec));
  return id;
}

inline void add_sic(crp::World& w, int code, crp::Sector sector, double proximity,
                    double permanence) {
  w.sic[code] = crp::SicDivision{code, sector, proximity, permanence};
}

// Adds `count` industry-linked workplaces of one SIC division to a workzone,
// maintaining the per-(MSOA, sector) rollups the way the ingest loader does.
inline void add_workplaces(crp::World& w, int msoa, int workzone, int sic, int count,
                           long employees_each) {
  const crp::Sector s = w.sic.at(sic).sector;
  for (int i = 0; i < count; ++i) {
    crp::UprnRecord u;
    char code[24];
    std::snprintf(code, sizeof code, "U%06d", static_cast<int>(w.uprns.size()));
    u.code = code;
    u.msoa = msoa;
    u.workzone = workzone;
    u.sic = sic;
    u.employees = employees_each;
    w.uprn_index[u.code] = static_cast<int>(w.uprns.size());
    w.uprns.push_back(std::move(u));
  }
  w.ingest.n_uprns_total += static_cast<std::size_t>(count);
  w.workplaces_by_msoa_sector[static_cast<std::size_t>(msoa)][static_cast<int>(s)] += count;
  auto& divs = w.employees_by_msoa_sector_sic[static_cast<std::size_t>(msoa)][static_cast<int>(s)];
  auto it = std::find_if(divs.begin(), divs.end(), [&](const auto& p) { return p.first == sic; });
  if (it == divs.end()) {
    divs.emplace_back(sic, count * employees_each);
    std::sort(divs.begin(), divs.end());
  } else {
    it->second += count * employees_each;
  }
}

}  // namespace testutil
