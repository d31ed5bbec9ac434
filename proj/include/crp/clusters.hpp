#pragma once

#include <algorithm>
#include <string>
#include <unordered_set>
#include <vector>

#include "crp/csv.hpp"
#include "crp/dates.hpp"
#include "crp/errors.hpp"
#include "crp/parallel.hpp"
#include "crp/taxonomy.hpp"

namespace crp {

struct CaseEvent {
  std::string case_id;
  int uprn = -1;
  Date date;
};

// Ingest with dedup on (case_id, uprn, date); unknown UPRNs and out-of-horizon
// dates are hard errors, not silent drops.
inline std::vector<CaseEvent> load_events(const std::string& path, const World& w) {
  CsvTable t = CsvTable::load(path);
  t.require_columns({"case_id", "uprn", "event_date"});
  std::vector<CaseEvent> events;
  std::unordered_set<std::string> seen;
  const DateRange horizon = w.periods.overall.range;
  for (std::size_t r = 0; r < t.n_rows(); ++r) {
    CaseEvent e;
    e.case_id = t.get_str(r, "case_id");
    const std::string& uprn = t.get_str(r, "uprn");
    e.date = parse_date(t.get_str(r, "event_date"));
    if (!horizon.contains(e.date))
      throw Error(ErrorKind::OutOfRange, path + " row " + std::to_string(r + 2) + ": event_date " +
                                             to_iso(e.date) + " outside study horizon " +
                                             to_iso(horizon.first) + ".." + to_iso(horizon.last));
    auto it = w.uprn_index.find(uprn);
    if (it == w.uprn_index.end())
      throw Error(ErrorKind::DanglingReference,
                  path + " row " + std::to_string(r + 2) + ": unknown uprn '" + uprn + "'");
    e.uprn = it->second;
    std::string key = e.case_id + '\x1f' + uprn + '\x1f' + to_iso(e.date);
    if (!seen.insert(std::move(key)).second) continue;  // duplicate report
    events.push_back(std::move(e));
  }
  return events;
}

struct Cluster {
  int uprn = -1;
  Date first;
  Date last;
  std::vector<Date> dates;  // sorted, ≥2 entries

  int n_events() const { return static_cast<int>(dates.size()); }
};

inline bool is_active(const Cluster& c, Date d) { return c.first <= d && d <= c.last; }

inline constexpr int kEpisodeDays = 6;

// Chain date-sorted events at one UPRN: a gap > 6 days starts a new chain;
// chains of one are not clusters.
inline std::vector<Cluster> chain_events(int uprn, std::vector<Date> dates) {
  std::vector<Cluster> out;
  if (dates.empty()) return out;
  std::sort(dates.begin(), dates.end());
  std::size_t start = 0;
  auto flush = [&](std::size_t end) {
    if (end - start >= 2) {
      Cluster c;
      c.uprn = uprn;
      c.dates.assign(dates.begin() + static_cast<std::ptrdiff_t>(start),
                     dates.begin() + static_cast<std::ptrdiff_t>(end));
      c.first = c.dates.front();
      c.last = c.dates.back();
      out.push_back(std::move(c));
    }
    start = end;
  };
  for (std::size_t i = 1; i < dates.size(); ++i)
    if (dates[i] - dates[i - 1] > kEpisodeDays) flush(i);
  flush(dates.size());
  return out;
}

// Detection across the whole stream; result is sorted by (uprn, first date)
// regardless of input order.
inline std::vector<Cluster> detect_clusters(const std::vector<CaseEvent>& events, const World& w,
                                            int threads = 1) {
  std::vector<std::vector<Date>> by_uprn(w.uprns.size());
  for (const auto& e : events) by_uprn[static_cast<std::size_t>(e.uprn)].push_back(e.date);

  std::vector<std::vector<Cluster>> per_uprn(w.uprns.size());
  parallel_for(w.uprns.size(), threads, [&](std::size_t u) {
    if (!by_uprn[u].empty()) per_uprn[u] = chain_events(static_cast<int>(u), std::move(by_uprn[u]));
  });

  std::vector<Cluster> all;
  for (auto& cs : per_uprn)
    for (auto& c : cs) all.push_back(std::move(c));
  return all;
}

struct SeriesRow {
  int msoa = -1;
  Sector industry = Sector::Services;
  int week = 0;
  long active = 0;
  long n_workplaces = 0;
};

struct ClusterSeries {
  WeekGrid grid;
  int n_weeks = 0;
  std::vector<SeriesRow> rows;              // dense over cells with workplaces
  std::size_t n_unlinked_clusters = 0;      // dropped: UPRN has no industry link

  double cluster_rate(const SeriesRow& r) const {
    return static_cast<double>(r.active) / static_cast<double>(r.n_workplaces);
  }
};

// Weekly active-cluster counts per (MSOA, industry). A cluster is active in a
// week when any day of [first,last] falls in it; activity is an interval, so
// the touched weeks are exactly index_of(first)..index_of(last), clipped to
// the horizon. Cells without workplaces of an industry carry no denominator
// and are omitted.
inline ClusterSeries weekly_series(const std::vector<Cluster>& clusters, const World& w,
                                   const StudyPeriod& horizon) {
  ClusterSeries s{WeekGrid{horizon.range.first}, 0, {}, 0};
  s.n_weeks = s.grid.index_of(horizon.range.last) + 1;

  // counts[msoa][sector][week]
  const int nw = s.n_weeks;
  std::vector<long> counts(w.msoas.size() * static_cast<std::size_t>(kSectorCount) * static_cast<std::size_t>(nw), 0);
  auto idx = [&](int m, int sec, int wk) {
    return (static_cast<std::size_t>(m) * kSectorCount + static_cast<std::size_t>(sec)) * static_cast<std::size_t>(nw) +
           static_cast<std::size_t>(wk);
  };

  for (const auto& c : clusters) {
    const UprnRecord& u = w.uprns[static_cast<std::size_t>(c.uprn)];
    if (!u.linked()) {
      ++s.n_unlinked_clusters;
      continue;
    }
    const int sec = static_cast<int>(w.sector_of(*u.sic));
    int w0 = std::max(0, s.grid.index_of(c.first));
    int w1 = std::min(nw - 1, s.grid.index_of(c.last));
    for (int wk = w0; wk <= w1; ++wk) counts[idx(u.msoa, sec, wk)]++;
  }

  for (int m = 0; m < static_cast<int>(w.msoas.size()); ++m)
    for (int sec = 0; sec < kSectorCount; ++sec) {
      long denom = w.workplaces_by_msoa_sector[static_cast<std::size_t>(m)][sec];
      if (denom <= 0) continue;
      for (int wk = 0; wk < nw; ++wk)
        s.rows.push_back({m, static_cast<Sector>(sec), wk, counts[idx(m, sec, wk)], denom});
    }
  return s;
}

// Drop Education rows whose week overlaps a school-holiday window.
inline ClusterSeries apply_education_exclusion(const ClusterSeries& in) {
  ClusterSeries out{in.grid, in.n_weeks, {}, in.n_unlinked_clusters};
  out.rows.reserve(in.rows.size());
  for (const auto& r : in.rows) {
    if (r.industry == Sector::Education) {
      Date ws = in.grid.start_of(r.week), we = in.grid.end_of(r.week);
      bool excluded = false;
      for (const auto& range : education_exclusion_ranges())
        if (range.overlaps(ws, we)) {
          excluded = true;
          break;
        }
      if (excluded) continue;
    }
    out.rows.push_back(r);
  }
  return out;
}

inline void write_clusters_csv(const std::string& path, const std::vector<Cluster>& clusters,
                               const World& w) {
  // stable ids: order by (uprn code, first date, last date)
  std::vector<std::size_t> order(clusters.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& ca = clusters[a];
    const auto& cb = clusters[b];
    const std::string& ua = w.uprns[static_cast<std::size_t>(ca.uprn)].code;
    const std::string& ub = w.uprns[static_cast<std::size_t>(cb.uprn)].code;
    return std::tie(ua, ca.first.days, ca.last.days) < std::tie(ub, cb.first.days, cb.last.days);
  });

  CsvWriter out(path);
  out.row("cluster_id", "uprn", "msoa", "industry", "first_date", "last_date", "n_events");
  std::size_t seq = 0;
  for (std::size_t i : order) {
    const Cluster& c = clusters[i];
    const UprnRecord& u = w.uprns[static_cast<std::size_t>(c.uprn)];
    char id[16];
    std::snprintf(id, sizeof id, "C%06zu", ++seq);
    out.row(id, u.code, w.msoas[static_cast<std::size_t>(u.msoa)].code,
            u.linked() ? to_string(w.sector_of(*u.sic)) : std::string{}, to_iso(c.first), to_iso(c.last),
            c.n_events());
  }
  out.commit();
}

inline void write_cluster_series_csv(const std::string& path, const ClusterSeries& s, const World& w) {
  CsvWriter out(path);
  out.row("msoa", "industry", "week_start", "active_clusters", "n_workplaces");
  for (const auto& r : s.rows)
    out.row(w.msoas[static_cast<std::size_t>(r.msoa)].code, to_string(r.industry), to_iso(s.grid.start_of(r.week)),
            r.active, r.n_workplaces);
  out.commit();
}

inline ClusterSeries read_cluster_series_csv(const std::string& path, const World& w,
                                             const StudyPeriod& horizon) {
  CsvTable t = CsvTable::load(path);
  t.require_columns({"msoa", "industry", "week_start", "active_clusters", "n_workplaces"});
  ClusterSeries s{WeekGrid{horizon.range.first}, 0, {}, 0};
  s.n_weeks = s.grid.index_of(horizon.range.last) + 1;
  for (std::size_t r = 0; r < t.n_rows(); ++r) {
    SeriesRow row;
    const std::string& msoa = t.get_str(r, "msoa");
    row.msoa = w.msoa_id(msoa);
    if (row.msoa < 0)
      throw Error(ErrorKind::DanglingReference, path + ": unknown msoa '" + msoa + "'");
    auto sec = parse_sector(t.get_str(r, "industry"));
    if (!sec) t.bad_cell(r, "industry", t.get_str(r, "industry"), "industry sector name");
    row.industry = *sec;
    Date ws = parse_date(t.get_str(r, "week_start"));
    row.week = s.grid.index_of(ws);
    if (row.week < 0 || row.week >= s.n_weeks || s.grid.start_of(row.week) != ws)
      t.bad_cell(r, "week_start", t.get_str(r, "week_start"), "week start on the horizon grid");
    row.active = t.get_int(r, "active_clusters");
    if (row.active < 0) t.bad_cell(r, "active_clusters", t.get_str(r, "active_clusters"), "count >= 0");
    row.n_workplaces = t.get_int(r, "n_workplaces");
    if (row.n_workplaces <= 0) t.bad_cell(r, "n_workplaces", t.get_str(r, "n_workplaces"), "count > 0");
    s.rows.push_back(row);
  }
  return s;
}

}  // namespace crp
