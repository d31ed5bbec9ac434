#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <numeric>
#include <set>

#include "crp/clusters.hpp"
#include "crp/rng.hpp"
#include "helpers.hpp"

using namespace crp;
using testutil::TempDir;

namespace {

Date day(int n) { return make_date(2021, 6, 20) + n; }

// Independent oracle: link every pair of same-UPRN events ≤6 days apart and
// take the transitive closure with union-find, then keep classes of size ≥2.
// Deliberately a different algorithm from the consecutive-gap chaining.
std::vector<std::pair<Date, Date>> oracle_clusters(std::vector<Date> dates) {
  std::vector<std::size_t> parent(dates.size());
  std::iota(parent.begin(), parent.end(), 0);
  std::function<std::size_t(std::size_t)> find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (std::size_t i = 0; i < dates.size(); ++i)
    for (std::size_t j = i + 1; j < dates.size(); ++j)
      if (std::abs(dates[i] - dates[j]) <= 6) parent[find(i)] = find(j);
  std::map<std::size_t, std::vector<Date>> classes;
  for (std::size_t i = 0; i < dates.size(); ++i) classes[find(i)].push_back(dates[i]);
  std::vector<std::pair<Date, Date>> spans;
  for (auto& [root, ds] : classes) {
    if (ds.size() < 2) continue;
    auto [lo, hi] = std::minmax_element(ds.begin(), ds.end());
    spans.emplace_back(*lo, *hi);
  }
  std::sort(spans.begin(), spans.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  return spans;
}

World tiny_world() {
  TempDir dir;  // files only needed during load
  WorldPaths p;
  p.msoas = dir.file("msoas.csv",
                     "msoa,population_18_64,imd_quintile,mobility_levels\n"
                     "M1,5000,1,1\nM2,8000,3,5\n");
  p.workzones = dir.file("workzones.csv", "workzone,msoa\nW1,M1\nW2,M2\n");
  p.sic = dir.file("sic.csv",
                   "sic_division,sector,proximity,permanence\n"
                   "10,Manufacturing,55.5,0.9\n85,Education,70,0.8\n");
  p.workplaces = dir.file("workplaces.csv",
                          "uprn,msoa,workzone,sic_division,employees\n"
                          "U1,M1,W1,10,120\n"
                          "U2,M1,W1,85,40\n"
                          "U3,M2,W2,10,30\n"
                          "U4,M2,W2,,15\n");
  p.adjacency = dir.file("adjacency.csv", "msoa_a,msoa_b\nM1,M2\n");
  return load_world(p);
}

}  // namespace

TEST_CASE("episode boundary: six days links, seven does not", "[clusters]") {
  auto one = chain_events(0, {day(0), day(6)});
  REQUIRE(one.size() == 1);
  CHECK(one[0].first == day(0));
  CHECK(one[0].last == day(6));
  CHECK(one[0].n_events() == 2);

  CHECK(chain_events(0, {day(0), day(7)}).empty());
  CHECK(chain_events(0, {day(3)}).empty());
  CHECK(chain_events(0, {}).empty());
}

TEST_CASE("chains split on gaps and keep multi-event runs", "[clusters]") {
  auto cs = chain_events(0, {day(0), day(3), day(9), day(30), day(31)});
  REQUIRE(cs.size() == 2);
  CHECK(cs[0].first == day(0));
  CHECK(cs[0].last == day(9));
  CHECK(cs[0].n_events() == 3);
  CHECK(cs[1].first == day(30));
  CHECK(cs[1].last == day(31));

  // same-day repeat events count
  auto rep = chain_events(0, {day(4), day(4)});
  REQUIRE(rep.size() == 1);
  CHECK(rep[0].n_events() == 2);
}

TEST_CASE("activity interval is closed", "[clusters]") {
  Cluster c;
  c.first = day(0);
  c.last = day(6);
  CHECK(is_active(c, day(0)));
  CHECK(is_active(c, day(6)));
  CHECK_FALSE(is_active(c, day(7)));
  c.first = c.last = day(30);
  CHECK(is_active(c, day(30)));
  CHECK_FALSE(is_active(c, day(29)));
}

TEST_CASE("chaining agrees with pairwise-closure oracle on random streams", "[clusters][oracle]") {
  Rng rng(20210620);
  for (int trial = 0; trial < 10000; ++trial) {
    std::size_t n = rng.below(12);
    std::vector<Date> dates;
    for (std::size_t i = 0; i < n; ++i) dates.push_back(day(static_cast<int>(rng.below(60))));

    auto got = chain_events(0, dates);
    auto want = oracle_clusters(dates);
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(got[i].first == want[i].first);
      CHECK(got[i].last == want[i].second);
    }

    // chain partition: every event lands in exactly one chain or is a singleton
    std::size_t covered = 0;
    for (const auto& c : got) covered += static_cast<std::size_t>(c.n_events());
    std::vector<Date> sorted = dates;
    std::sort(sorted.begin(), sorted.end());
    std::size_t singletons = 0;
    for (std::size_t i = 0; i < sorted.size(); ++i) {
      bool left = i > 0 && sorted[i] - sorted[i - 1] <= 6;
      bool right = i + 1 < sorted.size() && sorted[i + 1] - sorted[i] <= 6;
      if (!left && !right) ++singletons;
    }
    CHECK(covered + singletons == dates.size());
  }
}

TEST_CASE("detection is order independent", "[clusters]") {
  World w = tiny_world();
  std::vector<CaseEvent> events;
  int id = 0;
  for (int d : {0, 3, 9, 30, 31}) events.push_back({"c" + std::to_string(id++), 0, day(d)});
  for (int d : {10, 12}) events.push_back({"c" + std::to_string(id++), 2, day(d)});

  auto base = detect_clusters(events, w);
  Rng rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    rng.shuffle(events);
    auto got = detect_clusters(events, w);
    REQUIRE(got.size() == base.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(got[i].uprn == base[i].uprn);
      CHECK(got[i].first == base[i].first);
      CHECK(got[i].last == base[i].last);
    }
  }
}

TEST_CASE("weekly series counts any-day activity with denominators", "[clusters]") {
  World w = tiny_world();
  StudyPeriod horizon = w.periods.overall;

  SECTION("cluster inside one week") {
    Cluster c{0, day(0), day(6), {day(0), day(6)}};
    auto s = weekly_series({c}, w, horizon);
    long total = 0;
    for (const auto& r : s.rows) {
      if (r.msoa == w.msoa_id("M1") && r.industry == Sector::Manufacturing && r.week == 0)
        CHECK(r.active == 1);
      else
        CHECK(r.active == 0);
      total += r.active;
      CHECK(r.n_workplaces > 0);
    }
    CHECK(total == 1);
  }

  SECTION("cluster straddling a week boundary counts in both") {
    Cluster c{0, day(5), day(9), {day(5), day(9)}};
    auto s = weekly_series({c}, w, horizon);
    for (const auto& r : s.rows) {
      if (r.msoa == w.msoa_id("M1") && r.industry == Sector::Manufacturing)
        CHECK(r.active == (r.week == 0 || r.week == 1 ? 1 : 0));
    }
  }

  SECTION("no clusters, all zeros, dense cells") {
    auto s = weekly_series({}, w, horizon);
    // M1 has Manufacturing+Education, M2 has Manufacturing; 3 cells x 36 weeks
    CHECK(s.rows.size() == 3u * 36u);
    for (const auto& r : s.rows) CHECK(r.active == 0);
  }

  SECTION("unlinked uprn clusters are dropped and counted") {
    Cluster c{3, day(0), day(3), {day(0), day(3)}};  // U4 has no industry
    auto s = weekly_series({c}, w, horizon);
    CHECK(s.n_unlinked_clusters == 1);
    for (const auto& r : s.rows) CHECK(r.active == 0);
  }
}

TEST_CASE("weekly series equals day-level oracle on random clusters", "[clusters][oracle]") {
  World w = tiny_world();
  StudyPeriod horizon = w.periods.overall;
  WeekGrid grid{horizon.range.first};
  Rng rng(7);

  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Cluster> clusters;
    std::size_t n = 1 + rng.below(8);
    for (std::size_t i = 0; i < n; ++i) {
      int uprn = static_cast<int>(rng.below(3));  // linked UPRNs only
      int a = static_cast<int>(rng.below(250));
      int len = static_cast<int>(rng.below(20));
      clusters.push_back({uprn, day(a), day(a + len), {day(a), day(a + len)}});
    }
    auto s = weekly_series(clusters, w, horizon);

    // oracle: day-by-day activity, then any-day-in-week reduction
    std::map<std::tuple<int, int, int>, long> want;
    for (const auto& c : clusters) {
      const auto& u = w.uprns[static_cast<std::size_t>(c.uprn)];
      int sec = static_cast<int>(w.sector_of(*u.sic));
      std::set<int> weeks;
      for (Date d = c.first; d <= c.last; d = d + 1) {
        int wk = grid.index_of(d);
        if (wk >= 0 && wk < s.n_weeks && is_active(c, d)) weeks.insert(wk);
      }
      for (int wk : weeks) want[{u.msoa, sec, wk}]++;
    }
    for (const auto& r : s.rows) {
      auto it = want.find({r.msoa, static_cast<int>(r.industry), r.week});
      long expect = it == want.end() ? 0 : it->second;
      REQUIRE(r.active == expect);
    }
  }
}

TEST_CASE("education exclusion removes only listed holiday weeks", "[clusters]") {
  World w = tiny_world();
  auto s = weekly_series({}, w, w.periods.overall);
  auto filtered = apply_education_exclusion(s);

  WeekGrid grid = s.grid;
  auto week_of = [&](int y, int m, int d) { return grid.index_of(make_date(y, m, d)); };
  std::set<int> removed_weeks;
  for (const auto& r : s.rows) {
    if (r.industry != Sector::Education) continue;
    bool still = false;
    for (const auto& f : filtered.rows)
      if (f.industry == Sector::Education && f.msoa == r.msoa && f.week == r.week) still = true;
    if (!still) removed_weeks.insert(r.week);
  }

  CHECK(removed_weeks.count(week_of(2021, 8, 1)) == 1);
  CHECK(removed_weeks.count(week_of(2021, 10, 26)) == 1);
  CHECK(removed_weeks.count(week_of(2021, 12, 25)) == 1);
  CHECK(removed_weeks.count(week_of(2021, 11, 15)) == 0);
  CHECK(removed_weeks.count(week_of(2021, 6, 21)) == 0);

  // weeks overlapping 2021-07-18..2021-09-12 + 10-24..10-31 + 12-19..2022-01-09
  // on the Sunday grid: exactly 9 + 2 + 4 weeks (boundary weeks overlap too)
  CHECK(removed_weeks.size() == 15);

  // non-Education rows untouched
  std::size_t manu_before = 0, manu_after = 0;
  for (const auto& r : s.rows) manu_before += r.industry == Sector::Manufacturing;
  for (const auto& r : filtered.rows) manu_after += r.industry == Sector::Manufacturing;
  CHECK(manu_before == manu_after);
}

TEST_CASE("events load with dedup and strict references", "[clusters]") {
  World w = tiny_world();
  TempDir dir;

  auto path = dir.file("events.csv",
                       "case_id,uprn,event_date\n"
                       "p1,U1,2021-06-21\n"
                       "p1,U1,2021-06-21\n"  // duplicate row collapses
                       "p1,U1,2021-06-25\n"  // same case re-reported later: kept
                       "p2,U2,2021-07-01\n");
  auto events = load_events(path, w);
  REQUIRE(events.size() == 3);
  CHECK(events[0].uprn == w.uprn_index.at("U1"));

  auto bad_uprn = dir.file("bad1.csv", "case_id,uprn,event_date\np1,U9,2021-06-21\n");
  CHECK_THROWS_AS(load_events(bad_uprn, w), Error);

  auto bad_date = dir.file("bad2.csv", "case_id,uprn,event_date\np1,U1,2021-06-19\n");
  try {
    load_events(bad_date, w);
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::OutOfRange);
  }
}

TEST_CASE("cluster csv round trip", "[clusters]") {
  World w = tiny_world();
  TempDir dir;
  std::vector<Cluster> clusters = {
      {0, day(0), day(6), {day(0), day(3), day(6)}},
      {2, day(10), day(12), {day(10), day(12)}},
  };
  auto cpath = (dir.path() / "clusters.csv").string();
  write_clusters_csv(cpath, clusters, w);
  auto t = CsvTable::load(cpath);
  REQUIRE(t.n_rows() == 2);
  CHECK(t.get_str(0, "cluster_id") == "C000001");
  CHECK(t.get_str(0, "uprn") == "U1");
  CHECK(t.get_str(0, "industry") == "Manufacturing");
  CHECK(t.get_int(0, "n_events") == 3);
  CHECK(t.get_str(1, "msoa") == "M2");

  auto s = weekly_series(clusters, w, w.periods.overall);
  auto spath = (dir.path() / "cluster_series.csv").string();
  write_cluster_series_csv(spath, s, w);
  auto back = read_cluster_series_csv(spath, w, w.periods.overall);
  REQUIRE(back.rows.size() == s.rows.size());
  for (std::size_t i = 0; i < s.rows.size(); ++i) {
    CHECK(back.rows[i].msoa == s.rows[i].msoa);
    CHECK(back.rows[i].industry == s.rows[i].industry);
    CHECK(back.rows[i].week == s.rows[i].week);
    CHECK(back.rows[i].active == s.rows[i].active);
    CHECK(back.rows[i].n_workplaces == s.rows[i].n_workplaces);
  }
}
