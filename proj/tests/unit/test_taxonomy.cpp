#include <catch2/catch_amalgamated.hpp>

#include "crp/taxonomy.hpp"
#include "helpers.hpp"

using namespace crp;
using testutil::TempDir;

namespace {

// A tiny consistent world: 3 MSOAs in a path graph, 4 workzones, 5 UPRNs.
WorldPaths write_world(const TempDir& dir) {
  WorldPaths p;
  p.msoas = dir.file("msoas.csv",
                     "msoa,population_18_64,imd_quintile,mobility_levels\n"
                     "M1,5000,1,1;2;2\n"
                     "M2,8000,3,5;6\n"
                     "M3,3000,5,7;8;3\n");
  p.workzones = dir.file("workzones.csv",
                         "workzone,msoa\n"
                         "W1,M1\nW2,M1\nW3,M2\nW4,M3\n");
  p.sic = dir.file("sic.csv",
                   "sic_division,sector,proximity,permanence\n"
                   "10,Manufacturing,55.5,0.9\n"
                   "47,Services,62.0,0.75\n"
                   "86,Human health and social work,80.0,0.95\n");
  p.workplaces = dir.file("workplaces.csv",
                          "uprn,msoa,workzone,sic_division,employees\n"
                          "U1,M1,W1,10,120\n"
                          "U2,M1,W2,47,8\n"
                          "U3,M2,W3,47,30\n"
                          "U4,M3,W4,86,400\n"
                          "U5,M2,W3,,15\n");
  p.adjacency = dir.file("adjacency.csv", "msoa_a,msoa_b\nM1,M2\nM2,M3\n");
  return p;
}

}  // namespace

TEST_CASE("mobility regroups levels pairwise", "[taxonomy]") {
  CHECK(regroup_mobility(1) == MobilityClass::Metropolitan);
  CHECK(regroup_mobility(2) == MobilityClass::Metropolitan);
  CHECK(regroup_mobility(3) == MobilityClass::Exurban);
  CHECK(regroup_mobility(4) == MobilityClass::Exurban);
  CHECK(regroup_mobility(5) == MobilityClass::Suburban);
  CHECK(regroup_mobility(6) == MobilityClass::Suburban);
  CHECK(regroup_mobility(7) == MobilityClass::Rural);
  CHECK(regroup_mobility(8) == MobilityClass::Rural);
  CHECK_THROWS_AS(regroup_mobility(0), Error);
  CHECK_THROWS_AS(regroup_mobility(9), Error);
}

TEST_CASE("msoa class is the mode, ties break toward metropolitan end", "[taxonomy]") {
  CHECK(msoa_mobility({1, 2, 5}) == MobilityClass::Metropolitan);
  CHECK(msoa_mobility({7, 8, 8}) == MobilityClass::Rural);
  CHECK(msoa_mobility({1, 7}) == MobilityClass::Metropolitan);   // tie
  CHECK(msoa_mobility({5, 3}) == MobilityClass::Exurban);        // tie
  CHECK(msoa_mobility({8}) == MobilityClass::Rural);
  CHECK_THROWS_AS(msoa_mobility({}), Error);
}

TEST_CASE("sector names round trip and stay closed", "[taxonomy]") {
  for (Sector s : all_sectors()) {
    auto back = parse_sector(to_string(s));
    REQUIRE(back.has_value());
    CHECK(*back == s);
  }
  CHECK_FALSE(parse_sector("Retail").has_value());
  CHECK(to_string(Sector::TransportDistributionWarehousing) ==
        "Transport, distribution and warehousing");
  CHECK(to_string(Sector::MiningQuarrying) == "Mining and Quarrying");
}

TEST_CASE("default study periods", "[taxonomy]") {
  StudyPeriods p;
  CHECK(to_iso(p.delta.range.first) == "2021-06-20");
  CHECK(to_iso(p.delta.range.last) == "2021-09-30");
  CHECK(to_iso(p.omicron.range.first) == "2021-12-07");
  CHECK(to_iso(p.omicron.range.last) == "2022-02-20");
  CHECK(to_iso(p.overall.range.first) == "2021-06-20");
  CHECK(to_iso(p.overall.range.last) == "2022-02-20");
  CHECK_THROWS_AS(p.by_name("delta"), Error);
}

TEST_CASE("world loads with interning, rollups, and ingest report", "[taxonomy]") {
  TempDir dir;
  World w = load_world(write_world(dir));

  REQUIRE(w.msoas.size() == 3);
  REQUIRE(w.workzones.size() == 4);
  REQUIRE(w.uprns.size() == 5);
  CHECK(w.msoas[w.msoa_id("M1")].mobility == MobilityClass::Metropolitan);
  CHECK(w.msoas[w.msoa_id("M2")].mobility == MobilityClass::Suburban);
  CHECK(w.msoas[w.msoa_id("M3")].mobility == MobilityClass::Rural);

  CHECK(w.adjacency.has_edge(w.msoa_id("M1"), w.msoa_id("M2")));
  CHECK(w.adjacency.has_edge(w.msoa_id("M2"), w.msoa_id("M1")));
  CHECK_FALSE(w.adjacency.has_edge(w.msoa_id("M1"), w.msoa_id("M3")));
  CHECK(w.adjacency.n_edges() == 2);

  CHECK(w.n_workplaces(w.msoa_id("M1"), Sector::Manufacturing) == 1);
  CHECK(w.n_workplaces(w.msoa_id("M1"), Sector::Services) == 1);
  CHECK(w.n_workplaces(w.msoa_id("M2"), Sector::Services) == 1);  // unlinked U5 not counted
  CHECK(w.n_workplaces(w.msoa_id("M3"), Sector::HumanHealthSocialWork) == 1);

  CHECK(w.ingest.n_uprns_total == 5);
  CHECK(w.ingest.n_uprns_unlinked == 1);
  CHECK_THAT(w.ingest.dropped_fraction(), Catch::Matchers::WithinAbs(0.2, 1e-15));

  CHECK(w.n_weeks() == 36);
  CHECK(w.week_grid().index_of(make_date(2021, 6, 24)) == 0);
}

TEST_CASE("world load flags referential breaks by kind", "[taxonomy]") {
  auto expect_kind = [](WorldPaths p, ErrorKind want) {
    try {
      load_world(p);
      FAIL("expected throw");
    } catch (const Error& e) {
      CHECK(e.kind() == want);
    }
  };

  {
    TempDir dir;
    auto p = write_world(dir);
    dir.file("workzones.csv", "workzone,msoa\nW1,M9\n");
    expect_kind(p, ErrorKind::DanglingReference);
  }
  {
    TempDir dir;
    auto p = write_world(dir);
    dir.file("workplaces.csv",
             "uprn,msoa,workzone,sic_division,employees\nU1,M1,W3,10,5\n");  // W3 belongs to M2
    expect_kind(p, ErrorKind::DanglingReference);
  }
  {
    TempDir dir;
    auto p = write_world(dir);
    dir.file("workplaces.csv", "uprn,msoa,workzone,sic_division,employees\nU1,M1,W1,99,5\n");
    expect_kind(p, ErrorKind::DanglingReference);
  }
  {
    TempDir dir;
    auto p = write_world(dir);
    dir.file("adjacency.csv", "msoa_a,msoa_b\nM1,M1\n");
    expect_kind(p, ErrorKind::SchemaViolation);
  }
  {
    TempDir dir;
    auto p = write_world(dir);
    dir.file("msoas.csv",
             "msoa,population_18_64,imd_quintile,mobility_levels\nM1,5000,6,1\n"
             "M2,8000,3,5\nM3,3000,5,7\n");
    expect_kind(p, ErrorKind::SchemaViolation);  // quintile out of range
  }
  {
    TempDir dir;
    auto p = write_world(dir);
    p.msoas = (dir.path() / "absent.csv").string();
    expect_kind(p, ErrorKind::MissingFile);
  }
}

TEST_CASE("period overrides replace defaults", "[taxonomy]") {
  TempDir dir;
  auto p = write_world(dir);
  p.periods = dir.file("periods.csv",
                       "name,start,end\n"
                       "Overall,2021-06-20,2021-10-02\n"
                       "Delta,2021-06-20,2021-08-01\n");
  World w = load_world(p);
  CHECK(to_iso(w.periods.overall.range.last) == "2021-10-02");
  CHECK(to_iso(w.periods.delta.range.last) == "2021-08-01");
  CHECK(to_iso(w.periods.omicron.range.first) == "2021-12-07");  // untouched default
  CHECK(w.n_weeks() == 15);
}

TEST_CASE("connected components partition the graph", "[taxonomy]") {
  AdjacencyGraph g;
  g.resize(6);
  g.add_edge(0, 1);
  g.add_edge(1, 2);
  g.add_edge(4, 5);
  auto comps = g.connected_components();
  REQUIRE(comps.size() == 3);
  CHECK(comps[0] == std::vector<int>{0, 1, 2});
  CHECK(comps[1] == std::vector<int>{3});
  CHECK(comps[2] == std::vector<int>{4, 5});
  CHECK_THROWS_AS(g.add_edge(2, 2), Error);
}
