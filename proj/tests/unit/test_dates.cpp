#include <catch2/catch_amalgamated.hpp>

#include "crp/dates.hpp"

using namespace crp;

TEST_CASE("civil round trip over four centuries", "[dates]") {
  // Exhaustive day-by-day scan is cheap and catches any Gregorian edge case.
  Date d = make_date(1900, 1, 1);
  Date end = make_date(2100, 12, 31);
  int prev_dow = day_of_week(d);
  for (Date x = d + 1; x <= end; x = x + 1) {
    CHECK(parse_date(to_iso(x)) == x);
    int dow = day_of_week(x);
    CHECK(dow == (prev_dow + 1) % 7);
    prev_dow = dow;
  }
}

TEST_CASE("known anchor dates", "[dates]") {
  CHECK(make_date(1970, 1, 1).days == 0);
  CHECK(day_of_week(make_date(1970, 1, 1)) == 4);   // Thursday
  CHECK(day_of_week(make_date(2021, 6, 20)) == 0);  // Sunday
  CHECK(day_of_week(make_date(2022, 2, 20)) == 0);  // Sunday
  CHECK(to_iso(make_date(2021, 6, 20)) == "2021-06-20");
  CHECK(make_date(2020, 2, 29).days == parse_date("2020-02-29").days);
}

TEST_CASE("parse rejects malformed dates", "[dates]") {
  for (const char* bad : {"2021-6-20", "2021/06/20", "2021-13-01", "2021-02-30", "21-06-20",
                          "2021-06-20x", "", "2021-00-10", "2021-06-00"}) {
    CHECK_THROWS_AS(parse_date(bad), Error);
  }
}

TEST_CASE("date arithmetic", "[dates]") {
  Date a = make_date(2021, 12, 28);
  CHECK(to_iso(a + 4) == "2022-01-01");
  CHECK(to_iso(a - 28) == "2021-11-30");
  CHECK((make_date(2022, 1, 1) - make_date(2021, 1, 1)) == 365);
  CHECK((make_date(2021, 1, 1) - make_date(2020, 1, 1)) == 366);
}

TEST_CASE("week grid indexes Sunday-anchored weeks", "[dates]") {
  WeekGrid grid{make_date(2021, 6, 20)};  // a Sunday
  CHECK(grid.index_of(make_date(2021, 6, 20)) == 0);
  CHECK(grid.index_of(make_date(2021, 6, 26)) == 0);  // Saturday same week
  CHECK(grid.index_of(make_date(2021, 6, 27)) == 1);
  CHECK(grid.index_of(make_date(2021, 6, 19)) == -1);  // day before anchor
  CHECK(grid.index_of(make_date(2021, 6, 13)) == -1);
  CHECK(grid.index_of(make_date(2021, 6, 12)) == -2);
  CHECK(grid.start_of(1) == make_date(2021, 6, 27));
  CHECK(grid.end_of(1) == make_date(2021, 7, 3));
  CHECK(grid.index_of(make_date(2022, 2, 20)) == 35);

  // every day maps into the week whose [start,end] contains it
  for (int k = -3; k <= 40; ++k) {
    for (int d = 0; d < 7; ++d) {
      Date day = grid.start_of(k) + d;
      CHECK(grid.index_of(day) == k);
      CHECK(grid.start_of(k) <= day);
      CHECK(day <= grid.end_of(k));
    }
  }
}

TEST_CASE("ranges contain and overlap", "[dates]") {
  DateRange r{make_date(2021, 7, 18), make_date(2021, 9, 12)};
  CHECK(r.contains(r.first));
  CHECK(r.contains(r.last));
  CHECK_FALSE(r.contains(r.first - 1));
  CHECK_FALSE(r.contains(r.last + 1));
  CHECK(r.n_days() == 57);

  DateRange s{make_date(2021, 9, 12), make_date(2021, 9, 30)};
  DateRange t{make_date(2021, 9, 13), make_date(2021, 9, 30)};
  CHECK(r.overlaps(s));
  CHECK(s.overlaps(r));
  CHECK_FALSE(r.overlaps(t));
}
