#pragma once

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

#include "crp/errors.hpp"

namespace crp {

// Calendar date as whole days since 1970-01-01. No time-of-day anywhere in
// the pipeline; all arithmetic is in whole days.
struct Date {
  std::int32_t days = 0;

  friend auto operator<=>(const Date&, const Date&) = default;
  Date operator+(int n) const { return Date{days + n}; }
  Date operator-(int n) const { return Date{days - n}; }
  int operator-(Date other) const { return days - other.days; }
  Date& operator++() { ++days; return *this; }
};

namespace detail {

// Howard Hinnant's civil-date algorithms.
inline std::int32_t days_from_civil(int y, int m, int d) {
  y -= m <= 2;
  const int era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153u * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int32_t>(doe) - 719468;
}

inline void civil_from_days(std::int32_t z, int& y, int& m, int& d) {
  z += 719468;
  const std::int32_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const int yr = static_cast<int>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = static_cast<int>(doy - (153 * mp + 2) / 5 + 1);
  m = static_cast<int>(mp + (mp < 10 ? 3 : -9));
  y = yr + (m <= 2);
}

}  // namespace detail

inline Date make_date(int y, int m, int d) { return Date{detail::days_from_civil(y, m, d)}; }

// Strict ISO-8601 calendar date, YYYY-MM-DD.
inline Date parse_date(std::string_view s) {
  auto fail = [&] { throw Error(ErrorKind::SchemaViolation, "invalid date '" + std::string(s) + "' (expected YYYY-MM-DD)"); };
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') fail();
  int y = 0, m = 0, d = 0;
  auto num = [&](std::size_t pos, std::size_t len, int& out) {
    auto [p, ec] = std::from_chars(s.data() + pos, s.data() + pos + len, out);
    if (ec != std::errc() || p != s.data() + pos + len) fail();
  };
  num(0, 4, y);
  num(5, 2, m);
  num(8, 2, d);
  if (m < 1 || m > 12 || d < 1 || d > 31) fail();
  Date date = make_date(y, m, d);
  int y2, m2, d2;
  detail::civil_from_days(date.days, y2, m2, d2);
  if (y2 != y || m2 != m || d2 != d) fail();
  return date;
}

inline std::string to_iso(Date date) {
  int y, m, d;
  detail::civil_from_days(date.days, y, m, d);
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02d", y, m, d);
  return buf;
}

// 0 = Sunday .. 6 = Saturday.
inline int day_of_week(Date date) {
  return static_cast<int>(((date.days % 7) + 11) % 7);
}

inline std::int32_t floor_div(std::int32_t a, std::int32_t b) {
  std::int32_t q = a / b, r = a % b;
  return (r != 0 && (r < 0) != (b < 0)) ? q - 1 : q;
}

// Consecutive 7-day blocks anchored at a start date (week 0 begins on the
// anchor regardless of weekday).
struct WeekGrid {
  Date anchor;

  int index_of(Date d) const { return floor_div(d.days - anchor.days, 7); }
  Date start_of(int week) const { return Date{anchor.days + 7 * week}; }
  Date end_of(int week) const { return Date{anchor.days + 7 * week + 6}; }
};

struct DateRange {
  Date first;
  Date last;  // inclusive

  bool contains(Date d) const { return first <= d && d <= last; }
  bool overlaps(Date lo, Date hi) const { return !(hi < first || last < lo); }
  bool overlaps(const DateRange& other) const { return overlaps(other.first, other.last); }
  int n_days() const { return last - first + 1; }
};

}  // namespace crp
