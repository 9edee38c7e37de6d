#include "downscale/calendar.hpp"

#include <charconv>
#include <cstdio>
#include <stdexcept>

namespace downscale {

using namespace std::chrono;

namespace {

int parse_field(std::string_view text, std::size_t pos, std::size_t len) {
  int v = 0;
  auto [end, ec] = std::from_chars(text.data() + pos, text.data() + pos + len, v);
  if (ec != std::errc() || end != text.data() + pos + len) throw std::invalid_argument("malformed date: " + std::string(text));
  return v;
}

}  // namespace

Date parse_date(std::string_view text) {
  if (text.size() != 10 || text[4] != '-' || text[7] != '-') throw std::invalid_argument("malformed date: " + std::string(text));
  const Date d{year{parse_field(text, 0, 4)}, month{static_cast<unsigned>(parse_field(text, 5, 2))},
               day{static_cast<unsigned>(parse_field(text, 8, 2))}};
  if (!d.ok()) throw std::invalid_argument("invalid date: " + std::string(text));
  return d;
}

std::string format_date(const Date& d) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(d.year()), static_cast<unsigned>(d.month()),
                static_cast<unsigned>(d.day()));
  return buf;
}

Date add_days(const Date& d, int days) { return Date{sys_days{d} + std::chrono::days{days}}; }

int day_of_year(const Date& d) {
  return static_cast<int>((sys_days{d} - sys_days{d.year() / January / 1}).count()) + 1;
}

int cycle_day(const Date& d) {
  if (!d.year().is_leap()) return day_of_year(d);
  if (d.month() == February && d.day() == std::chrono::day{29}) return 365;
  const int doy = day_of_year(d);
  return doy > 60 ? doy - 1 : doy;
}

}  // namespace downscale
