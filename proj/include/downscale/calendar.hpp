#pragma once

#include <chrono>
#include <string>
#include <string_view>

namespace downscale {

using Date = std::chrono::year_month_day;

/// "YYYY-MM-DD"; throws std::invalid_argument on malformed or impossible dates.
Date parse_date(std::string_view text);
std::string format_date(const Date& d);

Date add_days(const Date& d, int days);

/// 1..366.
int day_of_year(const Date& d);

/// Day index on a 365-day cycle: days after Feb 29 shift back by one in
/// leap years and Feb 29 itself maps to day 365.
int cycle_day(const Date& d);

}  // namespace downscale
