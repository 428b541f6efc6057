#pragma once

#include <compare>
#include <cstdint>
#include <string>

namespace cohort {

// Calendar date as days since 1970-01-01, proleptic Gregorian. All temporal
// arithmetic in the pipeline happens on day offsets, so a flat integer is the
// right representation; conversions below are exact over the whole range.
struct Date {
    int32_t days = 0;
    auto operator<=>(const Date&) const = default;
};

// Instant as seconds since the epoch (UTC). Uploads carry instants; analyses
// mostly care about the calendar date.
struct Timestamp {
    int64_t seconds = 0;
    auto operator<=>(const Timestamp&) const = default;
    Date date() const {
        int64_t d = seconds / 86400;
        if (seconds < 0 && seconds % 86400 != 0) --d;
        return Date{static_cast<int32_t>(d)};
    }
};

int32_t days_from_civil(int year, int month, int day);
void civil_from_days(int32_t days, int& year, int& month, int& day);

Date make_date(int year, int month, int day); // validates the calendar triple

// Accepts YYYY-MM-DD.
Date parse_date(const std::string& s);
// Accepts YYYY-MM-DD, optionally followed by "THH:MM:SS" or " HH:MM:SS",
// optionally suffixed with "Z".
Timestamp parse_timestamp(const std::string& s);

std::string format_date(Date d);               // YYYY-MM-DD
std::string format_timestamp(Timestamp t);     // YYYY-MM-DDTHH:MM:SSZ

} // namespace cohort
