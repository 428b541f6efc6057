#include "cohort/dates.hpp"

#include <cstdio>

#include "cohort/error.hpp"

namespace cohort {

// Howard Hinnant's civil-date algorithms: exact integer conversions between
// (y, m, d) and days since 1970-01-01.
int32_t days_from_civil(int y, int m, int d) {
    y -= m <= 2;
    const int era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153u * static_cast<unsigned>(m + (m > 2 ? -3 : 9)) + 2u) / 5u +
                         static_cast<unsigned>(d) - 1u;
    const unsigned doe = yoe * 365u + yoe / 4u - yoe / 100u + doy;
    return era * 146097 + static_cast<int32_t>(doe) - 719468;
}

void civil_from_days(int32_t z, int& y, int& m, int& d) {
    z += 719468;
    const int era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const int yy = static_cast<int>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    d = static_cast<int>(doy - (153 * mp + 2) / 5 + 1);
    m = static_cast<int>(mp < 10 ? mp + 3 : mp - 9);
    y = yy + (m <= 2);
}

Date make_date(int year, int month, int day) {
    if (month < 1 || month > 12 || day < 1 || day > 31)
        fail("ParseError", "invalid calendar date " + std::to_string(year) + "-" +
                               std::to_string(month) + "-" + std::to_string(day));
    Date out{days_from_civil(year, month, day)};
    int y2, m2, d2;
    civil_from_days(out.days, y2, m2, d2);
    if (y2 != year || m2 != month || d2 != day)
        fail("ParseError", "nonexistent calendar date " + std::to_string(year) + "-" +
                               std::to_string(month) + "-" + std::to_string(day));
    return out;
}

namespace {

bool all_digits(const std::string& s, size_t from, size_t to) {
    if (to > s.size()) return false;
    for (size_t i = from; i < to; ++i)
        if (s[i] < '0' || s[i] > '9') return false;
    return true;
}

int num(const std::string& s, size_t from, size_t to) {
    int v = 0;
    for (size_t i = from; i < to; ++i) v = v * 10 + (s[i] - '0');
    return v;
}

} // namespace

Date parse_date(const std::string& s) {
    if (s.size() != 10 || s[4] != '-' || s[7] != '-' || !all_digits(s, 0, 4) ||
        !all_digits(s, 5, 7) || !all_digits(s, 8, 10))
        fail("ParseError", "expected YYYY-MM-DD, got '" + s + "'");
    return make_date(num(s, 0, 4), num(s, 5, 7), num(s, 8, 10));
}

Timestamp parse_timestamp(const std::string& s) {
    std::string body = s;
    if (!body.empty() && body.back() == 'Z') body.pop_back();
    if (body.size() == 10)
        return Timestamp{static_cast<int64_t>(parse_date(body).days) * 86400};
    if (body.size() != 19 || (body[10] != 'T' && body[10] != ' ') || body[13] != ':' ||
        body[16] != ':' || !all_digits(body, 11, 13) || !all_digits(body, 14, 16) ||
        !all_digits(body, 17, 19))
        fail("ParseError", "expected ISO-8601 timestamp, got '" + s + "'");
    Date d = parse_date(body.substr(0, 10));
    int hh = num(body, 11, 13), mm = num(body, 14, 16), ss = num(body, 17, 19);
    if (hh > 23 || mm > 59 || ss > 59)
        fail("ParseError", "invalid time of day in '" + s + "'");
    return Timestamp{static_cast<int64_t>(d.days) * 86400 + hh * 3600 + mm * 60 + ss};
}

std::string format_date(Date d) {
    int y, m, dd;
    civil_from_days(d.days, y, m, dd);
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02d", y, m, dd);
    return buf;
}

std::string format_timestamp(Timestamp t) {
    Date d = t.date();
    int64_t rem = t.seconds - static_cast<int64_t>(d.days) * 86400;
    char buf[40];
    std::snprintf(buf, sizeof buf, "%sT%02d:%02d:%02dZ", format_date(d).c_str(),
                  static_cast<int>(rem / 3600), static_cast<int>(rem / 60 % 60),
                  static_cast<int>(rem % 60));
    return buf;
}

} // namespace cohort
