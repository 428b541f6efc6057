#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cohort/dates.hpp"

namespace cohort {

// Minimal RFC-4180-ish CSV: quoted fields with "" escapes, CRLF tolerated.
struct Csv {
    std::string path;
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    int col(const std::string& name) const; // -1 when absent
    int require_col(const std::string& name) const; // SchemaError when absent
};

Csv read_csv(const std::string& path);
Csv parse_csv(const std::string& text, const std::string& path_label);

// Typed accessors with file:row:field error context. Empty fields read as
// absent through the opt_* variants and as errors through the required ones.
class RowView {
public:
    RowView(const Csv& csv, size_t row) : csv_(&csv), row_(row) {}

    std::string str(int col, const char* name) const;
    std::optional<std::string> opt_str(int col) const;
    long long i64(int col, const char* name) const;
    std::optional<long long> opt_i64(int col, const char* name) const;
    double f64(int col, const char* name) const;
    std::optional<double> opt_f64(int col, const char* name) const;
    bool flag(int col, const char* name) const; // 0/1/true/false
    std::optional<bool> opt_flag(int col, const char* name) const;
    Date date(int col, const char* name) const;
    std::optional<Date> opt_date(int col, const char* name) const;
    Timestamp timestamp(int col, const char* name) const;

    [[noreturn]] void fail_field(const char* name, const std::string& why) const;
    std::string context() const; // "path:row"

private:
    const std::string& raw(int col) const;
    const Csv* csv_;
    size_t row_;
};

// Deterministic shortest round-trip formatting (std::to_chars).
std::string fmt_double(double v);
std::string fmt_double_fixed(double v, int digits);

// Quote a field if it contains comma/quote/newline.
std::string csv_quote(const std::string& field);

// Assemble a CSV document in memory; written atomically by write_file_atomic.
class CsvBuilder {
public:
    explicit CsvBuilder(std::vector<std::string> header);
    CsvBuilder& cell(const std::string& v);
    CsvBuilder& cell(double v);
    CsvBuilder& cell(long long v);
    CsvBuilder& cell(int v);
    CsvBuilder& endrow();
    const std::string& str() const { return buf_; }

private:
    std::string buf_;
    size_t ncols_;
    size_t in_row_ = 0;
};

// Atomic file write: temp file in the same directory, then rename.
void write_file_atomic(const std::string& path, const std::string& content);
std::string read_file(const std::string& path);

} // namespace cohort
