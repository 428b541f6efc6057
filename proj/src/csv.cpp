#include "cohort/csv.hpp"

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cohort/error.hpp"

namespace cohort {

int Csv::col(const std::string& name) const {
    for (size_t i = 0; i < header.size(); ++i)
        if (header[i] == name) return static_cast<int>(i);
    return -1;
}

int Csv::require_col(const std::string& name) const {
    int c = col(name);
    if (c < 0) fail("SchemaError", path + ": missing column '" + name + "'");
    return c;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("FileError", "cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Csv parse_csv(const std::string& text, const std::string& path_label) {
    Csv out;
    out.path = path_label;
    std::vector<std::string> record;
    std::string field;
    bool quoted = false;
    bool any = false;

    auto end_field = [&] {
        record.push_back(field);
        field.clear();
        any = true;
    };
    auto end_record = [&] {
        if (!any && record.empty()) return; // skip blank line
        end_field();
        if (out.header.empty())
            out.header = std::move(record);
        else {
            if (record.size() != out.header.size())
                fail("SchemaError", path_label + ": row " + std::to_string(out.rows.size() + 1) +
                                        " has " + std::to_string(record.size()) +
                                        " fields, expected " + std::to_string(out.header.size()));
            out.rows.push_back(std::move(record));
        }
        record = {};
        any = false;
    };

    for (size_t i = 0; i < text.size(); ++i) {
        char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else
                    quoted = false;
            } else
                field += c;
        } else if (c == '"' && field.empty()) {
            quoted = true;
            any = true;
        } else if (c == ',') {
            end_field();
        } else if (c == '\n') {
            if (!field.empty() && field.back() == '\r') field.pop_back();
            end_record();
        } else {
            field += c;
        }
    }
    if (quoted) fail("SchemaError", path_label + ": unterminated quoted field");
    if (any || !field.empty()) {
        if (!field.empty() && field.back() == '\r') field.pop_back();
        end_record();
    }
    if (out.header.empty()) fail("SchemaError", path_label + ": empty file");
    return out;
}

Csv read_csv(const std::string& path) { return parse_csv(read_file(path), path); }

const std::string& RowView::raw(int col) const { return csv_->rows[row_][static_cast<size_t>(col)]; }

std::string RowView::context() const {
    // +2: header line is 1, first data row is 2 — matches editor line numbers.
    return csv_->path + ":" + std::to_string(row_ + 2);
}

void RowView::fail_field(const char* name, const std::string& why) const {
    fail("ParseError", context() + ": field '" + std::string(name) + "': " + why);
}

std::string RowView::str(int col, const char* name) const {
    const std::string& v = raw(col);
    if (v.empty()) fail_field(name, "required value missing");
    return v;
}

std::optional<std::string> RowView::opt_str(int col) const {
    const std::string& v = raw(col);
    if (v.empty()) return std::nullopt;
    return v;
}

long long RowView::i64(int col, const char* name) const {
    auto v = opt_i64(col, name);
    if (!v) fail_field(name, "required value missing");
    return *v;
}

std::optional<long long> RowView::opt_i64(int col, const char* name) const {
    const std::string& v = raw(col);
    if (v.empty()) return std::nullopt;
    long long out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size())
        fail_field(name, "not an integer: '" + v + "'");
    return out;
}

double RowView::f64(int col, const char* name) const {
    auto v = opt_f64(col, name);
    if (!v) fail_field(name, "required value missing");
    return *v;
}

std::optional<double> RowView::opt_f64(int col, const char* name) const {
    const std::string& v = raw(col);
    if (v.empty()) return std::nullopt;
    double out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size())
        fail_field(name, "not a number: '" + v + "'");
    return out;
}

bool RowView::flag(int col, const char* name) const {
    auto v = opt_flag(col, name);
    if (!v) fail_field(name, "required value missing");
    return *v;
}

std::optional<bool> RowView::opt_flag(int col, const char* name) const {
    const std::string& v = raw(col);
    if (v.empty()) return std::nullopt;
    if (v == "1" || v == "true") return true;
    if (v == "0" || v == "false") return false;
    fail_field(name, "not a boolean (want 0/1/true/false): '" + v + "'");
}

Date RowView::date(int col, const char* name) const {
    auto v = opt_date(col, name);
    if (!v) fail_field(name, "required value missing");
    return *v;
}

std::optional<Date> RowView::opt_date(int col, const char* name) const {
    const std::string& v = raw(col);
    if (v.empty()) return std::nullopt;
    try {
        return parse_date(v);
    } catch (const Error& e) {
        fail_field(name, e.message());
    }
}

Timestamp RowView::timestamp(int col, const char* name) const {
    const std::string& v = raw(col);
    if (v.empty()) fail_field(name, "required value missing");
    try {
        return parse_timestamp(v);
    } catch (const Error& e) {
        fail_field(name, e.message());
    }
}

std::string fmt_double(double v) {
    char buf[40];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    (void)ec;
    return std::string(buf, p);
}

std::string fmt_double_fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string csv_quote(const std::string& field) {
    if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += '"';
    return out;
}

CsvBuilder::CsvBuilder(std::vector<std::string> header) : ncols_(header.size()) {
    for (size_t i = 0; i < header.size(); ++i) {
        if (i) buf_ += ',';
        buf_ += csv_quote(header[i]);
    }
    buf_ += '\n';
}

CsvBuilder& CsvBuilder::cell(const std::string& v) {
    if (in_row_) buf_ += ',';
    buf_ += csv_quote(v);
    ++in_row_;
    return *this;
}

CsvBuilder& CsvBuilder::cell(double v) { return cell(fmt_double(v)); }
CsvBuilder& CsvBuilder::cell(long long v) { return cell(std::to_string(v)); }
CsvBuilder& CsvBuilder::cell(int v) { return cell(std::to_string(v)); }

CsvBuilder& CsvBuilder::endrow() {
    if (in_row_ != ncols_)
        fail("InternalError", "CSV row has " + std::to_string(in_row_) + " cells, expected " +
                                  std::to_string(ncols_));
    buf_ += '\n';
    in_row_ = 0;
    return *this;
}

void write_file_atomic(const std::string& path, const std::string& content) {
    namespace fs = std::filesystem;
    fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) fail("FileError", "cannot write " + tmp.string());
        out << content;
        if (!out.flush()) fail("FileError", "write failed for " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) fail("FileError", "rename " + tmp.string() + " -> " + path + ": " + ec.message());
}

} // namespace cohort
