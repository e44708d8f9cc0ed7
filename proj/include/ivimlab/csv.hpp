#pragma once

// RFC-4180 CSV: CRLF records, fields quoted when they contain a comma,
// quote or line break, '.' decimal separator.

#include <charconv>
#include <cmath>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "ivimlab/error.hpp"

namespace ivimlab::csv {

using Row = std::vector<std::string>;

/// Shortest representation that parses back to the same double; NaN as "nan".
inline std::string number(double v) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return {buf, r.ptr};
}

inline std::string quote(std::string_view field) {
    if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

inline std::string format(const std::vector<Row>& rows) {
    std::string out;
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) out += ',';
            out += quote(row[i]);
        }
        out += "\r\n";
    }
    return out;
}

/// Accepts CRLF or LF record ends. A trailing empty line is ignored.
inline std::vector<Row> parse(std::string_view text) {
    std::vector<Row> rows;
    Row row;
    std::string field;
    bool quoted = false;
    bool field_started = false;
    std::size_t i = 0;
    auto end_field = [&] {
        row.push_back(std::move(field));
        field.clear();
        field_started = false;
    };
    auto end_row = [&] {
        end_field();
        rows.push_back(std::move(row));
        row.clear();
    };
    while (i < text.size()) {
        const char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field += c;
            }
        } else if (c == '"') {
            if (!field.empty()) throw ParseError("csv: stray quote inside unquoted field", i);
            quoted = true;
            field_started = true;
        } else if (c == ',') {
            end_field();
            field_started = true;
        } else if (c == '\r' || c == '\n') {
            if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
            end_row();
        } else {
            field += c;
            field_started = true;
        }
        ++i;
    }
    if (quoted) throw ParseError("csv: unterminated quoted field", text.size());
    if (field_started || !field.empty() || !row.empty()) end_row();
    return rows;
}

inline double to_double(const std::string& s, const std::string& what) {
    if (s == "nan" || s == "NaN" || s.empty()) return std::nan("");
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) {
        throw ParseError("csv: " + what + " value '" + s + "' is not a number", 0);
    }
    return v;
}

}  // namespace ivimlab::csv
