#pragma once

#include <charconv>
#include <fstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace krec {

// Minimal TSV reader: UTF-8 text, one record per line, fields split on tabs,
// lines starting with '#' and blank lines skipped. Keeps the 1-based line
// number so loaders can point at the offending line.
struct TsvRow {
    long line_no;
    std::vector<std::string> fields;
};

inline std::vector<TsvRow> read_tsv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file: " + path);
    std::vector<TsvRow> rows;
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        TsvRow row;
        row.line_no = line_no;
        std::size_t start = 0;
        for (;;) {
            std::size_t tab = line.find('\t', start);
            if (tab == std::string::npos) {
                row.fields.push_back(line.substr(start));
                break;
            }
            row.fields.push_back(line.substr(start, tab - start));
            start = tab + 1;
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

[[noreturn]] inline void tsv_fail(const std::string& path, long line_no, const std::string& what) {
    throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + what);
}

inline long long parse_int(const std::string& path, const TsvRow& row, const std::string& field,
                           const char* what) {
    long long v = 0;
    auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
    if (ec != std::errc{} || ptr != field.data() + field.size())
        tsv_fail(path, row.line_no, std::string("expected integer ") + what + ", got '" + field + "'");
    return v;
}

}
