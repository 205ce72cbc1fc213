#pragma once

#include "nfmu/types.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace nfmu::csv {

inline std::vector<std::string> split(const std::string& line, char sep = ',') {
    std::vector<std::string> out;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, sep)) {
        // trim
        const auto b = cell.find_first_not_of(" \t\r");
        const auto e = cell.find_last_not_of(" \t\r");
        out.push_back(b == std::string::npos ? std::string{} : cell.substr(b, e - b + 1));
    }
    if (!line.empty() && line.back() == sep) {
        out.emplace_back();
    }
    return out;
}

inline Real parse_real(const std::string& cell, const std::string& path, std::size_t line_no) {
    try {
        std::size_t pos = 0;
        const Real v = std::stod(cell, &pos);
        while (pos < cell.size() && (cell[pos] == ' ' || cell[pos] == '\t' || cell[pos] == '\r')) {
            ++pos;
        }
        if (pos != cell.size()) {
            throw std::invalid_argument("trailing characters");
        }
        return v;
    } catch (const std::exception&) {
        throw std::runtime_error(path + ":" + std::to_string(line_no) + ": cannot parse number '" +
                                 cell + "'");
    }
}

struct Table {
    std::vector<std::string> header;
    std::vector<Vec> rows;
    std::vector<std::string> comments;  // leading lines starting with '#'
};

/// Reads a comma-separated table with one header line; '#' lines before the
/// header are collected as comments.
inline Table read_table(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open file: " + path);
    }
    Table tab;
    std::string line;
    std::size_t line_no = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        if (line[0] == '#') {
            tab.comments.push_back(line);
            continue;
        }
        if (!header_seen) {
            tab.header = split(line);
            header_seen = true;
            continue;
        }
        const auto cells = split(line);
        if (cells.size() != tab.header.size()) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": expected " +
                                     std::to_string(tab.header.size()) + " columns, got " +
                                     std::to_string(cells.size()));
        }
        Vec row(cells.size());
        for (std::size_t i = 0; i < cells.size(); ++i) {
            row[i] = parse_real(cells[i], path, line_no);
        }
        tab.rows.push_back(std::move(row));
    }
    if (!header_seen) {
        throw std::runtime_error(path + ":1: missing header line");
    }
    return tab;
}

/// 17 significant digits: lossless round trip for double.
inline std::string format_real(Real v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace nfmu::csv
