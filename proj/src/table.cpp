#include "psycode/table.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace psycode {

namespace {

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

// Display width in code points; good enough for the ASCII-heavy reports.
std::size_t display_width(const std::string& s) {
    std::size_t n = 0;
    for (unsigned char c : s) {
        if ((c & 0xC0) != 0x80) ++n;
    }
    return n;
}

}  // namespace

std::string Table::to_csv() const {
    std::string out;
    auto emit = [&](const std::vector<std::string>& row) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i > 0) out.push_back(',');
            out += csv_field(row[i]);
        }
        out.push_back('\n');
    };
    emit(header);
    for (const auto& r : rows) emit(r);
    return out;
}

std::string Table::to_markdown() const {
    std::vector<std::size_t> width(header.size(), 3);
    for (std::size_t i = 0; i < header.size(); ++i) width[i] = std::max(width[i], display_width(header[i]));
    for (const auto& r : rows) {
        for (std::size_t i = 0; i < r.size() && i < width.size(); ++i) {
            width[i] = std::max(width[i], display_width(r[i]));
        }
    }
    std::string out;
    auto emit = [&](const std::vector<std::string>& row) {
        out += "|";
        for (std::size_t i = 0; i < width.size(); ++i) {
            const std::string cell = i < row.size() ? row[i] : "";
            out += " " + cell + std::string(width[i] - display_width(cell), ' ') + " |";
        }
        out += "\n";
    };
    emit(header);
    out += "|";
    for (auto w : width) out += std::string(w + 2, '-') + "|";
    out += "\n";
    for (const auto& r : rows) emit(r);
    return out;
}

std::string fmt_fixed(double v, int digits) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    std::string s = buf;
    // Avoid "-0.00".
    if (s.front() == '-' && s.find_first_not_of("-0.") == std::string::npos) s.erase(0, 1);
    return s;
}

}  // namespace psycode
