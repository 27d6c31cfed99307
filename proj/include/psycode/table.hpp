#pragma once

#include <string>
#include <vector>

namespace psycode {

/// Plain string table rendered as CSV or as a column-aligned markdown table.
struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::string to_csv() const;
    std::string to_markdown() const;
};

/// Fixed-point formatting used by every report ("0.83", "-0.07").
std::string fmt_fixed(double v, int digits = 2);

}  // namespace psycode
