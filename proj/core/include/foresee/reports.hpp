#pragma once

#include <string>
#include <vector>

namespace fse {

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

/// Shortest round-trip decimal form; byte-stable for identical doubles, so
/// identical runs produce identical report files.
std::string format_metric(double v);

/// Writes header + rows atomically. Every row must match the header width;
/// cells containing commas, quotes or newlines are quoted.
void write_csv(const std::string& path, const CsvTable& table);

} // namespace fse
