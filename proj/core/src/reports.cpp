#include "foresee/reports.hpp"

#include <cstdio>

#include "foresee/dataset.hpp"
#include "foresee/error.hpp"

namespace fse {

std::string format_metric(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

namespace {

std::string escape_cell(const std::string& cell) {
    if (cell.find_first_of(",\"\n") == std::string::npos) return cell;
    std::string out = "\"";
    for (const char c : cell) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out += "\"";
    return out;
}

void append_row(std::string& out, const std::vector<std::string>& row) {
    for (std::size_t i = 0; i < row.size(); ++i) {
        if (i > 0) out.push_back(',');
        out += escape_cell(row[i]);
    }
    out.push_back('\n');
}

} // namespace

void write_csv(const std::string& path, const CsvTable& table) {
    if (table.header.empty()) throw ContractError("write_csv: empty header");
    for (const auto& row : table.rows)
        if (row.size() != table.header.size())
            throw ContractError("write_csv: row width " + std::to_string(row.size()) +
                                " does not match header width " + std::to_string(table.header.size()));
    std::string out;
    append_row(out, table.header);
    for (const auto& row : table.rows) append_row(out, row);
    atomic_write_file(path, out);
}

} // namespace fse
