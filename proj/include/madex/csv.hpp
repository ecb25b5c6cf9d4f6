#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace madex {

/// Header plus string cells. Quoting is not supported: fields may not contain
/// commas, quotes or newlines.
struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(const std::string& name) const;
};

Table read_csv(const std::filesystem::path& path);
void write_csv(const std::filesystem::path& path, const Table& table);

/// Shortest decimal that round-trips the double.
std::string format_double(double value);

double parse_double(const std::string& cell);

}  // namespace madex
