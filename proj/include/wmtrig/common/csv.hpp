#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace wmtrig::csv {

using Row = std::vector<std::string>;

// RFC 4180 quoting: fields containing a comma, quote or newline are quoted.
std::string format_row(const Row& row);
Row parse_line(const std::string& line);

struct Table {
  Row header;
  std::vector<Row> rows;
};

Table read(const std::filesystem::path& path);
void write(const std::filesystem::path& path, const Table& table);

}  // namespace wmtrig::csv
