#include "wmtrig/common/csv.hpp"

#include <fstream>
#include <sstream>

#include "wmtrig/common/error.hpp"

namespace wmtrig::csv {

std::string format_row(const Row& row) {
  std::string out;
  for (size_t i = 0; i < row.size(); ++i) {
    if (i) out.push_back(',');
    const std::string& f = row[i];
    if (f.find_first_of(",\"\n\r") == std::string::npos) {
      out += f;
      continue;
    }
    out.push_back('"');
    for (char c : f) {
      if (c == '"') out.push_back('"');
      out.push_back(c);
    }
    out.push_back('"');
  }
  return out;
}

Row parse_line(const std::string& line) {
  Row row;
  std::string field;
  bool quoted = false;
  for (size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
    } else if (c != '\r') {
      field.push_back(c);
    }
  }
  if (quoted) throw FormatError("csv: unterminated quoted field");
  row.push_back(std::move(field));
  return row;
}

Table read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open csv: " + path.string());
  Table t;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (first) {
      t.header = parse_line(line);
      first = false;
    } else {
      t.rows.push_back(parse_line(line));
      if (t.rows.back().size() != t.header.size())
        throw FormatError("csv: row width mismatch in " + path.string());
    }
  }
  return t;
}

void write(const std::filesystem::path& path, const Table& table) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write csv: " + path.string());
  out << format_row(table.header) << '\n';
  for (const auto& r : table.rows) out << format_row(r) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace wmtrig::csv
