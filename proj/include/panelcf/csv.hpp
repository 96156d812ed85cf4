#pragma once

#include <optional>
#include <string>
#include <vector>

namespace panelcf {

// Minimal RFC-4180-ish CSV table: header row plus string cells.
// Quoted fields with embedded commas/quotes/newlines are supported.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const;  // -1 if absent
};

CsvTable read_csv(const std::string& path);
void write_csv(const std::string& path, const CsvTable& table);

// Shortest round-trip formatting for doubles (via std::to_chars), so a value
// written to CSV/JSON parses back to the identical bits. NaN prints as empty
// when `empty_nan` is set (the missing-cell encoding).
std::string fmt_double(double v);
std::string fmt_cell(double v);  // empty string for NaN

// Locale-independent parse; empty/whitespace -> nullopt; garbage -> throw.
std::optional<double> parse_cell(const std::string& s, const std::string& context);

}  // namespace panelcf
