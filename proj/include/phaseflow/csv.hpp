#pragma once
// Small helpers shared by every CSV writer/reader in the project. Doubles are
// written in shortest round-trip form so files reproduce values exactly.

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace phaseflow::csv {

std::string format(double v);
std::string format(long long v);

double parse_double(std::string_view field);
long long parse_int(std::string_view field);

std::vector<std::string> split(std::string_view line, char sep = ',');

std::string join(const std::vector<std::string>& fields, char sep = ',');

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Index of a named column; throws ParameterError when absent.
  std::size_t column(const std::string& name) const;
};

/// Reads a header + rows CSV. Lines starting with '#' are skipped. Every row
/// must have as many fields as the header.
Table read(const std::filesystem::path& path);
void write(const std::filesystem::path& path, const Table& table);

/// Atomic-ish write: writes to a temporary sibling and renames over the target.
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace phaseflow::csv
