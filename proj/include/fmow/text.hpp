#pragma once

#include <charconv>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace fmow {

/// Shortest decimal form that parses back to the same double.
std::string format_double(double v);

/// Strict full-string parse; throws ParseError naming `what`.
double parse_double(std::string_view text, std::string_view what);
long long parse_int(std::string_view text, std::string_view what);

/// Split on commas. No quoting: the formats written here never need it.
std::vector<std::string_view> split_csv(std::string_view line);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

}  // namespace fmow
