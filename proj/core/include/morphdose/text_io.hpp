#pragma once

// Small text helpers shared by every line-oriented file format in the project.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace morphdose {

/// Shortest decimal string that parses back to exactly `v` ("inf", "-inf", "nan" for specials).
std::string format_real(double v);

/// Strict parse: the whole field must be a number. Accepts "inf"/"-inf".
std::optional<double> parse_real(std::string_view s);
std::optional<std::int64_t> parse_int(std::string_view s);

std::string_view trim(std::string_view s);

/// Splits one CSV line. Fields may be double-quoted; "" inside quotes is a literal quote.
std::vector<std::string> split_csv(std::string_view line);

/// Quotes a field only if it contains a comma, quote or leading/trailing space.
std::string csv_field(std::string_view s);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

/// Minutes since 1970-01-01T00:00 (proleptic Gregorian, no time zone).
using Minutes = std::int64_t;

/// Accepts YYYY-MM-DDTHH:MM, optionally followed by :SS (seconds truncated) and a 'Z'.
/// A space is accepted in place of 'T'.
std::optional<Minutes> parse_timestamp(std::string_view s);
std::string format_timestamp(Minutes t);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

}  // namespace morphdose
