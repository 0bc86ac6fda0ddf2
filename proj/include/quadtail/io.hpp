#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace quadtail {

/// Shortest round-trip-safe text for a double: 17 significant digits.
std::string format_double(double v);

/// Comma-joined CSV row. Fields are written verbatim.
std::string csv_row(const std::vector<std::string>& fields);

/// Comma list ("1,2.5,4") or linear range "lo:hi:count" (count >= 2).
std::vector<double> parse_real_list(std::string_view text);

/// Comma list of integers or "lo:hi:count" rounded to integers.
std::vector<std::int64_t> parse_int_list(std::string_view text);

/// 64-bit FNV-1a, used as the config hash in output headers.
std::uint64_t fnv1a64(std::string_view text);

std::string hex64(std::uint64_t v);

}  // namespace quadtail
