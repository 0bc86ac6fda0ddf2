#include "quadtail/io.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace quadtail {

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t')) --e;
  return std::string(s.substr(b, e - b));
}

double to_real(std::string_view token) {
  const std::string t = trim(token);
  if (t.empty()) throw std::invalid_argument("empty number in list");
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(t, &used);
  } catch (const std::exception&) {
    throw std::invalid_argument("not a number: " + t);
  }
  if (used != t.size()) throw std::invalid_argument("not a number: " + t);
  return v;
}

std::vector<std::string_view> split(std::string_view text, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = text.find(sep, start);
    out.push_back(text.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string csv_row(const std::vector<std::string>& fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out += ',';
    out += fields[i];
  }
  return out;
}

std::vector<double> parse_real_list(std::string_view text) {
  if (trim(text).empty()) throw std::invalid_argument("empty list");
  if (text.find(':') != std::string_view::npos) {
    const auto parts = split(text, ':');
    if (parts.size() != 3) throw std::invalid_argument("range must be lo:hi:count");
    const double lo = to_real(parts[0]);
    const double hi = to_real(parts[1]);
    const double count = to_real(parts[2]);
    if (count < 2 || count != std::floor(count)) throw std::invalid_argument("range count must be an integer >= 2");
    std::vector<double> out;
    const int m = static_cast<int>(count);
    for (int i = 0; i < m; ++i) out.push_back(i == m - 1 ? hi : lo + (hi - lo) * i / (m - 1));
    return out;
  }
  std::vector<double> out;
  for (auto tok : split(text, ',')) out.push_back(to_real(tok));
  return out;
}

std::vector<std::int64_t> parse_int_list(std::string_view text) {
  std::vector<std::int64_t> out;
  for (double v : parse_real_list(text)) {
    const double r = std::round(v);
    if (text.find(':') == std::string_view::npos && r != v) throw std::invalid_argument("not an integer: " + format_double(v));
    out.push_back(static_cast<std::int64_t>(r));
  }
  return out;
}

std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace quadtail
