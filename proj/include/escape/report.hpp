#pragma once

#include <cstdio>
#include <ostream>
#include <string>
#include <string_view>
#include <type_traits>

namespace escape {

// Minimal CSV emitter with fixed number formatting so identical inputs give identical bytes.
class CsvWriter {
 public:
  explicit CsvWriter(std::ostream& out) : out_(out) {}

  template <typename... Cells>
  void row(const Cells&... cells) {
    bool first = true;
    ((emit(cells, first), first = false), ...);
    out_ << '\n';
  }

  static std::string format(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v == 0.0 ? 0.0 : v);
    return buf;
  }

  static std::string quote(std::string_view s) {
    if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
    std::string q = "\"";
    for (char c : s) {
      if (c == '"') q += '"';
      q += c;
    }
    return q + '"';
  }

 private:
  template <typename T>
  void emit(const T& cell, bool first) {
    if (!first) out_ << ',';
    if constexpr (std::is_floating_point_v<T>)
      out_ << format(double(cell));
    else if constexpr (std::is_integral_v<T>)
      out_ << cell;
    else
      out_ << quote(std::string_view(cell));
  }

  std::ostream& out_;
};

}  // namespace escape
