// Copyright (c) 2026, the memsave authors
// SPDX-License-Identifier: Apache-2.0

#include "memsave/report.hpp"

#include <charconv>
#include <cstdio>
#include <ostream>
#include <sstream>

#include "memsave/error.hpp"

namespace memsave {

namespace {

std::string field(std::string_view s) {
  if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_fields(std::string_view line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        out.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        out.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back();
    } else {
      out.back() += c;
    }
  }
  return out;
}

template <typename T>
T number(const std::string& s, std::size_t line) {
  T value{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw Error(ErrorCode::InvalidConfig, "csv line " + std::to_string(line) + ": bad number '" + s + "'");
  }
  return value;
}

std::string milliseconds(double ms) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", ms);
  return buf;
}

}  // namespace

CsvRow csv_row(const MemoryReport& r, std::string layer) {
  return {r.network,     std::move(layer), r.depth,
          r.scenario,    r.policy,         r.tape_bytes,
          r.peak_bytes,  r.forward_seconds * 1e3, r.backward_seconds * 1e3};
}

std::string csv_line(const CsvRow& r) {
  std::ostringstream out;
  out << field(r.net) << ',' << field(r.layer) << ',' << r.depth << ',' << field(r.scenario) << ','
      << field(r.policy) << ',' << r.tape_bytes << ',' << r.peak_bytes << ',' << milliseconds(r.forward_ms) << ','
      << milliseconds(r.backward_ms);
  return out.str();
}

void write_csv(std::ostream& out, std::span<const CsvRow> rows) {
  out << kCsvHeader << '\n';
  for (const auto& r : rows) out << csv_line(r) << '\n';
}

std::vector<CsvRow> parse_csv(std::string_view text) {
  std::vector<CsvRow> rows;
  std::size_t line_no = 0;
  bool header = true;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view() : text.substr(nl + 1);
    ++line_no;
    if (header) {
      if (line != kCsvHeader) throw Error(ErrorCode::InvalidConfig, "csv header mismatch");
      header = false;
      continue;
    }
    if (line.empty()) continue;
    const auto f = split_fields(line);
    if (f.size() != 9) throw Error(ErrorCode::InvalidConfig, "csv line " + std::to_string(line_no) + ": 9 fields expected");
    rows.push_back({f[0], f[1], number<int>(f[2], line_no), f[3], f[4], number<std::size_t>(f[5], line_no),
                    number<std::size_t>(f[6], line_no), number<double>(f[7], line_no),
                    number<double>(f[8], line_no)});
  }
  if (header) throw Error(ErrorCode::InvalidConfig, "csv is empty");
  return rows;
}

LineFit fit_line(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw Error(ErrorCode::InvalidConfig, "line fit needs two or more points");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  if (sxx == 0.0) throw Error(ErrorCode::InvalidConfig, "line fit needs distinct x values");
  const double slope = sxy / sxx;
  return {slope, my - slope * mx};
}

}  // namespace memsave
