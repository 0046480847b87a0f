// Copyright (c) 2026, the memsave authors
// SPDX-License-Identifier: Apache-2.0
//
// CSV rows for sweeps and scenario runs, and a least-squares line fit for
// checking curve shapes.

#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "memsave/memwatch.hpp"

namespace memsave {

inline constexpr std::string_view kCsvHeader =
    "net,layer,depth,scenario,policy,tape_bytes,peak_bytes,forward_ms,backward_ms";

struct CsvRow {
  std::string net;
  std::string layer;
  int depth = 0;
  std::string scenario;
  std::string policy;
  std::size_t tape_bytes = 0;
  std::size_t peak_bytes = 0;
  double forward_ms = 0.0;
  double backward_ms = 0.0;
};

CsvRow csv_row(const MemoryReport& report, std::string layer);
std::string csv_line(const CsvRow& row);
/// Header plus one LF-terminated line per row.
void write_csv(std::ostream& out, std::span<const CsvRow> rows);
/// Inverse of write_csv; throws InvalidConfig on a malformed header or row.
std::vector<CsvRow> parse_csv(std::string_view text);

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
};

LineFit fit_line(std::span<const double> x, std::span<const double> y);

}  // namespace memsave
