// Copyright (c) 2026, the memsave authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <sstream>

#include "memsave/error.hpp"
#include "memsave/report.hpp"

namespace memsave {
namespace {

TEST(Csv, LineFormat) {
  const CsvRow row{"deep_cnn", "conv2d", 4, "only:2", "memsave", 133392, 524288, 1.23456, 0.0};
  EXPECT_EQ(csv_line(row), "deep_cnn,conv2d,4,only:2,memsave,133392,524288,1.235,0.000");
}

TEST(Csv, FieldsWithCommasAreQuoted) {
  const CsvRow row{"a,b", "say \"hi\"", 1, "all", "naive", 1, 2, 0.0, 0.0};
  EXPECT_EQ(csv_line(row), "\"a,b\",\"say \"\"hi\"\"\",1,all,naive,1,2,0.000,0.000");
}

TEST(Csv, WriteParseRoundTrip) {
  const std::vector<CsvRow> rows = {
      {"linear", "linear", 1, "all", "naive", 100, 200, 0.5, 0.25},
      {"x,y", "conv2d", 12, "from:4", "memsave", 0, 393216, 12.0, 0.0},
  };
  std::ostringstream out;
  write_csv(out, rows);
  const std::string text = out.str();
  EXPECT_EQ(text.substr(0, kCsvHeader.size() + 1), std::string(kCsvHeader) + "\n");
  const auto back = parse_csv(text);
  ASSERT_EQ(back.size(), rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(back[i].net, rows[i].net);
    EXPECT_EQ(back[i].layer, rows[i].layer);
    EXPECT_EQ(back[i].depth, rows[i].depth);
    EXPECT_EQ(back[i].scenario, rows[i].scenario);
    EXPECT_EQ(back[i].policy, rows[i].policy);
    EXPECT_EQ(back[i].tape_bytes, rows[i].tape_bytes);
    EXPECT_EQ(back[i].peak_bytes, rows[i].peak_bytes);
    EXPECT_DOUBLE_EQ(back[i].forward_ms, rows[i].forward_ms);
    EXPECT_DOUBLE_EQ(back[i].backward_ms, rows[i].backward_ms);
  }
}

TEST(Csv, MalformedInputIsRejected) {
  const std::string header(kCsvHeader);
  for (const std::string& text : {std::string(), std::string("net,layer\n"), header + "\na,b,c\n",
                                  header + "\nn,l,x,all,naive,1,2,0,0\n", header + "\nn,l,1,all,naive,-1,2,0,0\n"}) {
    try {
      (void)parse_csv(text);
      ADD_FAILURE() << text;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::InvalidConfig);
    }
  }
  EXPECT_TRUE(parse_csv(header + "\n").empty());
}

TEST(Csv, RowFromReport) {
  MemoryReport r;
  r.network = "mlp";
  r.depth = 3;
  r.scenario = "input";
  r.policy = "naive";
  r.tape_bytes = 7;
  r.peak_bytes = 9;
  r.forward_seconds = 0.002;
  const auto row = csv_row(r, "all");
  EXPECT_EQ(csv_line(row), "mlp,all,3,input,naive,7,9,2.000,0.000");
}

TEST(LineFitting, ExactLine) {
  const std::vector<double> x = {1, 2, 3, 4}, y = {5, 7, 9, 11};
  const auto f = fit_line(x, y);
  EXPECT_DOUBLE_EQ(f.slope, 2.0);
  EXPECT_DOUBLE_EQ(f.intercept, 3.0);
}

TEST(LineFitting, LeastSquares) {
  // y = x + noise (+1, -1, -1, +1): symmetric residuals leave the slope at 1.
  const std::vector<double> x = {0, 1, 2, 3}, y = {1, 0, 1, 4};
  const auto f = fit_line(x, y);
  EXPECT_NEAR(f.slope, 1.0, 1e-12);
  EXPECT_NEAR(f.intercept, 0.0, 1e-12);
}

TEST(LineFitting, Degenerate) {
  const std::vector<double> one = {1}, two = {2, 2};
  EXPECT_THROW((void)fit_line(one, one), Error);
  EXPECT_THROW((void)fit_line(two, two), Error);
}

}  // namespace
}  // namespace memsave
