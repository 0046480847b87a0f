// Copyright (c) 2026, the memsave authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "memsave/builtins.hpp"
#include "memsave/executor.hpp"
#include "memsave/memwatch.hpp"

namespace memsave {
namespace {

TEST(Accountant, PeakSurvivesFree) {
  Accountant acc;
  acc.alloc(1, 100, MemoryCategory::Activation);
  acc.free(1);
  acc.alloc(2, 60, MemoryCategory::Activation);
  EXPECT_EQ(acc.peak(), 100u);
  EXPECT_EQ(acc.live_bytes(), 60u);
}

TEST(Accountant, ResetStartsFromCurrentLiveSet) {
  Accountant acc;
  acc.alloc(1, 100, MemoryCategory::Activation);
  acc.free(1);
  acc.reset_peak();
  EXPECT_EQ(acc.peak(), 0u);
  acc.alloc(2, 60, MemoryCategory::Activation);
  EXPECT_EQ(acc.peak(), 60u);
}

TEST(Accountant, ParametersAreTrackedButNotMeasured) {
  Accountant acc;
  acc.alloc(1, 1000, MemoryCategory::Parameter);
  acc.alloc(2, 10, MemoryCategory::TapeSaved);
  EXPECT_EQ(acc.live_bytes(), 1010u);
  EXPECT_EQ(acc.peak(), 10u);
  EXPECT_EQ(acc.peak_including_parameters(), 1010u);
  EXPECT_EQ(acc.peak_breakdown()[static_cast<std::size_t>(MemoryCategory::Parameter)], 1000u);
}

TEST(Accountant, DoubleAllocAndUnknownFreeAreBugs) {
  Accountant acc;
  acc.alloc(1, 8, MemoryCategory::Activation);
  EXPECT_THROW(acc.alloc(1, 8, MemoryCategory::Activation), std::logic_error);
  EXPECT_THROW(acc.free(2), std::logic_error);
}

TEST(Accountant, EventsRecordAllocationOrder) {
  Accountant acc;
  acc.alloc(5, 8, MemoryCategory::Gradient);
  acc.free(5);
  ASSERT_EQ(acc.events().size(), 2u);
  EXPECT_EQ(acc.events()[0].kind, AllocKind::Alloc);
  EXPECT_EQ(acc.events()[1].kind, AllocKind::Free);
  EXPECT_EQ(acc.events()[1].bytes, 8u);
  acc.clear_events();
  acc.set_record_events(false);
  acc.alloc(6, 8, MemoryCategory::Gradient);
  EXPECT_TRUE(acc.events().empty());
}

TEST(TrackedBytes, RaiiAndMove) {
  Accountant acc;
  ScopedAccountant scope(acc);
  {
    TrackedBytes a(16, MemoryCategory::TapeSaved);
    EXPECT_EQ(acc.live_bytes(), 16u);
    TrackedBytes b(std::move(a));
    EXPECT_EQ(acc.live_bytes(), 16u);
    TrackedBytes c(4, MemoryCategory::TapeSaved);
    c = std::move(b);
    EXPECT_EQ(acc.live_bytes(), 16u);
  }
  EXPECT_EQ(acc.live_bytes(), 0u);
}

TEST(TrackedBytes, OutlivingTheAccountantIsHarmless) {
  TrackedBytes survivor;
  {
    Accountant acc;
    ScopedAccountant scope(acc);
    survivor = TrackedBytes(32, MemoryCategory::TapeSaved);
  }
  SUCCEED();
}

TEST(ScopedAccountant, RestoresPrevious) {
  Accountant outer, inner;
  ScopedAccountant a(outer);
  {
    ScopedAccountant b(inner);
    TrackedBytes t(8, MemoryCategory::Activation);
    EXPECT_EQ(inner.live_bytes(), 8u);
    EXPECT_EQ(outer.live_bytes(), 0u);
  }
  TrackedBytes t(4, MemoryCategory::Activation);
  EXPECT_EQ(outer.live_bytes(), 4u);
}

TEST(ReplayPeak, MatchesLedger) {
  std::vector<AllocEvent> trace = {
      {1, 100, MemoryCategory::Activation, AllocKind::Alloc},
      {2, 50, MemoryCategory::Parameter, AllocKind::Alloc},
      {1, 100, MemoryCategory::Activation, AllocKind::Free},
      {3, 60, MemoryCategory::Activation, AllocKind::Alloc},
  };
  EXPECT_EQ(replay_peak(trace), 100u);
  trace.push_back({9, 500, MemoryCategory::Activation, AllocKind::Free});
  EXPECT_THROW((void)replay_peak(trace), std::logic_error);
}

// Recorded trace of a three-layer chain with nothing differentiable: the
// replayed maximum is input + two activations.
TEST(ReplayPeak, NonDifferentiableChainTrace) {
  const auto net = builtins::deep_cnn(3);
  const std::size_t S = 131072;
  ExecuteOptions o;
  o.backward = false;
  o.record_events = true;
  const RunResult run = execute(net, Scenario::none(), o);
  EXPECT_EQ(replay_peak(run.forward_events), 3 * S);
  EXPECT_EQ(run.report.peak_bytes, 3 * S);
  EXPECT_EQ(run.report.tape_bytes, 0u);
}

TEST(ReplayPeak, SingleLayerHoldsTwoTensors) {
  const RunResult run = execute(builtins::deep_cnn(1), Scenario::none(), {.backward = false});
  // The 4-byte loss scalar is allocated while input and output are live.
  EXPECT_EQ(run.report.peak_bytes, 2 * 131072u + 4);
}

}  // namespace
}  // namespace memsave
