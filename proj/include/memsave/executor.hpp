// Copyright (c) 2026, the memsave authors
// SPDX-License-Identifier: Apache-2.0
//
// Runs a network description for real: forward under a fresh accountant,
// a random-projection loss, and backward. The executor drops its handle on
// every intermediate right after its last consumer, so what stays alive is
// the network input, the tape's saved values and the current frontier.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "memsave/memwatch.hpp"
#include "memsave/network.hpp"
#include "memsave/tape.hpp"

namespace memsave {

struct LayerValues {
  std::vector<double> weight;
  std::vector<double> bias;
  std::vector<double> running_mean;
  std::vector<double> running_var;
};

/// Numeric contents of every leaf, as doubles.
struct ParameterValues {
  std::vector<double> input;
  std::vector<LayerValues> layers;
};

/// Deterministic in the network seed. Weights are N(0, 1/fan_in); norm
/// scales 1 + 0.1 N(0, 1) and shifts 0.1 N(0, 1); running means 0.1 N(0, 1)
/// and running variances 0.5 + U[0, 1).
ParameterValues init_values(const NetworkDescription& net);

std::uint64_t dropout_seed(const NetworkDescription& net, std::size_t layer);
std::uint64_t loss_seed(const NetworkDescription& net);

/// Tensor names used in saved records and gradients: "input", the layer
/// label for a layer output, "<label>.weight" and "<label>.bias".
std::string output_name(const NetworkDescription& net, int layer);

struct SavedRecord {
  std::size_t node = 0;
  int layer = -1;  // -1 for the loss
  OpKind op = OpKind::Sum;
  Policy policy = Policy::Naive;
  std::vector<SavedRole> roles;
  std::vector<SavedKind> kinds;
  std::vector<std::size_t> bytes;
  std::vector<std::string> tensors;  // name per role; empty for compact kinds
};

struct GradientEntry {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

struct ExecuteOptions {
  bool backward = true;
  int repetitions = 1;  // timings are the median over repetitions
  const ParameterValues* values = nullptr;  // default: init_values(net)
  bool record_events = false;
};

struct RunResult {
  MemoryReport report;
  double loss = 0.0;
  bool loss_requires_grad = false;
  std::vector<GradientEntry> gradients;
  std::vector<SavedRecord> saved;
  std::vector<UnreadSave> unread;
  std::vector<AllocEvent> forward_events;
};

RunResult execute(const NetworkDescription& net, const Scenario& scenario, const ExecuteOptions& options = {});

/// Loss value only; nothing is recorded.
double forward_loss(const NetworkDescription& net, const ParameterValues& values);

}  // namespace memsave
