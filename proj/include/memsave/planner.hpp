// Copyright (c) 2026, the memsave authors
// SPDX-License-Identifier: Apache-2.0
//
// Analytic storage plans. From shapes, flags and the storage rules alone,
// predicts what each recorded node saves, the deduplicated tape size and the
// forward peak, by replaying the executor's allocation order symbolically.

#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "memsave/network.hpp"
#include "memsave/tape.hpp"

namespace memsave {

struct PlannedSave {
  SavedRole role = SavedRole::Input;
  SavedKind kind = SavedKind::FullTensor;
  std::size_t bytes = 0;
  std::string tensor;  // empty for compact kinds
  bool parameter = false;
};

struct PlannedTensor {
  std::string name;
  Shape shape;
  std::size_t bytes = 0;
  bool requires_grad = false;
  bool parameter = false;
  bool saved = false;
};

struct PlannedNode {
  int layer = -1;  // -1 for the loss
  std::string label;
  OpKind op = OpKind::Sum;
  Policy policy = Policy::Naive;
  std::vector<std::string> inputs;  // data inputs then parameters
  std::string output;
  bool recorded = false;  // output requires grad
  std::vector<PlannedSave> saves;
};

struct StoragePlan {
  std::string network;
  std::string scenario;
  std::string policy;
  std::vector<PlannedTensor> tensors;  // input, then per layer parameters and output, then the loss
  std::vector<PlannedNode> nodes;      // every layer, then the loss
  bool loss_requires_grad = false;

  std::size_t tape_bytes = 0;
  std::size_t tape_activation_bytes = 0;
  std::size_t tape_parameter_bytes = 0;
  std::size_t tape_compact_bytes = 0;
  std::size_t peak_bytes = 0;  // forward, parameters excluded
  std::size_t parameter_bytes = 0;
};

StoragePlan plan(const NetworkDescription& net, const Scenario& scenario);

/// Graphviz digraph with one node per tensor and per operation. Tensors the
/// tape holds are labelled "[saved tensor]" with their size; compact saved
/// values hang off their operation as note-shaped nodes.
std::string export_dot(const NetworkDescription& net, const StoragePlan& plan);

struct ProbeRow {
  std::string layer;
  int depth = 0;
  std::string scenario;
  std::string policy;
  StoragePlan planned;
  bool executed = false;
  std::size_t tape_bytes = 0;
  std::size_t tape_activation_bytes = 0;
  std::size_t peak_bytes = 0;
  double forward_seconds = 0.0;
  double backward_seconds = 0.0;
};

struct ProbeOptions {
  int min_depth = 1;
  int max_depth = 12;
  std::vector<Scenario> scenarios;
  std::vector<Policy> policies = {Policy::Naive, Policy::MemSave};
  bool execute = true;
  bool backward = true;  // forward-only runs still measure tape and peak
  int repetitions = 1;
  Dtype dtype = Dtype::F32;
};

/// Scenario sets for probing: "fig1" = all, none, from:k, only:k;
/// "extended" adds input and norm.
std::vector<Scenario> probe_scenarios(std::string_view set, int k);

/// Homogeneous chains of `layer` (see builtins::probe_chain) at every depth,
/// planned and optionally executed.
std::vector<ProbeRow> probe_sweep(std::string_view layer, const ProbeOptions& options);

}  // namespace memsave
