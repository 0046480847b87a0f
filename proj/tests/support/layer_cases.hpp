// Copyright (c) 2026, the memsave authors
// SPDX-License-Identifier: Apache-2.0
//
// Single-layer cases shared by the unit tests and the acceptance binary: the
// parameterized-layer storage matrix written out by hand, and small f64
// gradient cases with their central-difference check.

#pragma once

#include <cstdint>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "memsave/layers.hpp"

namespace memsave::oracle {

enum class TableLayer { Linear, Conv2d, ConvTranspose2d, BatchNormEval, BatchNormTrain };

std::vector<TableLayer> table_layers();
const char* table_layer_name(TableLayer layer);

/// Roles retained by `layer` when its input and weight have the given flags.
/// Written from the layer VJPs; independent of required_saves.
std::set<SavedRole> expected_roles(TableLayer layer, Policy policy, bool input_rg, bool weight_rg);

struct TableRun {
  std::set<SavedRole> roles;
  bool aliases_leaves = true;  // Input/Weight saves are the leaf tensors themselves
  bool stats_compact = true;   // BatchStats are small statistics
};

/// Records one layer on a fresh tape and reports what it saved.
TableRun run_table_layer(TableLayer layer, Policy policy, bool input_rg, bool weight_rg);

using LayerFn = std::function<Tensor(const std::vector<Tensor>&, Policy, Tape&)>;

struct GradCase {
  std::string name;
  std::vector<Shape> shapes;
  LayerFn fn;
  std::vector<double> shift;  // per input, added to N(0, 1) draws
};

std::vector<GradCase> grad_cases();

/// Input values for one seed.
std::vector<std::vector<double>> case_values(const GradCase& gc, std::uint64_t seed);

struct CaseGradients {
  std::vector<std::vector<double>> grads;  // per input
  std::vector<UnreadSave> unread;
};

/// Gradients of a fixed weighted sum of the layer output.
CaseGradients case_gradients(const GradCase& gc, const std::vector<std::vector<double>>& values, Policy policy);

/// Max relative error (floor 1e-3) of `grads` against central differences.
double case_numeric_error(const GradCase& gc, const std::vector<std::vector<double>>& values,
                          const std::vector<std::vector<double>>& grads, double h = 1e-6);

}  // namespace memsave::oracle
