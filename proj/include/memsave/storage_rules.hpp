// Copyright (c) 2026, the memsave authors
// SPDX-License-Identifier: Apache-2.0
//
// Which values each operation keeps for its backward pass, per policy.
// This table is the only place the rules live: the layer implementations
// consult it when recording, and the planner consults it when predicting.
//
//   op                 memsave                             naive
//   linear             input iff weight rg,                same as memsave
//                      weight iff input rg
//   conv2d / convT2d   as linear                           input + weight
//   batchnorm (eval)   as linear                           input + weight
//   batchnorm (train)  input + batch stats, weight iff input rg (both)
//   layernorm          input + row stats, weight iff input rg (both)
//   relu               output bit mask                     full output
//   dropout            rng seed                            byte mask
//   maxpool2d          argmax indices (both)
//   softmax            output (both)
//   matmul / mul       lhs iff rhs rg, rhs iff lhs rg (both)
//   add / scale / sum  nothing
//   projected_sum      projection seed
//
// Every rule applies only when the output requires grad; otherwise the
// operation is not recorded and keeps nothing. Bias gradients never need a
// saved value.

#pragma once

#include <vector>

#include "memsave/tape.hpp"

namespace memsave {

enum class BatchNormMode : std::uint8_t { Train, Eval };

struct StorageQuery {
  OpKind op = OpKind::Linear;
  Policy policy = Policy::Naive;
  bool input_rg = false;   // first operand (lhs for matmul/mul)
  bool weight_rg = false;  // weight (rhs for matmul/mul)
  bool bias_rg = false;
  BatchNormMode bn_mode = BatchNormMode::Train;

  bool output_rg() const { return input_rg || weight_rg || bias_rg; }
};

/// Roles the operation must save, sorted ascending.
std::vector<SavedRole> required_saves(const StorageQuery& query);

/// Whether a network converter swaps `op` for its memory-saving replacement.
/// Linear is included although both policies store the same values for it.
bool has_memsave_variant(OpKind op);

}  // namespace memsave
