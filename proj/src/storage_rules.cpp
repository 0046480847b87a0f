// Copyright (c) 2026, the memsave authors
// SPDX-License-Identifier: Apache-2.0

#include "memsave/storage_rules.hpp"

#include <algorithm>

namespace memsave {

namespace {

// Z = W * X + b: the input VJP reads W, the weight VJP reads X.
void linear_in_both(const StorageQuery& q, std::vector<SavedRole>& out) {
  if (q.weight_rg) out.push_back(SavedRole::Input);
  if (q.input_rg) out.push_back(SavedRole::Weight);
}

}  // namespace

std::vector<SavedRole> required_saves(const StorageQuery& q) {
  std::vector<SavedRole> out;
  if (!q.output_rg()) return out;

  switch (q.op) {
    case OpKind::Linear:
      linear_in_both(q, out);
      break;
    case OpKind::Conv2d:
    case OpKind::ConvTranspose2d:
      if (q.policy == Policy::MemSave) {
        linear_in_both(q, out);
      } else {
        out = {SavedRole::Input, SavedRole::Weight};
      }
      break;
    case OpKind::BatchNorm2d:
      if (q.bn_mode == BatchNormMode::Train) {
        out = {SavedRole::Input, SavedRole::BatchStats};
        if (q.input_rg) out.push_back(SavedRole::Weight);
      } else if (q.policy == Policy::MemSave) {
        linear_in_both(q, out);
      } else {
        out = {SavedRole::Input, SavedRole::Weight};
      }
      break;
    case OpKind::LayerNorm:
      out = {SavedRole::Input, SavedRole::RowStats};
      if (q.input_rg) out.push_back(SavedRole::Weight);
      break;
    case OpKind::ReLU:
      out.push_back(q.policy == Policy::MemSave ? SavedRole::OutputMask : SavedRole::Output);
      break;
    case OpKind::Dropout:
      out.push_back(q.policy == Policy::MemSave ? SavedRole::DropSeed : SavedRole::DropMask);
      break;
    case OpKind::MaxPool2d:
      out.push_back(SavedRole::ArgmaxIndices);
      break;
    case OpKind::Softmax:
      out.push_back(SavedRole::Output);
      break;
    case OpKind::Matmul:
    case OpKind::Mul:
      if (q.weight_rg) out.push_back(SavedRole::Lhs);
      if (q.input_rg) out.push_back(SavedRole::Rhs);
      break;
    case OpKind::ProjectedSum:
      out.push_back(SavedRole::ProjectionSeed);
      break;
    case OpKind::Add:
    case OpKind::Scale:
    case OpKind::Sum:
      break;
  }
  std::sort(out.begin(), out.end());
  return out;
}

bool has_memsave_variant(OpKind op) {
  switch (op) {
    case OpKind::Linear:
    case OpKind::Conv2d:
    case OpKind::ConvTranspose2d:
    case OpKind::BatchNorm2d:
    case OpKind::ReLU:
    case OpKind::Dropout:
      return true;
    default:
      return false;
  }
}

}  // namespace memsave
