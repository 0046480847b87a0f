// Copyright (c) 2026, the memsave authors
// SPDX-License-Identifier: Apache-2.0

#include "memsave/tape.hpp"

#include <algorithm>

namespace memsave {

std::string_view policy_name(Policy policy) { return policy == Policy::Naive ? "naive" : "memsave"; }

Policy parse_policy(std::string_view name) {
  if (name == "naive") return Policy::Naive;
  if (name == "memsave") return Policy::MemSave;
  throw Error(ErrorCode::InvalidConfig, "unknown policy '" + std::string(name) + "'");
}

std::string_view op_name(OpKind op) {
  switch (op) {
    case OpKind::Linear: return "linear";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::ConvTranspose2d: return "conv_transpose2d";
    case OpKind::BatchNorm2d: return "batchnorm2d";
    case OpKind::LayerNorm: return "layernorm";
    case OpKind::ReLU: return "relu";
    case OpKind::Dropout: return "dropout";
    case OpKind::MaxPool2d: return "maxpool2d";
    case OpKind::Softmax: return "softmax";
    case OpKind::Add: return "add";
    case OpKind::Matmul: return "matmul";
    case OpKind::Mul: return "mul";
    case OpKind::Scale: return "scale";
    case OpKind::Sum: return "sum";
    case OpKind::ProjectedSum: return "projected_sum";
  }
  return "unknown";
}

std::string_view role_name(SavedRole role) {
  switch (role) {
    case SavedRole::Input: return "input";
    case SavedRole::Weight: return "weight";
    case SavedRole::Output: return "output";
    case SavedRole::Lhs: return "lhs";
    case SavedRole::Rhs: return "rhs";
    case SavedRole::OutputMask: return "output_mask";
    case SavedRole::DropMask: return "drop_mask";
    case SavedRole::DropSeed: return "drop_seed";
    case SavedRole::ArgmaxIndices: return "argmax_indices";
    case SavedRole::BatchStats: return "batch_stats";
    case SavedRole::RowStats: return "row_stats";
    case SavedRole::ProjectionSeed: return "projection_seed";
  }
  return "unknown";
}

std::string_view saved_kind_name(SavedKind kind) {
  switch (kind) {
    case SavedKind::FullTensor: return "full_tensor";
    case SavedKind::BitMask: return "bit_mask";
    case SavedKind::ByteMask: return "byte_mask";
    case SavedKind::RngSeed: return "rng_seed";
    case SavedKind::IndexMap: return "index_map";
    case SavedKind::SmallStats: return "small_stats";
  }
  return "unknown";
}

std::size_t bit_mask_bytes(std::size_t numel) { return (numel + 7) / 8; }

// --- SavedValue -------------------------------------------------------------

void SavedValue::track(std::size_t bytes) { tracked_ = TrackedBytes(bytes, MemoryCategory::TapeSaved); }

SavedValue SavedValue::full_tensor(SavedRole role, Tensor tensor) {
  if (!tensor.defined()) throw Error(ErrorCode::UnknownTensor, "saving an undefined tensor");
  SavedValue v(role, SavedKind::FullTensor);
  v.tensor_ = std::move(tensor);
  return v;
}

SavedValue SavedValue::bit_mask(SavedRole role, const std::vector<bool>& flags) {
  SavedValue v(role, SavedKind::BitMask);
  v.count_ = flags.size();
  v.bytes_.assign(bit_mask_bytes(flags.size()), 0);
  for (std::size_t i = 0; i < flags.size(); ++i) {
    if (flags[i]) v.bytes_[i / 8] |= static_cast<std::uint8_t>(1U << (i % 8));
  }
  v.track(v.bytes_.size());
  return v;
}

SavedValue SavedValue::byte_mask(SavedRole role, std::vector<std::uint8_t> bytes) {
  SavedValue v(role, SavedKind::ByteMask);
  v.count_ = bytes.size();
  v.bytes_ = std::move(bytes);
  v.track(v.bytes_.size());
  return v;
}

SavedValue SavedValue::rng_seed(SavedRole role, std::uint64_t seed, double probability) {
  SavedValue v(role, SavedKind::RngSeed);
  v.seed_ = seed;
  v.probability_ = probability;
  v.track(kRngSeedBytes);
  return v;
}

SavedValue SavedValue::index_map(SavedRole role, std::vector<std::int32_t> indices) {
  SavedValue v(role, SavedKind::IndexMap);
  v.count_ = indices.size();
  v.indices_ = std::move(indices);
  v.track(v.indices_.size() * kIndexBytes);
  return v;
}

SavedValue SavedValue::small_stats(SavedRole role, std::vector<double> values, Dtype dtype) {
  SavedValue v(role, SavedKind::SmallStats);
  v.count_ = values.size();
  v.stats_ = std::move(values);
  v.stats_dtype_ = dtype;
  v.track(v.stats_.size() * dtype_width(dtype));
  return v;
}

std::size_t SavedValue::byte_cost() const {
  switch (kind_) {
    case SavedKind::FullTensor: return tensor_.byte_size();
    case SavedKind::BitMask:
    case SavedKind::ByteMask: return bytes_.size();
    case SavedKind::RngSeed: return kRngSeedBytes;
    case SavedKind::IndexMap: return indices_.size() * kIndexBytes;
    case SavedKind::SmallStats: return stats_.size() * dtype_width(stats_dtype_);
  }
  return 0;
}

const Tensor& SavedValue::tensor() const {
  if (kind_ != SavedKind::FullTensor) {
    throw Error(ErrorCode::MissingSavedValue,
                "saved " + std::string(role_name(role_)) + " is a " + std::string(saved_kind_name(kind_)) +
                    ", not a tensor");
  }
  return tensor_;
}

// --- SavedReader ------------------------------------------------------------

SavedReader::SavedReader(std::span<const SavedValue> saved) : saved_(saved), read_(saved.size(), false) {}

const SavedValue& SavedReader::get(SavedRole role) {
  for (std::size_t i = 0; i < saved_.size(); ++i) {
    if (saved_[i].role() == role) {
      read_[i] = true;
      return saved_[i];
    }
  }
  throw Error(ErrorCode::MissingSavedValue, "VJP needs " + std::string(role_name(role)) + " but it was not saved");
}

bool SavedReader::has(SavedRole role) const {
  return std::any_of(saved_.begin(), saved_.end(), [&](const SavedValue& v) { return v.role() == role; });
}

bool SavedReader::all_read() const { return std::all_of(read_.begin(), read_.end(), [](bool r) { return r; }); }

std::vector<SavedRole> SavedReader::unread() const {
  std::vector<SavedRole> out;
  for (std::size_t i = 0; i < saved_.size(); ++i)
    if (!read_[i]) out.push_back(saved_[i].role());
  return out;
}

std::vector<SavedRole> TapeNode::saved_roles() const {
  std::vector<SavedRole> roles;
  for (const auto& v : saved) roles.push_back(v.role());
  std::sort(roles.begin(), roles.end());
  return roles;
}

// --- GradStore --------------------------------------------------------------

const Tensor& GradStore::at(TensorId id) const {
  auto it = grads_.find(id);
  if (it == grads_.end()) throw Error(ErrorCode::UnknownTensor, "no gradient for tensor " + std::to_string(id));
  return it->second;
}

std::vector<TensorId> GradStore::ids() const {
  std::vector<TensorId> out;
  for (const auto& [id, _] : grads_) out.push_back(id);
  return out;
}

// --- Tape -------------------------------------------------------------------

void Tape::set_scope(int layer, std::string label) {
  scope_layer_ = layer;
  scope_label_ = std::move(label);
}

void Tape::clear_scope() {
  scope_layer_ = -1;
  scope_label_.clear();
}

void Tape::record(TapeNode node) {
  if (node.inputs.size() != node.input_requires_grad.size() || node.inputs.size() != node.input_shapes.size()) {
    throw Error(ErrorCode::InvalidConfig, "tape node input metadata is inconsistent");
  }
  const TensorId watermark = object_id_watermark();
  for (auto id : node.inputs) {
    if (id == 0 || id >= watermark) throw Error(ErrorCode::UnknownTensor, "tensor " + std::to_string(id));
  }
  if (node.output == 0 || node.output >= watermark) {
    throw Error(ErrorCode::UnknownTensor, "output tensor " + std::to_string(node.output));
  }
  const bool any_parent = std::any_of(node.input_requires_grad.begin(), node.input_requires_grad.end(),
                                      [](bool b) { return b; });
  if (node.output_requires_grad != any_parent) {
    throw Error(ErrorCode::InvalidConfig, "output requires_grad must equal the OR of its parents'");
  }
  if (!node.output_requires_grad) {
    throw Error(ErrorCode::InvalidConfig, "nodes without a differentiable parent are not recorded");
  }

  for (std::size_t i = 0; i < node.inputs.size(); ++i) {
    const TensorId id = node.inputs[i];
    if (node.input_requires_grad[i] && !produced_.contains(id) && !leaf_meta_.contains(id)) {
      leaves_.push_back(id);
      leaf_meta_.emplace(id, std::make_pair(node.input_shapes[i], node.dtype));
    }
  }
  produced_.insert(node.output);

  for (const auto& v : node.saved) {
    if (v.kind() == SavedKind::FullTensor) {
      const Tensor& t = v.tensor();
      auto& ref = registry_[t.id()];
      if (ref.refs++ == 0) {
        ref.bytes = t.byte_size();
        ref.parameter = t.category() == MemoryCategory::Parameter;
        bytes_.total += ref.bytes;
        (ref.parameter ? bytes_.parameter : bytes_.activation) += ref.bytes;
      }
    } else {
      bytes_.total += v.byte_cost();
      bytes_.compact += v.byte_cost();
    }
  }
  if (node.layer < 0) {
    node.layer = scope_layer_;
    if (node.label.empty()) node.label = scope_label_;
  }
  nodes_.push_back(std::move(node));
}

void Tape::release_node(TapeNode& node) {
  for (const auto& v : node.saved) {
    if (v.kind() == SavedKind::FullTensor) {
      auto it = registry_.find(v.tensor().id());
      auto& ref = it->second;
      if (--ref.refs == 0) {
        bytes_.total -= ref.bytes;
        (ref.parameter ? bytes_.parameter : bytes_.activation) -= ref.bytes;
        registry_.erase(it);
      }
    } else {
      bytes_.total -= v.byte_cost();
      bytes_.compact -= v.byte_cost();
    }
  }
  node.saved.clear();
  node.vjp = nullptr;
}

void Tape::clear() {
  for (auto& node : nodes_) release_node(node);
  nodes_.clear();
  registry_.clear();
  produced_.clear();
  leaves_.clear();
  leaf_meta_.clear();
  bytes_ = {};
}

GradStore backward(Tape& tape, TensorId loss) {
  auto& nodes = tape.nodes_;
  auto loss_node = std::find_if(nodes.begin(), nodes.end(), [&](const TapeNode& n) { return n.output == loss; });
  if (loss_node == nodes.end()) {
    throw Error(ErrorCode::UnknownTensor, "loss tensor " + std::to_string(loss) + " was not produced on this tape");
  }
  if (loss_node->output_shape.numel() != 1) {
    throw Error(ErrorCode::ShapeMismatch, "loss must be a single element, got " + loss_node->output_shape.to_string());
  }

  CategoryScope gradient_scope(MemoryCategory::Gradient);
  std::unordered_map<TensorId, Tensor> grads;
  grads.emplace(loss, Tensor::ones(loss_node->output_shape, loss_node->dtype));
  tape.unread_.clear();

  for (std::size_t idx = nodes.size(); idx-- > 0;) {
    TapeNode& node = nodes[idx];
    auto git = grads.find(node.output);
    if (git == grads.end()) {
      for (const auto& v : node.saved) tape.unread_.push_back({idx, node.layer, node.op, node.policy, v.role()});
      tape.release_node(node);
      continue;
    }
    const Tensor grad_output = std::move(git->second);
    grads.erase(git);

    SavedReader reader(node.saved);
    std::vector<Tensor> input_grads = node.vjp(grad_output, reader);
    for (SavedRole role : reader.unread()) tape.unread_.push_back({idx, node.layer, node.op, node.policy, role});
    if (input_grads.size() != node.inputs.size()) {
      throw Error(ErrorCode::InvalidConfig, std::string(op_name(node.op)) + " VJP returned the wrong arity");
    }
    tape.release_node(node);

    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      if (!node.input_requires_grad[i] || !input_grads[i].defined()) continue;
      auto [it, inserted] = grads.try_emplace(node.inputs[i], input_grads[i]);
      if (!inserted) it->second = add(it->second, input_grads[i]);
    }
    input_grads.clear();
  }

  GradStore store;
  for (TensorId leaf : tape.leaves_) {
    auto it = grads.find(leaf);
    if (it != grads.end()) {
      store.grads_.emplace(leaf, std::move(it->second));
    } else {
      const auto& [shape, dtype] = tape.leaf_meta_.at(leaf);
      store.grads_.emplace(leaf, Tensor::zeros(shape, dtype));
    }
  }
  grads.clear();
  tape.nodes_.clear();
  tape.registry_.clear();
  tape.produced_.clear();
  tape.leaves_.clear();
  tape.leaf_meta_.clear();
  tape.bytes_ = {};
  tape.consumed_ = true;
  return store;
}

}  // namespace memsave
