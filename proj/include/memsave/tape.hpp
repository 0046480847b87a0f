// Copyright (c) 2026, the memsave authors
// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode tape. Nodes are recorded only for operations whose output
// requires grad, and each node retains exactly the saved values chosen by
// the storage rules at record time. Full tensors saved by several nodes are
// reference counted and charged once.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "memsave/memwatch.hpp"
#include "memsave/tensor.hpp"

namespace memsave {

enum class Policy : std::uint8_t { Naive, MemSave };

std::string_view policy_name(Policy policy);
Policy parse_policy(std::string_view name);

enum class OpKind : std::uint8_t {
  Linear,
  Conv2d,
  ConvTranspose2d,
  BatchNorm2d,
  LayerNorm,
  ReLU,
  Dropout,
  MaxPool2d,
  Softmax,
  Add,
  Matmul,
  Mul,
  Scale,
  Sum,
  ProjectedSum,
};

std::string_view op_name(OpKind op);

/// What a saved value is, from the point of view of the VJP that reads it.
enum class SavedRole : std::uint8_t {
  Input,
  Weight,
  Output,
  Lhs,
  Rhs,
  OutputMask,      // ReLU: output > 0, one bit per element
  DropMask,        // dropout keep mask, one byte per element
  DropSeed,        // dropout RNG seed and probability
  ArgmaxIndices,   // max pooling: flat input index per output element
  BatchStats,      // batch norm (train): per-channel mean and inverse std
  RowStats,        // layer norm: per-row inverse std
  ProjectionSeed,  // random projection loss
};

std::string_view role_name(SavedRole role);

enum class SavedKind : std::uint8_t { FullTensor, BitMask, ByteMask, RngSeed, IndexMap, SmallStats };

std::string_view saved_kind_name(SavedKind kind);

/// Byte cost of the compact kinds, shared by the executor and the planner.
std::size_t bit_mask_bytes(std::size_t numel);
inline constexpr std::size_t kRngSeedBytes = 16;  // 8-byte seed + 8-byte probability
inline constexpr std::size_t kIndexBytes = 4;

class SavedValue {
 public:
  static SavedValue full_tensor(SavedRole role, Tensor tensor);
  /// Packs `flags` into ceil(n/8) bytes, bit i at byte i/8, position i%8.
  static SavedValue bit_mask(SavedRole role, const std::vector<bool>& flags);
  static SavedValue byte_mask(SavedRole role, std::vector<std::uint8_t> bytes);
  static SavedValue rng_seed(SavedRole role, std::uint64_t seed, double probability);
  static SavedValue index_map(SavedRole role, std::vector<std::int32_t> indices);
  /// `values` are already rounded to `dtype`; the cost is count * width.
  static SavedValue small_stats(SavedRole role, std::vector<double> values, Dtype dtype);

  SavedRole role() const { return role_; }
  SavedKind kind() const { return kind_; }
  std::size_t byte_cost() const;

  const Tensor& tensor() const;
  bool mask_bit(std::size_t i) const { return (bytes_[i / 8] >> (i % 8)) & 1U; }
  std::size_t mask_size() const { return count_; }
  std::span<const std::uint8_t> bytes() const { return bytes_; }
  std::uint64_t seed() const { return seed_; }
  double probability() const { return probability_; }
  std::span<const std::int32_t> indices() const { return indices_; }
  std::span<const double> stats() const { return stats_; }

 private:
  SavedValue(SavedRole role, SavedKind kind) : role_(role), kind_(kind) {}
  void track(std::size_t bytes);

  SavedRole role_;
  SavedKind kind_;
  Tensor tensor_;
  std::vector<std::uint8_t> bytes_;
  std::size_t count_ = 0;
  std::uint64_t seed_ = 0;
  double probability_ = 0.0;
  std::vector<std::int32_t> indices_;
  std::vector<double> stats_;
  Dtype stats_dtype_ = Dtype::F32;
  TrackedBytes tracked_;
};

/// Access to a node's saved values from inside its VJP. Every lookup is
/// recorded so unread saves can be reported after backward.
class SavedReader {
 public:
  explicit SavedReader(std::span<const SavedValue> saved);

  const SavedValue& get(SavedRole role);
  const Tensor& tensor(SavedRole role) { return get(role).tensor(); }
  bool has(SavedRole role) const;
  bool all_read() const;
  std::vector<SavedRole> unread() const;

 private:
  std::span<const SavedValue> saved_;
  std::vector<bool> read_;
};

using VjpFn = std::function<std::vector<Tensor>(const Tensor& grad_output, SavedReader& saved)>;

struct TapeNode {
  OpKind op = OpKind::Sum;
  Policy policy = Policy::Naive;
  int layer = -1;
  std::string label;
  std::vector<TensorId> inputs;
  std::vector<Shape> input_shapes;
  std::vector<bool> input_requires_grad;
  TensorId output = 0;
  Shape output_shape;
  Dtype dtype = Dtype::F32;
  bool output_requires_grad = true;
  std::vector<SavedValue> saved;
  /// Returns one gradient per input; undefined handles for inputs that do
  /// not require grad.
  VjpFn vjp;

  std::vector<SavedRole> saved_roles() const;
};

struct TapeBytes {
  std::size_t total = 0;
  std::size_t activation = 0;
  std::size_t parameter = 0;
  std::size_t compact = 0;
};

struct UnreadSave {
  std::size_t node = 0;
  int layer = -1;
  OpKind op = OpKind::Sum;
  Policy policy = Policy::Naive;
  SavedRole role = SavedRole::Input;
};

class Tape;
class GradStore;

GradStore backward(Tape& tape, TensorId loss);

class GradStore {
 public:
  bool contains(TensorId id) const { return grads_.contains(id); }
  const Tensor& at(TensorId id) const;
  std::size_t size() const { return grads_.size(); }
  std::vector<TensorId> ids() const;

 private:
  friend GradStore backward(Tape& tape, TensorId loss);
  std::map<TensorId, Tensor> grads_;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  /// Appends `node`. Throws UnknownTensor for ids that were never created and
  /// InvalidConfig when the node's flags break dominant inheritance.
  void record(TapeNode node);

  /// Deduplicated byte cost of every saved value currently on the tape.
  std::size_t tape_bytes() const { return bytes_.total; }
  const TapeBytes& bytes() const { return bytes_; }

  const std::vector<TapeNode>& nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }

  /// Layer index and label stamped on nodes recorded from now on.
  void set_scope(int layer, std::string label);
  void clear_scope();

  /// Inputs that require grad but are not produced on this tape, in first
  /// use order.
  const std::vector<TensorId>& leaves() const { return leaves_; }

  /// Saved values that no executed VJP read during the last backward.
  const std::vector<UnreadSave>& unread_saves() const { return unread_; }
  bool consumed() const { return consumed_; }

  void clear();

 private:
  friend GradStore backward(Tape& tape, TensorId loss);
  void release_node(TapeNode& node);

  struct SavedRef {
    std::size_t refs = 0;
    std::size_t bytes = 0;
    bool parameter = false;
  };

  std::vector<TapeNode> nodes_;
  std::unordered_map<TensorId, SavedRef> registry_;
  std::unordered_set<TensorId> produced_;
  std::vector<TensorId> leaves_;
  std::unordered_map<TensorId, std::pair<Shape, Dtype>> leaf_meta_;
  std::vector<UnreadSave> unread_;
  TapeBytes bytes_;
  int scope_layer_ = -1;
  std::string scope_label_;
  bool consumed_ = false;
};

/// Reverse sweep from `loss` (a single-element tensor produced on `tape`).
/// The result holds a gradient for every leaf that requires grad and nothing
/// else. The tape's saved values are released as the sweep passes them and
/// the tape is empty afterwards.
GradStore backward(Tape& tape, TensorId loss);

}  // namespace memsave
