// Copyright (c) 2026, the memsave authors
// SPDX-License-Identifier: Apache-2.0
//
// Differentiable operations. Each forward computes its output, and when the
// output requires grad records a tape node that keeps exactly what
// `required_saves` lists for the given policy and differentiability flags.
// The VJPs only read saved values belonging to gradients they actually
// produce, so nothing saved under the memory-saving policy goes unread.

#pragma once

#include <cstdint>
#include <vector>

#include "memsave/storage_rules.hpp"
#include "memsave/tape.hpp"
#include "memsave/tensor.hpp"

namespace memsave::layers {

/// Weight and optional bias. Their own requires_grad flags decide what the
/// layer saves.
struct LayerParams {
  Tensor weight;
  Tensor bias;
};

struct ConvConfig {
  std::int64_t stride = 1;
  std::int64_t padding = 0;
};

struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double eps = 1e-5;
  double momentum = 0.1;
  BatchNormMode mode = BatchNormMode::Train;
};

enum class ReluVariant : std::uint8_t { Naive, Masked };
enum class DropoutVariant : std::uint8_t { StoreMask, RngReplay };

struct DropoutConfig {
  double p = 0.5;
  DropoutVariant variant = DropoutVariant::StoreMask;
  std::uint64_t seed = 0;
};

struct PoolConfig {
  std::int64_t window = 2;
  std::int64_t stride = 0;  // 0: same as window
};

struct MatmulConfig {
  bool transpose_b = false;
  double scale = 1.0;
};

inline ReluVariant relu_variant(Policy policy) {
  return policy == Policy::MemSave ? ReluVariant::Masked : ReluVariant::Naive;
}
inline DropoutVariant dropout_variant(Policy policy) {
  return policy == Policy::MemSave ? DropoutVariant::RngReplay : DropoutVariant::StoreMask;
}

/// Z = X W^T + b over the last dimension of X; W is (out, in).
Tensor linear(const Tensor& x, const LayerParams& params, Policy policy, Tape& tape);

/// Cross-correlation; W is (C_out, C_in, kH, kW).
Tensor conv2d(const Tensor& x, const LayerParams& params, const ConvConfig& config, Policy policy, Tape& tape);

/// Adjoint of conv2d with respect to its input; W is (C_in, C_out, kH, kW)
/// and the output size is (H - 1) * stride - 2 * padding + kH.
Tensor conv_transpose2d(const Tensor& x, const LayerParams& params, const ConvConfig& config, Policy policy,
                        Tape& tape);

/// Per-channel normalization of (N, C, H, W). Train mode uses biased batch
/// variance and updates the running statistics in `state`; eval mode
/// normalizes by the running statistics, which stay module state. Both the
/// scale and the shift are required.
Tensor batchnorm2d(const Tensor& x, const LayerParams& params, BatchNormState& state, Policy policy, Tape& tape);

/// Normalization over the last dimension with elementwise affine W, b (both
/// required).
Tensor layernorm(const Tensor& x, const LayerParams& params, double eps, Policy policy, Tape& tape);

/// max(x, 0). The mask convention is x > 0, so an exact zero gets gradient 0.
Tensor relu(const Tensor& x, ReluVariant variant, Tape& tape);

/// Inverted dropout: kept elements are scaled by 1 / (1 - p).
Tensor dropout(const Tensor& x, const DropoutConfig& config, Tape& tape);

/// Keep flags for dropout; element i survives iff uniform(seed, i) >= p.
std::vector<std::uint8_t> dropout_keep_mask(std::uint64_t seed, double p, std::size_t numel);

/// Max over windows of (N, C, H, W). Ties go to the first element in
/// row-major window order.
Tensor maxpool2d(const Tensor& x, const PoolConfig& config, Tape& tape);

/// Softmax over the last dimension, max-subtracted.
Tensor softmax(const Tensor& x, Tape& tape);

Tensor add(const Tensor& a, const Tensor& b, Tape& tape);
Tensor mul(const Tensor& a, const Tensor& b, Tape& tape);
Tensor scale(const Tensor& a, double factor, Tape& tape);

/// scale * A B (or A B^T) over matching leading batch dimensions.
Tensor matmul(const Tensor& a, const Tensor& b, const MatmulConfig& config, Tape& tape);

/// Rank-0 sum of all elements.
Tensor sum(const Tensor& x, Tape& tape);

/// Rank-0 sum_i x_i r_i with r_i = Rng::normal_at(seed, i). Backward
/// regenerates r from the seed, so the tape keeps 16 bytes.
Tensor projected_sum(const Tensor& x, std::uint64_t seed, Tape& tape);

}  // namespace memsave::layers
