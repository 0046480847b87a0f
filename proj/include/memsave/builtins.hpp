// Copyright (c) 2026, the memsave authors
// SPDX-License-Identifier: Apache-2.0
//
// Named toy architectures. All layers start with the naive policy; use
// convert_network to switch.

#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "memsave/network.hpp"

namespace memsave::builtins {

/// Bias-free size-preserving 3x3 convolutions on (batch, channels, s, s).
NetworkDescription deep_cnn(int depth, std::int64_t channels = 8, std::int64_t batch = 4, std::int64_t spatial = 32,
                            Dtype dtype = Dtype::F32);

/// Stem conv-BN-ReLU followed by residual bottleneck blocks
/// (1x1 -> BN -> ReLU -> 3x3 -> BN -> ReLU -> 1x1 expand -> BN, plus a
/// projection shortcut when the channel count changes, then add and ReLU),
/// closed by a 1x1 head convolution back to `width` channels.
NetworkDescription bottleneck_chain(int blocks = 2, std::int64_t width = 16, std::int64_t in_channels = 3,
                                    std::int64_t batch = 2, std::int64_t spatial = 16, Dtype dtype = Dtype::F32,
                                    BatchNormMode bn_mode = BatchNormMode::Train);

/// Linear-ReLU stack on (batch, width) with biases; the last layer has no ReLU.
NetworkDescription mlp(int depth = 4, std::int64_t width = 64, std::int64_t batch = 32, Dtype dtype = Dtype::F32);

/// Single-head pre-norm transformer block on (batch, tokens, embed):
/// attention with dropout on the probabilities and on the projection, then
/// a ReLU feed-forward with dropout, each wrapped in a residual add.
NetworkDescription attention_block(std::int64_t embed = 16, std::int64_t tokens = 8, std::int64_t batch = 2,
                                   double dropout = 0.1, Dtype dtype = Dtype::F32);

/// Homogeneous size-preserving chain for layer probing. Kinds: "linear"
/// (input (8, 64, 64)), "conv2d", "conv_transpose2d", "batchnorm2d-train",
/// "batchnorm2d-eval" (input (4, 8, 32, 32)). All inputs are 131072 bytes
/// in f32.
NetworkDescription probe_chain(std::string_view kind, int depth, Dtype dtype = Dtype::F32);
std::vector<std::string> probe_kinds();

struct BuiltinOptions {
  int depth = 0;  // 0: the preset default
  bool tiny = false;
  bool bn_eval = false;
  Dtype dtype = Dtype::F32;
};

/// "deep_cnn", "bottleneck", "mlp", "attention"; throws UnknownNet.
/// Tiny presets keep every net under 10^4 parameters for finite differences.
NetworkDescription builtin(std::string_view name, const BuiltinOptions& options = {});
std::vector<std::string> builtin_names();

}  // namespace memsave::builtins
