// Copyright (c) 2026, the memsave authors
// SPDX-License-Identifier: Apache-2.0

#include "memsave/builtins.hpp"

#include <cmath>

namespace memsave::builtins {

namespace {

LayerSpec conv(std::int64_t out, std::int64_t kernel, std::int64_t padding, std::string name) {
  LayerSpec s;
  s.kind = LayerKind::Conv2d;
  s.out = out;
  s.kernel = kernel;
  s.padding = padding;
  s.name = std::move(name);
  return s;
}

LayerSpec simple(LayerKind kind, std::string name, std::vector<int> inputs = {}) {
  LayerSpec s;
  s.kind = kind;
  s.name = std::move(name);
  s.inputs = std::move(inputs);
  return s;
}

LayerSpec batchnorm(std::string name, BatchNormMode mode) {
  LayerSpec s = simple(LayerKind::BatchNorm2d, std::move(name));
  s.bn_mode = mode;
  return s;
}

LayerSpec linear(std::int64_t out, bool bias, std::string name, std::vector<int> inputs = {}) {
  LayerSpec s = simple(LayerKind::Linear, std::move(name), std::move(inputs));
  s.out = out;
  s.bias = bias;
  return s;
}

LayerSpec dropout(double p, std::string name) {
  LayerSpec s = simple(LayerKind::Dropout, std::move(name));
  s.p = p;
  return s;
}

int last(const NetworkDescription& net) { return static_cast<int>(net.layers.size()) - 1; }

void check_positive(int value, const char* what) {
  if (value < 1) throw Error(ErrorCode::InvalidConfig, std::string(what) + " must be at least 1");
}

}  // namespace

NetworkDescription deep_cnn(int depth, std::int64_t channels, std::int64_t batch, std::int64_t spatial, Dtype dtype) {
  check_positive(depth, "depth");
  NetworkDescription net;
  net.name = "deep_cnn";
  net.dtype = dtype;
  net.input_shape = Shape{batch, channels, spatial, spatial};
  for (int i = 0; i < depth; ++i) net.layers.push_back(conv(channels, 3, 1, "conv" + std::to_string(i + 1)));
  return net;
}

NetworkDescription bottleneck_chain(int blocks, std::int64_t width, std::int64_t in_channels, std::int64_t batch,
                                    std::int64_t spatial, Dtype dtype, BatchNormMode bn_mode) {
  check_positive(blocks, "blocks");
  NetworkDescription net;
  net.name = "bottleneck";
  net.dtype = dtype;
  net.input_shape = Shape{batch, in_channels, spatial, spatial};
  net.layers.push_back(conv(width, 3, 1, "stem.conv"));
  net.layers.push_back(batchnorm("stem.bn", bn_mode));
  net.layers.push_back(simple(LayerKind::ReLU, "stem.relu"));
  std::int64_t channels = width;
  for (int b = 1; b <= blocks; ++b) {
    const std::string p = "block" + std::to_string(b) + ".";
    const int block_in = last(net);
    net.layers.push_back(conv(width, 1, 0, p + "conv1"));
    net.layers.push_back(batchnorm(p + "bn1", bn_mode));
    net.layers.push_back(simple(LayerKind::ReLU, p + "relu1"));
    net.layers.push_back(conv(width, 3, 1, p + "conv2"));
    net.layers.push_back(batchnorm(p + "bn2", bn_mode));
    net.layers.push_back(simple(LayerKind::ReLU, p + "relu2"));
    net.layers.push_back(conv(4 * width, 1, 0, p + "conv3"));
    net.layers.push_back(batchnorm(p + "bn3", bn_mode));
    const int main_out = last(net);
    int shortcut = block_in;
    if (channels != 4 * width) {
      LayerSpec down = conv(4 * width, 1, 0, p + "downsample.conv");
      down.inputs = {block_in};
      net.layers.push_back(down);
      net.layers.push_back(batchnorm(p + "downsample.bn", bn_mode));
      shortcut = last(net);
    }
    net.layers.push_back(simple(LayerKind::Add, p + "add", {main_out, shortcut}));
    net.layers.push_back(simple(LayerKind::ReLU, p + "relu3"));
    channels = 4 * width;
  }
  net.layers.push_back(conv(width, 1, 0, "head.conv"));
  return net;
}

NetworkDescription mlp(int depth, std::int64_t width, std::int64_t batch, Dtype dtype) {
  check_positive(depth, "depth");
  NetworkDescription net;
  net.name = "mlp";
  net.dtype = dtype;
  net.input_shape = Shape{batch, width};
  for (int i = 1; i <= depth; ++i) {
    net.layers.push_back(linear(width, true, "fc" + std::to_string(i)));
    if (i < depth) net.layers.push_back(simple(LayerKind::ReLU, "relu" + std::to_string(i)));
  }
  return net;
}

NetworkDescription attention_block(std::int64_t embed, std::int64_t tokens, std::int64_t batch, double p,
                                   Dtype dtype) {
  NetworkDescription net;
  net.name = "attention";
  net.dtype = dtype;
  net.input_shape = Shape{batch, tokens, embed};
  auto& L = net.layers;
  L.push_back(simple(LayerKind::LayerNorm, "ln1", {-1}));
  const int ln1 = last(net);
  L.push_back(linear(embed, true, "q", {ln1}));
  const int q = last(net);
  L.push_back(linear(embed, true, "k", {ln1}));
  const int k = last(net);
  L.push_back(linear(embed, true, "v", {ln1}));
  const int v = last(net);
  LayerSpec scores = simple(LayerKind::Matmul, "scores", {q, k});
  scores.transpose_b = true;
  scores.scale = 1.0 / std::sqrt(static_cast<double>(embed));
  L.push_back(scores);
  L.push_back(simple(LayerKind::Softmax, "softmax"));
  L.push_back(dropout(p, "attn_drop"));
  L.push_back(simple(LayerKind::Matmul, "context", {last(net), v}));
  L.push_back(linear(embed, true, "proj"));
  L.push_back(dropout(p, "proj_drop"));
  L.push_back(simple(LayerKind::Add, "residual1", {last(net), -1}));
  const int res1 = last(net);
  L.push_back(simple(LayerKind::LayerNorm, "ln2"));
  L.push_back(linear(4 * embed, true, "fc1"));
  L.push_back(simple(LayerKind::ReLU, "relu"));
  L.push_back(dropout(p, "mlp_drop"));
  L.push_back(linear(embed, true, "fc2"));
  L.push_back(simple(LayerKind::Add, "residual2", {last(net), res1}));
  return net;
}

std::vector<std::string> probe_kinds() {
  return {"linear", "conv2d", "conv_transpose2d", "batchnorm2d-train", "batchnorm2d-eval"};
}

NetworkDescription probe_chain(std::string_view kind, int depth, Dtype dtype) {
  check_positive(depth, "depth");
  NetworkDescription net;
  net.dtype = dtype;
  net.name = std::string(kind);
  if (kind == "linear") {
    net.input_shape = Shape{8, 64, 64};
    for (int i = 1; i <= depth; ++i) net.layers.push_back(linear(64, false, "linear" + std::to_string(i)));
    return net;
  }
  net.input_shape = Shape{4, 8, 32, 32};
  for (int i = 1; i <= depth; ++i) {
    const std::string idx = std::to_string(i);
    if (kind == "conv2d") {
      net.layers.push_back(conv(8, 3, 1, "conv" + idx));
    } else if (kind == "conv_transpose2d") {
      LayerSpec s = conv(8, 3, 1, "convT" + idx);
      s.kind = LayerKind::ConvTranspose2d;
      net.layers.push_back(s);
    } else if (kind == "batchnorm2d-train" || kind == "batchnorm2d-eval") {
      net.layers.push_back(
          batchnorm("bn" + idx, kind == "batchnorm2d-train" ? BatchNormMode::Train : BatchNormMode::Eval));
    } else {
      throw Error(ErrorCode::InvalidConfig, "no probe chain for layer '" + std::string(kind) + "'");
    }
  }
  return net;
}

std::vector<std::string> builtin_names() { return {"deep_cnn", "bottleneck", "mlp", "attention"}; }

NetworkDescription builtin(std::string_view name, const BuiltinOptions& o) {
  const BatchNormMode bn = o.bn_eval ? BatchNormMode::Eval : BatchNormMode::Train;
  auto depth_or = [&](int fallback) { return o.depth > 0 ? o.depth : fallback; };
  if (name == "deep_cnn") {
    return o.tiny ? deep_cnn(depth_or(3), 2, 2, 5, o.dtype) : deep_cnn(depth_or(8), 8, 4, 32, o.dtype);
  }
  if (name == "bottleneck") {
    return o.tiny ? bottleneck_chain(depth_or(1), 2, 2, 2, 4, o.dtype, bn)
                  : bottleneck_chain(depth_or(2), 16, 3, 2, 16, o.dtype, bn);
  }
  if (name == "mlp") {
    return o.tiny ? mlp(depth_or(3), 5, 3, o.dtype) : mlp(depth_or(4), 64, 32, o.dtype);
  }
  if (name == "attention") {
    return o.tiny ? attention_block(4, 3, 2, 0.1, o.dtype) : attention_block(16, 8, 2, 0.1, o.dtype);
  }
  throw Error(ErrorCode::UnknownNet, "'" + std::string(name) + "'");
}

}  // namespace memsave::builtins
