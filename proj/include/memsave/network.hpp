// Copyright (c) 2026, the memsave authors
// SPDX-License-Identifier: Apache-2.0
//
// Network descriptions: an ordered list of layer specs over one network
// input, serializable as JSON, plus the differentiability scenarios that
// decide which leaves request gradients.
//
// JSON schema (all layer fields except "kind" are optional):
//
//   {
//     "name": "toy", "dtype": "f32", "input_shape": [4, 8, 32, 32], "seed": 0,
//     "input_requires_grad": false,            // overrides the scenario
//     "layers": [
//       {"kind": "conv2d", "name": "c1", "out": 8, "kernel": 3, "stride": 1,
//        "padding": 1, "bias": false, "policy": "memsave",
//        "inputs": [-1],                        // -1 is the network input;
//                                               // omitted means previous layer
//        "weight_requires_grad": true},          // overrides the scenario
//       {"kind": "batchnorm2d", "mode": "eval", "eps": 1e-5, "momentum": 0.1},
//       {"kind": "relu"}, {"kind": "dropout", "p": 0.1},
//       {"kind": "maxpool2d", "window": 2, "stride": 2},
//       {"kind": "add", "inputs": [0, 3]},
//       {"kind": "matmul", "inputs": [1, 2], "transpose_b": true, "scale": 0.5}
//     ]
//   }

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "memsave/storage_rules.hpp"
#include "memsave/tape.hpp"
#include "memsave/tensor.hpp"

namespace memsave {

enum class LayerKind : std::uint8_t {
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
};

std::string_view layer_kind_name(LayerKind kind);
/// Throws UnknownLayerKind.
LayerKind parse_layer_kind(std::string_view name);
std::vector<LayerKind> all_layer_kinds();

OpKind op_kind(LayerKind kind);
bool has_parameters(LayerKind kind);
bool is_normalization(LayerKind kind);

struct LayerSpec {
  LayerKind kind = LayerKind::ReLU;
  std::string name;
  std::vector<int> inputs;
  Policy policy = Policy::Naive;

  std::int64_t out = 0;  // linear features / conv output channels
  std::int64_t kernel = 3;
  std::int64_t stride = 1;
  std::int64_t padding = 0;
  bool bias = false;

  BatchNormMode bn_mode = BatchNormMode::Train;
  double eps = 1e-5;
  double momentum = 0.1;

  double p = 0.5;
  std::int64_t window = 2;
  std::int64_t pool_stride = 0;

  bool transpose_b = false;
  double scale = 1.0;

  std::optional<bool> weight_requires_grad;
  std::optional<bool> bias_requires_grad;
};

struct NetworkDescription {
  std::string name = "net";
  Dtype dtype = Dtype::F32;
  Shape input_shape;
  std::uint64_t seed = 0;
  std::vector<LayerSpec> layers;
  std::optional<bool> input_requires_grad;
};

/// Inputs of layer `index` with the defaults filled in: the previous layer,
/// or the network input (-1) for the first layer.
std::vector<int> layer_inputs(const NetworkDescription& net, std::size_t index);
std::string layer_label(const NetworkDescription& net, std::size_t index);

/// Number of layers that read each layer's output.
std::vector<int> consumer_counts(const NetworkDescription& net);

struct ParameterShapes {
  std::optional<Shape> weight;
  std::optional<Shape> bias;
};

struct PropagatedShapes {
  std::vector<Shape> outputs;
  std::vector<ParameterShapes> parameters;
};

/// Output and parameter shapes of every layer; throws ShapePropagation with
/// the offending layer named.
PropagatedShapes propagate_shapes(const NetworkDescription& net);

NetworkDescription network_from_json(std::string_view text);
std::string network_to_json(const NetworkDescription& net);
NetworkDescription load_network(const std::filesystem::path& path);
void save_network(const NetworkDescription& net, const std::filesystem::path& path);

/// Sets the policy of every layer with a memory-saving variant, or only of
/// the kinds in `filter`. Throws UnknownLayerKind if `filter` names a kind
/// that has no such variant.
NetworkDescription convert_network(const NetworkDescription& net, Policy target,
                                   const std::optional<std::set<LayerKind>>& filter = std::nullopt);

/// "naive" or "memsave" when every convertible layer agrees, else "mixed".
std::string policy_summary(const NetworkDescription& net);

// --- scenarios --------------------------------------------------------------

/// Parameterized layers are numbered from 1 in network order.
class Scenario {
 public:
  enum class Kind : std::uint8_t { All, Input, Norm, Surgical, None, From, Only, Everything };

  Scenario() = default;
  static Scenario all() { return Scenario(Kind::All); }
  static Scenario input() { return Scenario(Kind::Input); }
  static Scenario norm() { return Scenario(Kind::Norm); }
  static Scenario surgical() { return Scenario(Kind::Surgical); }
  static Scenario none() { return Scenario(Kind::None); }
  static Scenario everything() { return Scenario(Kind::Everything); }
  static Scenario from(int k) { return Scenario(Kind::From, k); }
  static Scenario only(int k) { return Scenario(Kind::Only, k); }

  /// "all", "input", "norm", "surgical", "none", "everything", "from:k",
  /// "only:k".
  static Scenario parse(std::string_view text);

  Kind kind() const { return kind_; }
  int k() const { return k_; }
  std::string name() const;

  friend bool operator==(const Scenario&, const Scenario&) = default;

 private:
  explicit Scenario(Kind kind, int k = 0) : kind_(kind), k_(k) {}
  Kind kind_ = Kind::All;
  int k_ = 0;
};

struct Differentiability {
  bool input = false;
  std::vector<bool> weight;  // per layer; false for layers without parameters
  std::vector<bool> bias;
};

/// Applies the scenario and then the per-layer and input overrides. The
/// bias flag follows the weight flag unless overridden.
Differentiability resolve_flags(const NetworkDescription& net, const Scenario& scenario);

}  // namespace memsave
