// Copyright (c) 2026, the memsave authors
// SPDX-License-Identifier: Apache-2.0

#include "memsave/network.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace memsave {

using nlohmann::json;

namespace {

constexpr LayerKind kAllKinds[] = {
    LayerKind::Linear,  LayerKind::Conv2d,    LayerKind::ConvTranspose2d, LayerKind::BatchNorm2d,
    LayerKind::LayerNorm, LayerKind::ReLU,    LayerKind::Dropout,         LayerKind::MaxPool2d,
    LayerKind::Softmax, LayerKind::Add,       LayerKind::Matmul,
};

[[noreturn]] void shape_error(const NetworkDescription& net, std::size_t i, const std::string& why) {
  throw Error(ErrorCode::ShapePropagation, "layer " + std::to_string(i) + " (" + layer_label(net, i) + "): " + why);
}

}  // namespace

std::string_view layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::Linear: return "linear";
    case LayerKind::Conv2d: return "conv2d";
    case LayerKind::ConvTranspose2d: return "conv_transpose2d";
    case LayerKind::BatchNorm2d: return "batchnorm2d";
    case LayerKind::LayerNorm: return "layernorm";
    case LayerKind::ReLU: return "relu";
    case LayerKind::Dropout: return "dropout";
    case LayerKind::MaxPool2d: return "maxpool2d";
    case LayerKind::Softmax: return "softmax";
    case LayerKind::Add: return "add";
    case LayerKind::Matmul: return "matmul";
  }
  return "unknown";
}

LayerKind parse_layer_kind(std::string_view name) {
  for (LayerKind k : kAllKinds) {
    if (layer_kind_name(k) == name) return k;
  }
  throw Error(ErrorCode::UnknownLayerKind, "'" + std::string(name) + "'");
}

std::vector<LayerKind> all_layer_kinds() { return {std::begin(kAllKinds), std::end(kAllKinds)}; }

OpKind op_kind(LayerKind kind) {
  switch (kind) {
    case LayerKind::Linear: return OpKind::Linear;
    case LayerKind::Conv2d: return OpKind::Conv2d;
    case LayerKind::ConvTranspose2d: return OpKind::ConvTranspose2d;
    case LayerKind::BatchNorm2d: return OpKind::BatchNorm2d;
    case LayerKind::LayerNorm: return OpKind::LayerNorm;
    case LayerKind::ReLU: return OpKind::ReLU;
    case LayerKind::Dropout: return OpKind::Dropout;
    case LayerKind::MaxPool2d: return OpKind::MaxPool2d;
    case LayerKind::Softmax: return OpKind::Softmax;
    case LayerKind::Add: return OpKind::Add;
    case LayerKind::Matmul: return OpKind::Matmul;
  }
  return OpKind::Add;
}

bool has_parameters(LayerKind kind) {
  switch (kind) {
    case LayerKind::Linear:
    case LayerKind::Conv2d:
    case LayerKind::ConvTranspose2d:
    case LayerKind::BatchNorm2d:
    case LayerKind::LayerNorm:
      return true;
    default:
      return false;
  }
}

bool is_normalization(LayerKind kind) { return kind == LayerKind::BatchNorm2d || kind == LayerKind::LayerNorm; }

std::vector<int> layer_inputs(const NetworkDescription& net, std::size_t index) {
  const LayerSpec& spec = net.layers.at(index);
  if (!spec.inputs.empty()) return spec.inputs;
  return {static_cast<int>(index) - 1};
}

std::string layer_label(const NetworkDescription& net, std::size_t index) {
  const LayerSpec& spec = net.layers.at(index);
  if (!spec.name.empty()) return spec.name;
  return std::string(layer_kind_name(spec.kind)) + std::to_string(index);
}

std::vector<int> consumer_counts(const NetworkDescription& net) {
  std::vector<int> counts(net.layers.size(), 0);
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    for (int src : layer_inputs(net, i)) {
      if (src >= 0 && static_cast<std::size_t>(src) < counts.size()) ++counts[src];
    }
  }
  return counts;
}

PropagatedShapes propagate_shapes(const NetworkDescription& net) {
  PropagatedShapes out;
  if (net.input_shape.rank() == 0) throw Error(ErrorCode::ShapePropagation, "network input shape is empty");
  if (net.layers.empty()) throw Error(ErrorCode::ShapePropagation, "network has no layers");

  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const LayerSpec& s = net.layers[i];
    const auto inputs = layer_inputs(net, i);
    std::vector<Shape> in;
    for (int src : inputs) {
      if (src < -1 || src >= static_cast<int>(i)) shape_error(net, i, "input " + std::to_string(src) + " is not an earlier layer");
      in.push_back(src < 0 ? net.input_shape : out.outputs[src]);
    }
    const std::size_t arity = (s.kind == LayerKind::Add || s.kind == LayerKind::Matmul) ? 2 : 1;
    if (in.size() != arity) shape_error(net, i, "expects " + std::to_string(arity) + " input(s)");
    const Shape& x = in[0];
    const auto& d = x.dims();
    ParameterShapes params;
    Shape y;

    auto need_rank4 = [&] {
      if (x.rank() != 4) shape_error(net, i, "expects (N, C, H, W), got " + x.to_string());
    };
    switch (s.kind) {
      case LayerKind::Linear: {
        if (s.out <= 0) shape_error(net, i, "out must be positive");
        params.weight = Shape{s.out, d.back()};
        if (s.bias) params.bias = Shape{s.out};
        auto dims = d;
        dims.back() = s.out;
        y = Shape(dims);
        break;
      }
      case LayerKind::Conv2d:
      case LayerKind::ConvTranspose2d: {
        need_rank4();
        if (s.out <= 0 || s.kernel <= 0) shape_error(net, i, "out and kernel must be positive");
        if (s.stride <= 0 || s.padding < 0) shape_error(net, i, "stride must be positive, padding non-negative");
        std::int64_t oh = 0, ow = 0;
        if (s.kind == LayerKind::Conv2d) {
          if (d[2] + 2 * s.padding < s.kernel || d[3] + 2 * s.padding < s.kernel)
            shape_error(net, i, "kernel larger than padded input");
          oh = (d[2] + 2 * s.padding - s.kernel) / s.stride + 1;
          ow = (d[3] + 2 * s.padding - s.kernel) / s.stride + 1;
          params.weight = Shape{s.out, d[1], s.kernel, s.kernel};
        } else {
          oh = (d[2] - 1) * s.stride - 2 * s.padding + s.kernel;
          ow = (d[3] - 1) * s.stride - 2 * s.padding + s.kernel;
          if (oh <= 0 || ow <= 0) shape_error(net, i, "empty output");
          params.weight = Shape{d[1], s.out, s.kernel, s.kernel};
        }
        if (s.bias) params.bias = Shape{s.out};
        y = Shape{d[0], s.out, oh, ow};
        break;
      }
      case LayerKind::BatchNorm2d:
        need_rank4();
        params.weight = Shape{d[1]};
        params.bias = Shape{d[1]};
        y = x;
        break;
      case LayerKind::LayerNorm:
        params.weight = Shape{d.back()};
        params.bias = Shape{d.back()};
        y = x;
        break;
      case LayerKind::ReLU:
      case LayerKind::Softmax:
        y = x;
        break;
      case LayerKind::Dropout:
        if (!(s.p >= 0.0 && s.p < 1.0)) shape_error(net, i, "dropout p must lie in [0, 1)");
        y = x;
        break;
      case LayerKind::MaxPool2d: {
        need_rank4();
        const std::int64_t st = s.pool_stride == 0 ? s.window : s.pool_stride;
        if (s.window <= 0 || st <= 0 || s.window > d[2] || s.window > d[3])
          shape_error(net, i, "invalid pooling window");
        y = Shape{d[0], d[1], (d[2] - s.window) / st + 1, (d[3] - s.window) / st + 1};
        break;
      }
      case LayerKind::Add:
        if (!(in[0] == in[1])) shape_error(net, i, "add of " + in[0].to_string() + " and " + in[1].to_string());
        y = x;
        break;
      case LayerKind::Matmul: {
        const auto& b = in[1].dims();
        if (d.size() < 2 || d.size() != b.size()) shape_error(net, i, "matmul rank mismatch");
        for (std::size_t j = 0; j + 2 < d.size(); ++j)
          if (d[j] != b[j]) shape_error(net, i, "matmul batch dimensions differ");
        const auto bk = s.transpose_b ? b.back() : b[b.size() - 2];
        const auto bn = s.transpose_b ? b[b.size() - 2] : b.back();
        if (bk != d.back()) shape_error(net, i, "matmul inner dimensions differ");
        auto dims = d;
        dims.back() = bn;
        y = Shape(dims);
        break;
      }
    }
    out.outputs.push_back(std::move(y));
    out.parameters.push_back(std::move(params));
  }
  return out;
}

// --- JSON -------------------------------------------------------------------

namespace {

json layer_to_json(const LayerSpec& s) {
  json j;
  j["kind"] = layer_kind_name(s.kind);
  if (!s.name.empty()) j["name"] = s.name;
  if (!s.inputs.empty()) j["inputs"] = s.inputs;
  j["policy"] = policy_name(s.policy);
  switch (s.kind) {
    case LayerKind::Linear:
      j["out"] = s.out;
      j["bias"] = s.bias;
      break;
    case LayerKind::Conv2d:
    case LayerKind::ConvTranspose2d:
      j["out"] = s.out;
      j["kernel"] = s.kernel;
      j["stride"] = s.stride;
      j["padding"] = s.padding;
      j["bias"] = s.bias;
      break;
    case LayerKind::BatchNorm2d:
      j["mode"] = s.bn_mode == BatchNormMode::Train ? "train" : "eval";
      j["eps"] = s.eps;
      j["momentum"] = s.momentum;
      break;
    case LayerKind::LayerNorm:
      j["eps"] = s.eps;
      break;
    case LayerKind::Dropout:
      j["p"] = s.p;
      break;
    case LayerKind::MaxPool2d:
      j["window"] = s.window;
      j["stride"] = s.pool_stride;
      break;
    case LayerKind::Matmul:
      j["transpose_b"] = s.transpose_b;
      j["scale"] = s.scale;
      break;
    default:
      break;
  }
  if (s.weight_requires_grad) j["weight_requires_grad"] = *s.weight_requires_grad;
  if (s.bias_requires_grad) j["bias_requires_grad"] = *s.bias_requires_grad;
  return j;
}

LayerSpec layer_from_json(const json& j) {
  LayerSpec s;
  s.kind = parse_layer_kind(j.at("kind").get<std::string>());
  s.name = j.value("name", "");
  s.inputs = j.value("inputs", std::vector<int>{});
  s.policy = parse_policy(j.value("policy", "naive"));
  s.out = j.value("out", std::int64_t{0});
  s.kernel = j.value("kernel", std::int64_t{3});
  s.padding = j.value("padding", std::int64_t{0});
  s.bias = j.value("bias", false);
  const std::string mode = j.value("mode", "train");
  if (mode != "train" && mode != "eval") throw Error(ErrorCode::InvalidConfig, "batchnorm mode '" + mode + "'");
  s.bn_mode = mode == "train" ? BatchNormMode::Train : BatchNormMode::Eval;
  s.eps = j.value("eps", 1e-5);
  s.momentum = j.value("momentum", 0.1);
  s.p = j.value("p", 0.5);
  s.window = j.value("window", std::int64_t{2});
  if (s.kind == LayerKind::MaxPool2d) {
    s.pool_stride = j.value("stride", std::int64_t{0});
  } else {
    s.stride = j.value("stride", std::int64_t{1});
  }
  s.transpose_b = j.value("transpose_b", false);
  s.scale = j.value("scale", 1.0);
  if (j.contains("weight_requires_grad")) s.weight_requires_grad = j.at("weight_requires_grad").get<bool>();
  if (j.contains("bias_requires_grad")) s.bias_requires_grad = j.at("bias_requires_grad").get<bool>();
  return s;
}

}  // namespace

NetworkDescription network_from_json(std::string_view text) {
  try {
    const json j = json::parse(text);
    NetworkDescription net;
    net.name = j.value("name", "net");
    net.dtype = parse_dtype(j.value("dtype", "f32"));
    net.input_shape = Shape(j.at("input_shape").get<std::vector<std::int64_t>>());
    net.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("input_requires_grad")) net.input_requires_grad = j.at("input_requires_grad").get<bool>();
    for (const auto& layer : j.at("layers")) net.layers.push_back(layer_from_json(layer));
    return net;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("network JSON: ") + e.what());
  }
}

std::string network_to_json(const NetworkDescription& net) {
  json j;
  j["name"] = net.name;
  j["dtype"] = dtype_name(net.dtype);
  j["input_shape"] = net.input_shape.dims();
  j["seed"] = net.seed;
  if (net.input_requires_grad) j["input_requires_grad"] = *net.input_requires_grad;
  j["layers"] = json::array();
  for (const auto& s : net.layers) j["layers"].push_back(layer_to_json(s));
  return j.dump(2) + "\n";
}

NetworkDescription load_network(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return network_from_json(buf.str());
}

void save_network(const NetworkDescription& net, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << network_to_json(net);
  if (!out) throw Error(ErrorCode::Io, "write failed: " + path.string());
}

// --- conversion -------------------------------------------------------------

NetworkDescription convert_network(const NetworkDescription& net, Policy target,
                                   const std::optional<std::set<LayerKind>>& filter) {
  if (filter) {
    for (LayerKind k : *filter) {
      if (!has_memsave_variant(op_kind(k))) {
        throw Error(ErrorCode::UnknownLayerKind,
                    std::string(layer_kind_name(k)) + " has no memory-saving replacement");
      }
    }
  }
  NetworkDescription converted = net;
  for (auto& layer : converted.layers) {
    if (!has_memsave_variant(op_kind(layer.kind))) continue;
    if (filter && !filter->contains(layer.kind)) continue;
    layer.policy = target;
  }
  return converted;
}

std::string policy_summary(const NetworkDescription& net) {
  std::optional<Policy> seen;
  for (const auto& layer : net.layers) {
    if (!has_memsave_variant(op_kind(layer.kind))) continue;
    if (seen && *seen != layer.policy) return "mixed";
    seen = layer.policy;
  }
  return std::string(policy_name(seen.value_or(Policy::Naive)));
}

// --- scenarios --------------------------------------------------------------

Scenario Scenario::parse(std::string_view text) {
  if (text == "all") return all();
  if (text == "input") return input();
  if (text == "norm") return norm();
  if (text == "surgical") return surgical();
  if (text == "none") return none();
  if (text == "everything") return everything();
  for (auto [prefix, kind] : {std::pair{std::string_view("from:"), Kind::From}, std::pair{std::string_view("only:"), Kind::Only}}) {
    if (text.starts_with(prefix)) {
      const std::string rest(text.substr(prefix.size()));
      std::size_t used = 0;
      int k = 0;
      try {
        k = std::stoi(rest, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != rest.size() || k < 1) {
        throw Error(ErrorCode::InvalidConfig, "scenario '" + std::string(text) + "' needs a layer number >= 1");
      }
      return Scenario(kind, k);
    }
  }
  throw Error(ErrorCode::InvalidConfig, "unknown scenario '" + std::string(text) + "'");
}

std::string Scenario::name() const {
  switch (kind_) {
    case Kind::All: return "all";
    case Kind::Input: return "input";
    case Kind::Norm: return "norm";
    case Kind::Surgical: return "surgical";
    case Kind::None: return "none";
    case Kind::Everything: return "everything";
    case Kind::From: return "from:" + std::to_string(k_);
    case Kind::Only: return "only:" + std::to_string(k_);
  }
  return "unknown";
}

Differentiability resolve_flags(const NetworkDescription& net, const Scenario& scenario) {
  using Kind = Scenario::Kind;
  const std::size_t n = net.layers.size();
  Differentiability flags;
  flags.weight.assign(n, false);
  flags.bias.assign(n, false);

  int parameterized = 0;
  for (const auto& layer : net.layers) parameterized += has_parameters(layer.kind) ? 1 : 0;
  const int surgical_count = (parameterized + 3) / 4;

  flags.input = scenario.kind() == Kind::Input || scenario.kind() == Kind::Everything;
  int ordinal = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const LayerSpec& layer = net.layers[i];
    if (!has_parameters(layer.kind)) continue;
    ++ordinal;
    bool on = false;
    switch (scenario.kind()) {
      case Kind::All:
      case Kind::Everything: on = true; break;
      case Kind::Input:
      case Kind::None: on = false; break;
      case Kind::Norm: on = is_normalization(layer.kind); break;
      case Kind::Surgical: on = ordinal <= surgical_count; break;
      case Kind::From: on = ordinal >= scenario.k(); break;
      case Kind::Only: on = ordinal == scenario.k(); break;
    }
    flags.weight[i] = layer.weight_requires_grad.value_or(on);
    flags.bias[i] = layer.bias_requires_grad.value_or(flags.weight[i]);
  }
  if (net.input_requires_grad) flags.input = *net.input_requires_grad;
  return flags;
}

}  // namespace memsave
