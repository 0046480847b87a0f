// Copyright (c) 2026, the memsave authors
// SPDX-License-Identifier: Apache-2.0

#include "memsave/executor.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <unordered_map>

#include "memsave/layers.hpp"

namespace memsave {

namespace {

constexpr std::uint64_t kInputSalt = 1;
constexpr std::uint64_t kLayerSalt = 1000;
constexpr std::uint64_t kDropoutSalt = 1'000'000;
constexpr std::uint64_t kLossSalt = 2'000'000;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t mid = v.size() / 2;
  return v.size() % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

std::vector<double> normals(std::uint64_t seed, std::size_t n, double scale, double shift) {
  Rng rng(seed);
  std::vector<double> out(n);
  for (auto& v : out) v = shift + scale * rng.next_normal();
  return out;
}

std::size_t fan_in(const LayerSpec& spec, const Shape& weight) {
  switch (spec.kind) {
    case LayerKind::Linear: return static_cast<std::size_t>(weight[1]);
    case LayerKind::Conv2d:
    case LayerKind::ConvTranspose2d: return static_cast<std::size_t>(weight[1] * weight[2] * weight[3]);
    default: return 1;
  }
}

struct Instance {
  std::vector<layers::LayerParams> params;
  std::vector<layers::BatchNormState> bn;
  Tensor input;
};

Instance instantiate(const NetworkDescription& net, const PropagatedShapes& shapes, const Differentiability& flags,
                     const ParameterValues& values, std::unordered_map<TensorId, std::string>* names) {
  const std::size_t n = net.layers.size();
  if (values.layers.size() != n || values.input.size() != net.input_shape.numel()) {
    throw Error(ErrorCode::InvalidConfig, "parameter values do not match network '" + net.name + "'");
  }
  Instance inst;
  inst.params.resize(n);
  inst.bn.resize(n);
  {
    CategoryScope scope(MemoryCategory::Parameter);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& ps = shapes.parameters[i];
      const auto& lv = values.layers[i];
      const std::string label = layer_label(net, i);
      if (ps.weight) {
        inst.params[i].weight = Tensor::from_doubles(*ps.weight, net.dtype, lv.weight, flags.weight[i]);
        if (names) (*names)[inst.params[i].weight.id()] = label + ".weight";
      }
      if (ps.bias) {
        inst.params[i].bias = Tensor::from_doubles(*ps.bias, net.dtype, lv.bias, flags.bias[i]);
        if (names) (*names)[inst.params[i].bias.id()] = label + ".bias";
      }
      const LayerSpec& spec = net.layers[i];
      if (spec.kind == LayerKind::BatchNorm2d) {
        inst.bn[i] = layers::BatchNormState{lv.running_mean, lv.running_var, spec.eps, spec.momentum, spec.bn_mode};
      }
    }
  }
  CategoryScope scope(MemoryCategory::NetworkInput);
  inst.input = Tensor::from_doubles(net.input_shape, net.dtype, values.input, flags.input);
  if (names) (*names)[inst.input.id()] = "input";
  return inst;
}

Tensor apply_layer(const NetworkDescription& net, std::size_t i, const std::vector<const Tensor*>& in,
                   Instance& inst, Tape& tape) {
  const LayerSpec& s = net.layers[i];
  const Tensor& x = *in[0];
  switch (s.kind) {
    case LayerKind::Linear: return layers::linear(x, inst.params[i], s.policy, tape);
    case LayerKind::Conv2d: return layers::conv2d(x, inst.params[i], {s.stride, s.padding}, s.policy, tape);
    case LayerKind::ConvTranspose2d:
      return layers::conv_transpose2d(x, inst.params[i], {s.stride, s.padding}, s.policy, tape);
    case LayerKind::BatchNorm2d: return layers::batchnorm2d(x, inst.params[i], inst.bn[i], s.policy, tape);
    case LayerKind::LayerNorm: return layers::layernorm(x, inst.params[i], s.eps, s.policy, tape);
    case LayerKind::ReLU: return layers::relu(x, layers::relu_variant(s.policy), tape);
    case LayerKind::Dropout:
      return layers::dropout(x, {s.p, layers::dropout_variant(s.policy), dropout_seed(net, i)}, tape);
    case LayerKind::MaxPool2d: return layers::maxpool2d(x, {s.window, s.pool_stride}, tape);
    case LayerKind::Softmax: return layers::softmax(x, tape);
    case LayerKind::Add: return layers::add(x, *in[1], tape);
    case LayerKind::Matmul: return layers::matmul(x, *in[1], {s.transpose_b, s.scale}, tape);
  }
  throw Error(ErrorCode::UnknownLayerKind, std::string(layer_kind_name(s.kind)));
}

/// Runs every layer, releasing intermediates after their last consumer,
/// and returns the loss.
Tensor run_forward(const NetworkDescription& net, Instance& inst, Tape& tape,
                   std::unordered_map<TensorId, std::string>* names) {
  const std::size_t n = net.layers.size();
  const std::size_t last = n - 1;
  std::vector<Tensor> outputs(n);
  std::vector<int> remaining = consumer_counts(net);
  for (std::size_t i = 0; i < n; ++i) {
    tape.set_scope(static_cast<int>(i), layer_label(net, i));
    const auto srcs = layer_inputs(net, i);
    std::vector<const Tensor*> in;
    for (int src : srcs) in.push_back(src < 0 ? &inst.input : &outputs[src]);
    outputs[i] = apply_layer(net, i, in, inst, tape);
    if (names) (*names)[outputs[i].id()] = layer_label(net, i);
    for (int src : srcs) {
      if (src >= 0 && --remaining[src] == 0 && static_cast<std::size_t>(src) != last) outputs[src] = Tensor();
    }
    if (remaining[i] == 0 && i != last) outputs[i] = Tensor();
  }
  tape.set_scope(-1, "loss");
  Tensor loss = layers::projected_sum(outputs[last], loss_seed(net), tape);
  tape.clear_scope();
  outputs.clear();
  return loss;
}

struct SingleRun {
  RunResult result;
  double forward_seconds = 0.0;
  double backward_seconds = 0.0;
};

SingleRun run_once(const NetworkDescription& net, const PropagatedShapes& shapes, const Differentiability& flags,
                   const ParameterValues& values, bool do_backward, bool record_events) {
  Accountant accountant;
  accountant.set_record_events(record_events);
  ScopedAccountant installed(accountant);
  std::unordered_map<TensorId, std::string> names;
  // The trace starts empty, so the network input is its first allocation.
  Instance inst = instantiate(net, shapes, flags, values, &names);
  accountant.reset_peak();

  SingleRun run;
  RunResult& r = run.result;
  MemoryReport& rep = r.report;
  Tape tape;
  const auto forward_start = Clock::now();
  Tensor loss = run_forward(net, inst, tape, &names);
  run.forward_seconds = seconds_since(forward_start);

  rep.peak_bytes = accountant.peak();
  rep.peak_breakdown = accountant.peak_breakdown();
  rep.parameter_bytes = accountant.live_bytes(MemoryCategory::Parameter);
  rep.tape_bytes = tape.bytes().total;
  rep.tape_activation_bytes = tape.bytes().activation;
  rep.tape_parameter_bytes = tape.bytes().parameter;
  rep.tape_compact_bytes = tape.bytes().compact;
  if (record_events) r.forward_events = accountant.events();

  for (std::size_t idx = 0; idx < tape.nodes().size(); ++idx) {
    const TapeNode& node = tape.nodes()[idx];
    SavedRecord rec;
    rec.node = idx;
    rec.layer = node.layer;
    rec.op = node.op;
    rec.policy = node.policy;
    std::vector<const SavedValue*> sorted;
    for (const auto& v : node.saved) sorted.push_back(&v);
    std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->role() < b->role(); });
    for (const SavedValue* v : sorted) {
      rec.roles.push_back(v->role());
      rec.kinds.push_back(v->kind());
      rec.bytes.push_back(v->byte_cost());
      if (v->kind() == SavedKind::FullTensor) {
        auto it = names.find(v->tensor().id());
        rec.tensors.push_back(it == names.end() ? "?" : it->second);
      } else {
        rec.tensors.emplace_back();
      }
    }
    r.saved.push_back(std::move(rec));
  }

  r.loss = loss.item();
  r.loss_requires_grad = loss.requires_grad();
  rep.combined_peak_bytes = rep.peak_bytes;
  if (do_backward && r.loss_requires_grad) {
    const auto backward_start = Clock::now();
    GradStore grads = backward(tape, loss.id());
    run.backward_seconds = seconds_since(backward_start);
    r.unread = tape.unread_saves();
    rep.combined_peak_bytes = accountant.peak();

    auto take = [&](const Tensor& leaf, const std::string& name) {
      if (!leaf.defined() || !grads.contains(leaf.id())) return;
      const Tensor& g = grads.at(leaf.id());
      r.gradients.push_back({name, g.shape(), g.to_doubles()});
    };
    take(inst.input, "input");
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
      const std::string label = layer_label(net, i);
      take(inst.params[i].weight, label + ".weight");
      take(inst.params[i].bias, label + ".bias");
    }
  }
  return run;
}

}  // namespace

ParameterValues init_values(const NetworkDescription& net) {
  const auto shapes = propagate_shapes(net);
  ParameterValues values;
  values.input = normals(derive_seed(net.seed, kInputSalt), net.input_shape.numel(), 1.0, 0.0);
  values.layers.resize(net.layers.size());
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const LayerSpec& spec = net.layers[i];
    const auto& ps = shapes.parameters[i];
    auto& lv = values.layers[i];
    const std::uint64_t base = kLayerSalt + 4 * i;
    const bool norm = is_normalization(spec.kind);
    if (ps.weight) {
      const double sd = norm ? 0.1 : 1.0 / std::sqrt(static_cast<double>(fan_in(spec, *ps.weight)));
      lv.weight = normals(derive_seed(net.seed, base), ps.weight->numel(), sd, norm ? 1.0 : 0.0);
    }
    if (ps.bias) lv.bias = normals(derive_seed(net.seed, base + 1), ps.bias->numel(), 0.1, 0.0);
    if (spec.kind == LayerKind::BatchNorm2d) {
      const std::size_t c = ps.weight->numel();
      lv.running_mean = normals(derive_seed(net.seed, base + 2), c, 0.1, 0.0);
      Rng rng(derive_seed(net.seed, base + 3));
      lv.running_var.resize(c);
      for (auto& v : lv.running_var) v = 0.5 + rng.next_uniform();
    }
  }
  return values;
}

std::uint64_t dropout_seed(const NetworkDescription& net, std::size_t layer) {
  return derive_seed(net.seed, kDropoutSalt + layer);
}

std::uint64_t loss_seed(const NetworkDescription& net) { return derive_seed(net.seed, kLossSalt); }

std::string output_name(const NetworkDescription& net, int layer) {
  return layer < 0 ? "input" : layer_label(net, static_cast<std::size_t>(layer));
}

RunResult execute(const NetworkDescription& net, const Scenario& scenario, const ExecuteOptions& options) {
  const auto shapes = propagate_shapes(net);
  const auto flags = resolve_flags(net, scenario);
  ParameterValues owned;
  const ParameterValues* values = options.values;
  if (values == nullptr) {
    owned = init_values(net);
    values = &owned;
  }
  const int reps = std::max(1, options.repetitions);
  std::vector<double> forward_times, backward_times;
  RunResult result;
  for (int rep = 0; rep < reps; ++rep) {
    SingleRun run = run_once(net, shapes, flags, *values, options.backward, options.record_events && rep == 0);
    forward_times.push_back(run.forward_seconds);
    backward_times.push_back(run.backward_seconds);
    if (rep == 0) result = std::move(run.result);
  }
  MemoryReport& rep = result.report;
  rep.network = net.name;
  rep.scenario = scenario.name();
  rep.policy = policy_summary(net);
  rep.depth = static_cast<int>(net.layers.size());
  rep.forward_seconds = median(forward_times);
  rep.backward_seconds = median(backward_times);
  return result;
}

double forward_loss(const NetworkDescription& net, const ParameterValues& values) {
  const auto shapes = propagate_shapes(net);
  Differentiability off;
  off.weight.assign(net.layers.size(), false);
  off.bias.assign(net.layers.size(), false);
  Instance inst = instantiate(net, shapes, off, values, nullptr);
  Tape tape;
  return run_forward(net, inst, tape, nullptr).item();
}

}  // namespace memsave
