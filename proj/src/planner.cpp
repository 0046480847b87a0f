// Copyright (c) 2026, the memsave authors
// SPDX-License-Identifier: Apache-2.0

#include "memsave/planner.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <sstream>

#include "memsave/builtins.hpp"
#include "memsave/executor.hpp"

namespace memsave {

namespace {

struct SaveCost {
  SavedKind kind;
  std::size_t bytes;
};

// Compact save sizes, mirroring what the layers allocate.
SaveCost compact_cost(SavedRole role, const Shape& out, Dtype dtype) {
  const std::size_t w = dtype_width(dtype);
  switch (role) {
    case SavedRole::OutputMask: return {SavedKind::BitMask, bit_mask_bytes(out.numel())};
    case SavedRole::DropMask: return {SavedKind::ByteMask, out.numel()};
    case SavedRole::DropSeed:
    case SavedRole::ProjectionSeed: return {SavedKind::RngSeed, kRngSeedBytes};
    case SavedRole::ArgmaxIndices: return {SavedKind::IndexMap, out.numel() * kIndexBytes};
    case SavedRole::BatchStats: return {SavedKind::SmallStats, 2 * static_cast<std::size_t>(out[1]) * w};
    case SavedRole::RowStats: return {SavedKind::SmallStats, out.numel() / static_cast<std::size_t>(out.back()) * w};
    default: break;
  }
  throw Error(ErrorCode::InvalidConfig, "role " + std::string(role_name(role)) + " is not compact");
}

}  // namespace

StoragePlan plan(const NetworkDescription& net, const Scenario& scenario) {
  const auto shapes = propagate_shapes(net);
  const auto flags = resolve_flags(net, scenario);
  const std::size_t n = net.layers.size();
  const std::size_t last = n - 1;

  StoragePlan p;
  p.network = net.name;
  p.scenario = scenario.name();
  p.policy = policy_summary(net);

  std::map<std::string, std::size_t> tensor_index;
  auto add_tensor = [&](std::string name, const Shape& shape, bool rg, bool parameter) {
    tensor_index[name] = p.tensors.size();
    p.tensors.push_back({std::move(name), shape, byte_size(shape, net.dtype), rg, parameter, false});
  };
  add_tensor("input", net.input_shape, flags.input, false);

  std::vector<bool> out_rg(n, false);
  auto rg_of = [&](int src) { return src < 0 ? flags.input : out_rg[src]; };

  // Live-set replay: the input is allocated before measurement starts.
  std::size_t live = byte_size(net.input_shape, net.dtype);
  std::size_t peak = live;
  std::set<std::string> held;  // full tensors referenced by the tape
  std::vector<int> remaining = consumer_counts(net);
  std::vector<bool> alive(n, false);

  auto release = [&](int src) {
    if (src < 0 || static_cast<std::size_t>(src) == last || !alive[src]) return;
    alive[src] = false;
    if (!held.contains(output_name(net, src))) live -= byte_size(shapes.outputs[src], net.dtype);
  };

  auto record_saves = [&](PlannedNode& node, const std::vector<SavedRole>& roles, const Shape& out,
                          const std::vector<std::string>& data_inputs, const std::string& weight) {
    for (SavedRole role : roles) {
      PlannedSave s;
      s.role = role;
      std::string tensor;
      switch (role) {
        case SavedRole::Input:
        case SavedRole::Lhs: tensor = data_inputs.at(0); break;
        case SavedRole::Rhs: tensor = data_inputs.at(1); break;
        case SavedRole::Weight: tensor = weight; break;
        case SavedRole::Output: tensor = node.output; break;
        default: break;
      }
      if (!tensor.empty()) {
        const PlannedTensor& t = p.tensors.at(tensor_index.at(tensor));
        s.kind = SavedKind::FullTensor;
        s.bytes = t.bytes;
        s.tensor = tensor;
        s.parameter = t.parameter;
        if (!held.contains(tensor)) {
          held.insert(tensor);
          p.tape_bytes += t.bytes;
          (t.parameter ? p.tape_parameter_bytes : p.tape_activation_bytes) += t.bytes;
        }
      } else {
        const SaveCost c = compact_cost(role, out, net.dtype);
        s.kind = c.kind;
        s.bytes = c.bytes;
        p.tape_bytes += c.bytes;
        p.tape_compact_bytes += c.bytes;
        live += c.bytes;
      }
      node.saves.push_back(std::move(s));
    }
  };

  for (std::size_t i = 0; i < n; ++i) {
    const LayerSpec& spec = net.layers[i];
    const auto srcs = layer_inputs(net, i);
    const auto& ps = shapes.parameters[i];
    const std::string label = layer_label(net, i);

    PlannedNode node;
    node.layer = static_cast<int>(i);
    node.label = label;
    node.op = op_kind(spec.kind);
    node.policy = has_memsave_variant(node.op) ? spec.policy : Policy::Naive;
    std::vector<std::string> data_inputs;
    for (int src : srcs) data_inputs.push_back(output_name(net, src));
    node.inputs = data_inputs;

    StorageQuery q;
    q.op = node.op;
    q.policy = node.policy;
    q.bn_mode = spec.bn_mode;
    q.input_rg = rg_of(srcs[0]);
    std::string weight_name;
    if (ps.weight) {
      weight_name = label + ".weight";
      add_tensor(weight_name, *ps.weight, flags.weight[i], true);
      node.inputs.push_back(weight_name);
      q.weight_rg = flags.weight[i];
    }
    if (ps.bias) {
      add_tensor(label + ".bias", *ps.bias, flags.bias[i], true);
      node.inputs.push_back(label + ".bias");
      q.bias_rg = flags.bias[i];
    }
    if (srcs.size() > 1) q.weight_rg = rg_of(srcs[1]);

    out_rg[i] = q.output_rg();
    node.output = label;
    add_tensor(label, shapes.outputs[i], out_rg[i], false);
    live += byte_size(shapes.outputs[i], net.dtype);
    alive[i] = true;
    node.recorded = out_rg[i];
    if (node.recorded) record_saves(node, required_saves(q), shapes.outputs[i], data_inputs, weight_name);
    peak = std::max(peak, live);

    for (int src : srcs) {
      if (src >= 0 && --remaining[src] == 0) release(src);
    }
    if (remaining[i] == 0) release(static_cast<int>(i));
    p.nodes.push_back(std::move(node));
  }

  // Loss: a scalar of the network dtype, plus its projection seed.
  PlannedNode loss;
  loss.label = "loss";
  loss.op = OpKind::ProjectedSum;
  loss.inputs = {output_name(net, static_cast<int>(last))};
  loss.output = "loss";
  loss.recorded = out_rg[last];
  add_tensor("loss", Shape{}, loss.recorded, false);
  live += dtype_width(net.dtype);
  if (loss.recorded) record_saves(loss, {SavedRole::ProjectionSeed}, Shape{}, loss.inputs, "");
  peak = std::max(peak, live);
  p.nodes.push_back(std::move(loss));
  p.loss_requires_grad = out_rg[last];

  for (auto& t : p.tensors) {
    t.saved = held.contains(t.name);
    if (t.parameter) p.parameter_bytes += t.bytes;
  }
  p.peak_bytes = peak;
  return p;
}

// --- DOT --------------------------------------------------------------------

namespace {

std::string dot_quote(std::string_view s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  out += '"';
  return out;
}

}  // namespace

std::string export_dot(const NetworkDescription& net, const StoragePlan& p) {
  std::ostringstream dot;
  dot << "digraph " << dot_quote(net.name) << " {\n";
  dot << "  rankdir=TB;\n";
  dot << "  node [fontname=\"Helvetica\", fontsize=10];\n";
  dot << "  label=" << dot_quote(net.name + " / " + p.scenario + " / " + p.policy) << ";\n";

  for (const auto& t : p.tensors) {
    std::string text = t.name + "\\n" + t.shape.to_string() + " " + std::string(dtype_name(net.dtype));
    if (t.requires_grad) text += "\\nrequires_grad";
    std::string attrs = "shape=box";
    if (t.saved) {
      text += "\\n[saved tensor] " + std::to_string(t.bytes) + " B";
      attrs += ", style=filled, fillcolor=\"#f4cccc\"";
    } else if (t.parameter) {
      attrs += ", style=dashed";
    }
    // Labels already carry DOT escapes, so they bypass dot_quote().
    dot << "  " << dot_quote("t:" + t.name) << " [" << attrs << ", label=\"" << text << "\"];\n";
  }
  for (std::size_t i = 0; i < p.nodes.size(); ++i) {
    const PlannedNode& node = p.nodes[i];
    const std::string id = "op:" + std::to_string(i);
    std::string text = node.label + "\\n" + std::string(op_name(node.op));
    if (has_memsave_variant(node.op)) text += " (" + std::string(policy_name(node.policy)) + ")";
    if (!node.recorded) text += "\\nnot recorded";
    dot << "  " << dot_quote(id) << " [shape=ellipse, label=\"" << text << "\"];\n";
    for (const auto& in : node.inputs) dot << "  " << dot_quote("t:" + in) << " -> " << dot_quote(id) << ";\n";
    dot << "  " << dot_quote(id) << " -> " << dot_quote("t:" + node.output) << ";\n";
    for (const auto& s : node.saves) {
      if (s.kind == SavedKind::FullTensor) continue;
      const std::string sid = id + ":" + std::string(role_name(s.role));
      dot << "  " << dot_quote(sid) << " [shape=note, label=\"" << role_name(s.role) << "\\n"
          << saved_kind_name(s.kind) << " " << s.bytes << " B\"];\n";
      dot << "  " << dot_quote(id) << " -> " << dot_quote(sid) << " [style=dotted];\n";
    }
  }
  dot << "}\n";
  return dot.str();
}

// --- probing ----------------------------------------------------------------

std::vector<Scenario> probe_scenarios(std::string_view set, int k) {
  if (k < 1) throw Error(ErrorCode::InvalidConfig, "probe layer index must be at least 1");
  std::vector<Scenario> out = {Scenario::all(), Scenario::none(), Scenario::from(k), Scenario::only(k)};
  if (set == "fig1") return out;
  if (set == "extended") {
    out.push_back(Scenario::input());
    out.push_back(Scenario::norm());
    return out;
  }
  throw Error(ErrorCode::InvalidConfig, "unknown scenario set '" + std::string(set) + "'");
}

std::vector<ProbeRow> probe_sweep(std::string_view layer, const ProbeOptions& o) {
  const auto kinds = builtins::probe_kinds();
  if (std::find(kinds.begin(), kinds.end(), layer) == kinds.end()) {
    throw Error(ErrorCode::InvalidConfig, "cannot probe layer '" + std::string(layer) + "'");
  }
  if (o.min_depth < 1 || o.max_depth < o.min_depth) throw Error(ErrorCode::InvalidConfig, "invalid depth range");
  std::vector<ProbeRow> rows;
  for (int depth = o.min_depth; depth <= o.max_depth; ++depth) {
    const NetworkDescription base = builtins::probe_chain(layer, depth, o.dtype);
    for (const auto& scenario : o.scenarios) {
      for (Policy policy : o.policies) {
        const NetworkDescription net = convert_network(base, policy);
        ProbeRow row;
        row.layer = std::string(layer);
        row.depth = depth;
        row.scenario = scenario.name();
        row.policy = std::string(policy_name(policy));
        row.planned = plan(net, scenario);
        if (o.execute) {
          ExecuteOptions eo;
          eo.repetitions = o.repetitions;
          eo.backward = o.backward;
          const RunResult run = execute(net, scenario, eo);
          row.executed = true;
          row.tape_bytes = run.report.tape_bytes;
          row.tape_activation_bytes = run.report.tape_activation_bytes;
          row.peak_bytes = run.report.peak_bytes;
          row.forward_seconds = run.report.forward_seconds;
          row.backward_seconds = run.report.backward_seconds;
        } else {
          row.tape_bytes = row.planned.tape_bytes;
          row.tape_activation_bytes = row.planned.tape_activation_bytes;
          row.peak_bytes = row.planned.peak_bytes;
        }
        rows.push_back(std::move(row));
      }
    }
  }
  return rows;
}

}  // namespace memsave
