// Copyright (c) 2026, the memsave authors
// SPDX-License-Identifier: Apache-2.0
//
// memsave command line: probe sweeps, scenario runs, gradient checks and
// graph export. Exit codes: 0 success, 1 verification failure, 2 usage error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "memsave/builtins.hpp"
#include "memsave/executor.hpp"
#include "memsave/gradcheck.hpp"
#include "memsave/planner.hpp"
#include "memsave/report.hpp"

namespace {

using namespace memsave;

constexpr int kOk = 0;
constexpr int kVerificationFailed = 1;
constexpr int kUsage = 2;

std::uint64_t default_seed() {
  if (const char* env = std::getenv("MEMSAVE_SEED")) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(env, &used);
      if (used == std::string(env).size()) return v;
    } catch (const std::exception&) {
    }
    throw Error(ErrorCode::InvalidConfig, std::string("MEMSAVE_SEED is not an unsigned integer: '") + env + "'");
  }
  return 0;
}

struct NetOptions {
  std::string net;
  int depth = 0;
  bool tiny = false;
  bool bn_eval = false;
  std::optional<std::uint64_t> seed;
};

void add_net_options(CLI::App* cmd, NetOptions& o) {
  cmd->add_option("--net", o.net,
                  "builtin (deep_cnn, bottleneck, mlp, attention), probe:<layer>[:depth], or a JSON file")
      ->required();
  cmd->add_option("--depth", o.depth, "depth / block count for builtins and probe chains");
  cmd->add_flag("--tiny", o.tiny, "small builtin preset");
  cmd->add_flag("--bn-eval", o.bn_eval, "batch norm layers in eval mode (bottleneck)");
  cmd->add_option("--seed", o.seed, "network seed (default: MEMSAVE_SEED or 0)");
}

NetworkDescription resolve_net(const NetOptions& o, Dtype dtype = Dtype::F32) {
  NetworkDescription net;
  if (o.net.starts_with("probe:")) {
    std::string kind = o.net.substr(6);
    int depth = o.depth > 0 ? o.depth : 1;
    if (const auto colon = kind.find(':'); colon != std::string::npos) {
      depth = std::stoi(kind.substr(colon + 1));
      kind = kind.substr(0, colon);
    }
    net = builtins::probe_chain(kind, depth, dtype);
    net.seed = o.seed.value_or(default_seed());
  } else if (std::filesystem::exists(o.net)) {
    net = load_network(o.net);
    if (o.seed) net.seed = *o.seed;
  } else {
    builtins::BuiltinOptions b;
    b.depth = o.depth;
    b.tiny = o.tiny;
    b.bn_eval = o.bn_eval;
    b.dtype = dtype;
    net = builtins::builtin(o.net, b);
    net.seed = o.seed.value_or(default_seed());
  }
  return net;
}

std::vector<Policy> policies_from(const std::string& name) {
  if (name == "both") return {Policy::Naive, Policy::MemSave};
  return {parse_policy(name)};
}

/// Writes to `path`, or stdout when it is empty or "-".
void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot open " + path + " for writing");
  out << text;
  if (!out) throw Error(ErrorCode::Io, "write failed: " + path);
}

bool same_plan(const StoragePlan& p, const RunResult& r, std::string& why) {
  std::ostringstream msg;
  if (p.tape_bytes != r.report.tape_bytes) msg << " tape " << p.tape_bytes << " planned vs " << r.report.tape_bytes;
  if (p.peak_bytes != r.report.peak_bytes) msg << " peak " << p.peak_bytes << " planned vs " << r.report.peak_bytes;
  why = msg.str();
  return why.empty();
}

// --- probe ------------------------------------------------------------------

struct ProbeArgs {
  std::string layer;
  int min_depth = 1;
  int max_depth = 12;
  std::string policy = "both";
  std::string scenario_set = "fig1";
  int k = 4;
  int reps = 1;
  bool plan_only = false;
  bool forward_only = false;
  bool no_timing = false;
  std::string out;
};

int run_probe(const ProbeArgs& a) {
  ProbeOptions o;
  o.min_depth = a.min_depth;
  o.max_depth = a.max_depth;
  o.scenarios = probe_scenarios(a.scenario_set, a.k);
  o.policies = policies_from(a.policy);
  o.execute = !a.plan_only;
  o.backward = !a.forward_only;
  o.repetitions = a.reps;
  const auto rows = probe_sweep(a.layer, o);

  std::vector<CsvRow> csv;
  int mismatches = 0;
  for (const auto& row : rows) {
    if (row.executed && (row.planned.tape_bytes != row.tape_bytes || row.planned.peak_bytes != row.peak_bytes)) {
      ++mismatches;
      std::cerr << "plan/execution mismatch: " << row.layer << " depth " << row.depth << " " << row.scenario << " "
                << row.policy << "\n";
    }
    CsvRow c;
    c.net = "probe";
    c.layer = row.layer;
    c.depth = row.depth;
    c.scenario = row.scenario;
    c.policy = row.policy;
    c.tape_bytes = row.tape_bytes;
    c.peak_bytes = row.peak_bytes;
    if (!a.no_timing) {
      c.forward_ms = row.forward_seconds * 1e3;
      c.backward_ms = row.backward_seconds * 1e3;
    }
    csv.push_back(c);
  }
  std::ostringstream text;
  write_csv(text, csv);
  emit(a.out, text.str());
  return mismatches == 0 ? kOk : kVerificationFailed;
}

// --- scenario ---------------------------------------------------------------

struct ScenarioArgs {
  NetOptions net;
  std::string scenario = "input";
  std::string policy = "both";
  std::string ablate;
  int reps = 5;
  bool no_timing = false;
  std::string out;
};

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

int run_scenario(const ScenarioArgs& a) {
  const NetworkDescription base = resolve_net(a.net);
  const Scenario scenario = Scenario::parse(a.scenario);

  // (label, network) pairs; the label fills the CSV layer column with the
  // kinds that run the memory-saving variant.
  std::vector<std::pair<std::string, NetworkDescription>> variants;
  if (!a.ablate.empty()) {
    variants.emplace_back("none", convert_network(base, Policy::Naive));
    std::set<LayerKind> swapped;
    std::string label;
    for (const auto& name : split_commas(a.ablate)) {
      swapped.insert(parse_layer_kind(name));
      label += (label.empty() ? "" : "+") + name;
      variants.emplace_back(label, convert_network(variants.front().second, Policy::MemSave, swapped));
    }
  } else {
    for (Policy p : policies_from(a.policy)) {
      variants.emplace_back(p == Policy::Naive ? "none" : "all", convert_network(base, p));
    }
  }

  std::vector<CsvRow> csv;
  int failures = 0;
  for (const auto& [label, net] : variants) {
    const StoragePlan planned = plan(net, scenario);
    ExecuteOptions eo;
    eo.repetitions = a.reps;
    const RunResult run = execute(net, scenario, eo);
    std::string why;
    if (!same_plan(planned, run, why)) {
      ++failures;
      std::cerr << "plan/execution mismatch for " << label << ":" << why << "\n";
    }
    for (const auto& u : run.unread) {
      if (u.policy == Policy::MemSave) {
        ++failures;
        std::cerr << "unread saved value: layer " << u.layer << " " << op_name(u.op) << " " << role_name(u.role)
                  << "\n";
      }
    }
    CsvRow row = csv_row(run.report, label);
    if (a.no_timing) row.forward_ms = row.backward_ms = 0.0;
    csv.push_back(row);
  }
  std::ostringstream text;
  write_csv(text, csv);
  emit(a.out, text.str());
  return failures == 0 ? kOk : kVerificationFailed;
}

// --- gradcheck --------------------------------------------------------------

struct GradcheckArgs {
  NetOptions net;
  std::string scenario = "everything";
  std::string dtype = "f64";
  double tol = 1e-5;
  bool full_size = false;
};

int run_gradcheck(GradcheckArgs a) {
  if (parse_dtype(a.dtype) != Dtype::F64) throw Error(ErrorCode::InvalidConfig, "gradcheck runs in f64 only");
  if (!a.full_size) a.net.tiny = true;
  const NetworkDescription base = resolve_net(a.net, Dtype::F64);
  const Scenario scenario = Scenario::parse(a.scenario);

  const auto planned = plan(base, scenario);
  std::size_t checked = 0;
  for (const auto& t : planned.tensors) {
    if (t.requires_grad && (t.parameter || t.name == "input")) checked += t.shape.numel();
  }
  if (checked >= 10000) {
    throw Error(ErrorCode::InvalidConfig,
                std::to_string(checked) + " values to check; finite differences need fewer than 10^4");
  }

  GradcheckOptions o;
  o.tolerance = a.tol;
  bool passed = true;
  for (Policy p : {Policy::Naive, Policy::MemSave}) {
    const auto r = gradcheck(convert_network(base, p), scenario, o);
    std::cout << policy_name(p) << ": " << r.checked << " values, max relative error " << r.max_error
              << (r.passed ? " ok" : " FAILED") << "\n";
    if (!r.passed) {
      std::cout << "  worst: " << r.worst.name << "[" << r.worst.index << "] analytic " << r.worst.analytic
                << " numeric " << r.worst.numeric << "\n";
    }
    passed = passed && r.passed;
  }
  return passed ? kOk : kVerificationFailed;
}

// --- graph ------------------------------------------------------------------

struct GraphArgs {
  NetOptions net;
  std::string scenario = "input";
  std::string policy = "memsave";
  std::string out;
};

int run_graph(const GraphArgs& a) {
  const NetworkDescription net = convert_network(resolve_net(a.net), parse_policy(a.policy));
  emit(a.out, export_dot(net, plan(net, Scenario::parse(a.scenario))));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"memsave: differentiability-aware tape storage"};
  app.require_subcommand(1);

  ProbeArgs probe;
  auto* p = app.add_subcommand("probe", "sweep homogeneous layer chains over depth");
  p->add_option("--layer", probe.layer, "layer kind")
      ->required()
      ->check(CLI::IsMember(builtins::probe_kinds()));
  p->add_option("--min-depth", probe.min_depth)->check(CLI::PositiveNumber);
  p->add_option("--max-depth", probe.max_depth)->check(CLI::PositiveNumber);
  p->add_option("--policy", probe.policy)->check(CLI::IsMember({"naive", "memsave", "both"}));
  p->add_option("--scenario-set", probe.scenario_set)->check(CLI::IsMember({"fig1", "extended"}));
  p->add_option("--k", probe.k, "layer index for from:k / only:k")->check(CLI::PositiveNumber);
  p->add_option("--reps", probe.reps, "timing repetitions")->check(CLI::PositiveNumber);
  p->add_flag("--plan-only", probe.plan_only, "skip execution");
  p->add_flag("--forward-only", probe.forward_only, "execute the forward pass only (backward_ms is 0)");
  p->add_flag("--no-timing", probe.no_timing, "write 0 in the timing columns");
  p->add_option("--out", probe.out, "CSV path (default stdout)");

  ScenarioArgs scen;
  auto* s = app.add_subcommand("scenario", "run one network under a scenario");
  add_net_options(s, scen.net);
  s->add_option("--scenario", scen.scenario);
  auto* pol = s->add_option("--policy", scen.policy)->check(CLI::IsMember({"naive", "memsave", "both"}));
  s->add_option("--ablate-kinds", scen.ablate, "progressively swap these kinds, e.g. conv2d,relu")->excludes(pol);
  s->add_option("--reps", scen.reps, "timing repetitions")->check(CLI::PositiveNumber);
  s->add_flag("--no-timing", scen.no_timing, "write 0 in the timing columns");
  s->add_option("--out", scen.out, "CSV path (default stdout)");

  GradcheckArgs gc;
  auto* g = app.add_subcommand("gradcheck", "compare gradients with central differences");
  add_net_options(g, gc.net);
  g->add_option("--scenario", gc.scenario);
  g->add_option("--dtype", gc.dtype);
  g->add_option("--tol", gc.tol)->check(CLI::PositiveNumber);
  g->add_flag("--full-size", gc.full_size, "use the full builtin preset instead of the tiny one");

  GraphArgs graph;
  auto* d = app.add_subcommand("graph", "export the planned graph as DOT");
  add_net_options(d, graph.net);
  d->add_option("--scenario", graph.scenario);
  d->add_option("--policy", graph.policy)->check(CLI::IsMember({"naive", "memsave"}));
  d->add_option("--out", graph.out, "DOT path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (p->parsed()) return run_probe(probe);
    if (s->parsed()) return run_scenario(scen);
    if (g->parsed()) return run_gradcheck(gc);
    if (d->parsed()) return run_graph(graph);
  } catch (const memsave::Error& e) {
    std::cerr << "memsave: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "memsave: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}
