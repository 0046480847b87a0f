// Copyright (c) 2026, the memsave authors
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "memsave/builtins.hpp"
#include "memsave/error.hpp"
#include "memsave/executor.hpp"
#include "memsave/gradcheck.hpp"
#include "memsave/layers.hpp"
#include "memsave/planner.hpp"
#include "memsave/report.hpp"
#include "memsave/storage_rules.hpp"
#include "support/corpus.hpp"
#include "support/layer_cases.hpp"

namespace memsave {
namespace {

constexpr std::size_t S = 131072;
constexpr std::size_t kKernel = 2304;
constexpr int kProbeK = 4;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = true;
  std::string detail;
  int failures = 0;
  std::string first_failure;

  void check(bool ok, const std::string& what) {
    if (ok) return;
    pass = false;
    if (failures++ == 0) first_failure = what;
  }
};

template <typename... Args>
std::string fmt(const char* f, Args... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// --- 1 and 10: depth sweep of the conv2d chain ----------------------------------

struct Sweep {
  std::vector<ProbeRow> rows;
  double seconds = 0.0;
};

const Sweep& conv_sweep() {
  static const Sweep sweep = [] {
    ProbeOptions o;
    o.min_depth = 1;
    o.max_depth = 12;
    o.scenarios = probe_scenarios("fig1", kProbeK);
    o.backward = false;
    const auto t0 = Clock::now();
    Sweep s;
    s.rows = probe_sweep("conv2d", o);
    s.seconds = seconds_since(t0);
    return s;
  }();
  return sweep;
}

const ProbeRow& find_row(const std::vector<ProbeRow>& rows, int depth, const std::string& scenario,
                         const std::string& policy) {
  for (const auto& r : rows)
    if (r.depth == depth && r.scenario == scenario && r.policy == policy) return r;
  throw Error(ErrorCode::InvalidConfig, "no sweep row for " + scenario + "/" + policy);
}

Verdict depth_sweep() {
  const Sweep& sweep = conv_sweep();
  Verdict v;
  const std::string from = "from:" + std::to_string(kProbeK), only = "only:" + std::to_string(kProbeK);
  for (int L = 1; L <= 12; ++L) {
    const std::size_t l = static_cast<std::size_t>(L);
    for (const char* policy : {"naive", "memsave"}) {
      const auto& all = find_row(sweep.rows, L, "all", policy);
      v.check(all.tape_activation_bytes == l * S, fmt("all %s L=%d tape %zu", policy, L, all.tape_activation_bytes));
      const auto& none = find_row(sweep.rows, L, "none", policy);
      const std::size_t expect = L == 1 ? 2 * S : 3 * S;
      const std::size_t off = none.peak_bytes > expect ? none.peak_bytes - expect : expect - none.peak_bytes;
      v.check(off <= kKernel, fmt("none %s L=%d peak %zu", policy, L, none.peak_bytes));
    }
    const auto& n_only = find_row(sweep.rows, L, only, "naive");
    const auto& n_from = find_row(sweep.rows, L, from, "naive");
    const auto& m_only = find_row(sweep.rows, L, only, "memsave");
    const std::size_t n_expect = L >= kProbeK ? (l - 3) * S : 0;
    const std::size_t m_expect = L >= kProbeK ? S : 0;
    v.check(n_only.tape_activation_bytes == n_expect, fmt("naive only L=%d tape %zu", L, n_only.tape_activation_bytes));
    v.check(n_from.tape_activation_bytes == n_expect, fmt("naive from L=%d tape %zu", L, n_from.tape_activation_bytes));
    v.check(n_only.tape_bytes == n_from.tape_bytes, fmt("naive only != from at L=%d", L));
    v.check(m_only.tape_activation_bytes == m_expect, fmt("memsave only L=%d tape %zu", L, m_only.tape_activation_bytes));
  }
  v.check(sweep.seconds < 10.0, fmt("sweep took %.2f s", sweep.seconds));
  v.detail = fmt("%zu rows, %.2f s", sweep.rows.size(), sweep.seconds);
  return v;
}

Verdict curve_shapes() {
  // Round trip through the CSV the CLI writes for the same sweep.
  std::vector<CsvRow> csv;
  for (const auto& r : conv_sweep().rows) {
    csv.push_back({"probe", r.layer, r.depth, r.scenario, r.policy, r.tape_bytes, r.peak_bytes,
                   r.forward_seconds * 1e3, r.backward_seconds * 1e3});
  }
  std::ostringstream text;
  write_csv(text, csv);
  const auto rows = parse_csv(text.str());

  // Depths past the first selected layer, where every curve is linear.
  std::map<std::pair<std::string, std::string>, std::pair<std::vector<double>, std::vector<double>>> curves;
  for (const auto& r : rows) {
    if (r.depth <= kProbeK) continue;
    auto& [x, y] = curves[{r.scenario, r.policy}];
    x.push_back(r.depth);
    y.push_back(static_cast<double>(r.peak_bytes));
  }
  const std::set<std::pair<std::string, std::string>> flat = {
      {"none", "naive"}, {"none", "memsave"}, {"only:" + std::to_string(kProbeK), "memsave"}};
  Verdict v;
  int sloped = 0;
  for (const auto& [key, xy] : curves) {
    const auto fit = fit_line(xy.first, xy.second);
    const std::string name = key.first + "/" + key.second;
    if (flat.contains(key)) {
      v.check(fit.slope == 0.0, fmt("%s slope %.3f, expected 0", name.c_str(), fit.slope));
    } else {
      ++sloped;
      v.check(std::abs(fit.slope - static_cast<double>(S)) <= 0.01 * S,
              fmt("%s slope %.1f, expected %zu", name.c_str(), fit.slope, S));
    }
  }
  v.check(curves.size() == 8, fmt("%zu curves", curves.size()));
  v.detail = fmt("%zu curves, %d sloped, %zu flat", curves.size(), sloped, curves.size() - sloped);
  return v;
}

// --- 2: storage matrix --------------------------------------------------------

OpKind table_op(oracle::TableLayer l) {
  switch (l) {
    case oracle::TableLayer::Linear: return OpKind::Linear;
    case oracle::TableLayer::Conv2d: return OpKind::Conv2d;
    case oracle::TableLayer::ConvTranspose2d: return OpKind::ConvTranspose2d;
    default: return OpKind::BatchNorm2d;
  }
}

Verdict layer_matrix() {
  using oracle::TableLayer;
  Verdict v;
  int cells = 0;
  for (TableLayer l : oracle::table_layers()) {
    const std::string name = oracle::table_layer_name(l);
    std::vector<std::pair<bool, bool>> differing, kernel_only;
    for (bool x_rg : {false, true})
      for (bool w_rg : {false, true}) {
        std::set<SavedRole> by_policy[2];
        for (Policy policy : {Policy::Naive, Policy::MemSave}) {
          ++cells;
          const auto run = oracle::run_table_layer(l, policy, x_rg, w_rg);
          StorageQuery q{table_op(l), policy, x_rg, w_rg, false,
                         l == TableLayer::BatchNormEval ? BatchNormMode::Eval : BatchNormMode::Train};
          const auto rule = required_saves(q);
          const std::string cell = name + " " + std::string(policy_name(policy)) + fmt(" (%d,%d)", x_rg, w_rg);
          v.check(run.roles == std::set<SavedRole>(rule.begin(), rule.end()), cell + " differs from the rule table");
          v.check(run.roles == oracle::expected_roles(l, policy, x_rg, w_rg), cell + " differs from the hand table");
          v.check(run.aliases_leaves && run.stats_compact, cell + " saves copies");
          by_policy[policy == Policy::MemSave] = run.roles;
        }
        // The kernel is a resident parameter; compare what the tape adds on top.
        std::set<SavedRole> activations[2];
        for (int i = 0; i < 2; ++i)
          for (SavedRole r : by_policy[i])
            if (r != SavedRole::Weight) activations[i].insert(r);
        if (activations[0] != activations[1]) {
          differing.emplace_back(x_rg, w_rg);
        } else if (by_policy[0] != by_policy[1]) {
          kernel_only.emplace_back(x_rg, w_rg);
        }
      }
    const bool one_cell = differing == std::vector<std::pair<bool, bool>>{{true, false}};
    if (l == TableLayer::Linear || l == TableLayer::BatchNormTrain) {
      v.check(differing.empty() && kernel_only.empty(), name + ": policies differ");
    } else {
      v.check(one_cell, name + ": policies must differ exactly at (1,0)");
      v.check(kernel_only == std::vector<std::pair<bool, bool>>{{false, true}},
              name + ": unexpected kernel-only difference");
    }
  }
  v.detail = fmt("%d cells; (0,1) differs only in the saved kernel", cells);
  return v;
}

// --- 3: gradients ---------------------------------------------------------------

Verdict gradients() {
  const auto t0 = Clock::now();
  Verdict v;
  double worst = 0.0;
  std::string worst_name;
  int runs = 0;
  for (const auto& gc : oracle::grad_cases()) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto values = oracle::case_values(gc, seed);
      for (Policy policy : {Policy::Naive, Policy::MemSave}) {
        const auto g = oracle::case_gradients(gc, values, policy);
        const double err = oracle::case_numeric_error(gc, values, g.grads, 1e-6);
        ++runs;
        if (err > worst) {
          worst = err;
          worst_name = gc.name;
        }
        v.check(err <= 1e-5, fmt("%s seed %llu error %.3g", gc.name.c_str(), static_cast<unsigned long long>(seed), err));
      }
    }
  }
  for (const auto& name : builtins::builtin_names()) {
    for (bool bn_eval : {false, true}) {
      if (bn_eval && name != "bottleneck") continue;
      for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto base = builtins::builtin(name, {.tiny = true, .bn_eval = bn_eval, .dtype = Dtype::F64});
        base.seed = seed;
        for (Policy policy : {Policy::Naive, Policy::MemSave}) {
          const auto r = gradcheck(convert_network(base, policy), Scenario::everything(),
                                   {.step = 1e-6, .tolerance = 1e-5, .floor = 1e-3});
          ++runs;
          if (r.max_error > worst) {
            worst = r.max_error;
            worst_name = name;
          }
          v.check(r.passed, fmt("%s seed %llu error %.3g at %s", name.c_str(), static_cast<unsigned long long>(seed),
                                r.max_error, r.worst.name.c_str()));
        }
      }
    }
  }
  const double secs = seconds_since(t0);
  v.check(secs < 60.0, fmt("took %.1f s", secs));
  v.detail = fmt("%d runs, worst %.2e (%s), %.1f s", runs, worst, worst_name.c_str(), secs);
  return v;
}

// --- 4: policy equivalence ----------------------------------------------------

Verdict policy_equivalence() {
  Verdict v;
  double worst = 0.0;
  int runs = 0;
  for (const auto& name : builtins::builtin_names()) {
    for (bool bn_eval : {false, true}) {
      const auto base = builtins::builtin(name, {.tiny = true, .bn_eval = bn_eval, .dtype = Dtype::F64});
      for (const auto& s : oracle::corpus_scenarios()) {
        const auto n = execute(convert_network(base, Policy::Naive), s);
        const auto m = execute(convert_network(base, Policy::MemSave), s);
        ++runs;
        const std::string id = name + (bn_eval ? "_eval/" : "/") + s.name();
        v.check(n.gradients.size() == m.gradients.size(), id + ": gradient sets differ");
        for (std::size_t i = 0; i < std::min(n.gradients.size(), m.gradients.size()); ++i) {
          const auto& a = n.gradients[i].values;
          const auto& b = m.gradients[i].values;
          v.check(a.size() == b.size() && n.gradients[i].name == m.gradients[i].name, id + ": gradient shapes differ");
          for (std::size_t j = 0; j < std::min(a.size(), b.size()); ++j) worst = std::max(worst, std::abs(a[j] - b[j]));
        }
      }
    }
  }
  v.check(worst <= 1e-12, fmt("max difference %.3g", worst));
  v.detail = fmt("%d net/scenario pairs, max |naive - memsave| = %.3g", runs, worst);
  return v;
}

// --- 5: bottleneck ablation -------------------------------------------------------

struct Criterion5 {
  Verdict a, b, c;
};

Criterion5 bottleneck_interaction() {
  const auto net = builtins::builtin("bottleneck");
  const auto naive = convert_network(net, Policy::Naive);
  const auto plus_conv = convert_network(naive, Policy::MemSave, std::set{LayerKind::Conv2d});
  const auto plus_relu = convert_network(plus_conv, Policy::MemSave, std::set{LayerKind::ReLU});
  const ExecuteOptions fwd{.backward = false};
  const auto r0 = execute(naive, Scenario::input(), fwd).report;
  const auto r1 = execute(plus_conv, Scenario::input(), fwd).report;
  const auto r2 = execute(plus_relu, Scenario::input(), fwd).report;

  Criterion5 out;
  const double rel = std::abs(static_cast<double>(r1.tape_bytes) - static_cast<double>(r0.tape_bytes)) /
                     static_cast<double>(r0.tape_bytes);
  out.a.check(rel <= 0.01, "conv swap changes tape_bytes by more than 1%");
  out.a.detail = fmt("naive %zu B, +conv %zu B (%.2f%%)", r0.tape_bytes, r1.tape_bytes, 100.0 * rel);

  const double factor = static_cast<double>(r1.tape_activation_bytes) / static_cast<double>(r2.tape_activation_bytes);
  out.b.check(factor >= 16.0, "full-tensor bytes shrink by less than 16x");
  // Per ReLU: the mask that replaced each stored output.
  std::size_t relu_full = 0, relu_mask = 0;
  for (const auto& rec : execute(plus_relu, Scenario::input(), fwd).saved) {
    if (rec.op != OpKind::ReLU) continue;
    for (std::size_t i = 0; i < rec.bytes.size(); ++i) {
      relu_mask += rec.bytes[i];
      relu_full += rec.bytes[i] * 8 * 4;  // one bit per f32 element
    }
  }
  out.b.detail = fmt("+conv %zu B -> +relu %zu B full-tensor, factor %.2f; per ReLU %zu B -> %zu B mask (%.0fx)",
                     r1.tape_activation_bytes, r2.tape_activation_bytes, factor, relu_full, relu_mask,
                     relu_mask ? static_cast<double>(relu_full) / static_cast<double>(relu_mask) : 0.0);

  const auto n_all = execute(naive, Scenario::all(), fwd);
  const auto m_all = execute(convert_network(net, Policy::MemSave), Scenario::all(), fwd);
  std::size_t masks = 0;
  for (const auto& rec : m_all.saved)
    for (std::size_t i = 0; i < rec.kinds.size(); ++i)
      if (rec.op == OpKind::ReLU && rec.kinds[i] == SavedKind::BitMask) masks += rec.bytes[i];
  // Kernels are resident parameters either way; the comparison is on what the tape adds.
  const auto non_param = [](const MemoryReport& r) { return r.tape_bytes - r.tape_parameter_bytes; };
  const long long extra = static_cast<long long>(non_param(m_all.report)) - static_cast<long long>(non_param(n_all.report));
  out.c.check(extra == static_cast<long long>(masks), "difference is not the summed mask bytes");
  out.c.detail = fmt("memsave - naive = %lld B (mask bytes %zu); with kernels: %zu - %zu = %lld B", extra, masks,
                     m_all.report.tape_bytes, n_all.report.tape_bytes,
                     static_cast<long long>(m_all.report.tape_bytes) - static_cast<long long>(n_all.report.tape_bytes));
  return out;
}

// --- 6: dropout -----------------------------------------------------------------

Verdict dropout_replay() {
  Verdict v;
  constexpr std::size_t n = 1 << 14;
  const double p = 0.25;
  const std::uint64_t seed = 2026;
  std::vector<float> ones(n, 1.0f);
  const auto x = Tensor::from_vector<float>(Shape{n}, ones, true);
  std::vector<std::vector<double>> grads;
  std::size_t bytes[2] = {0, 0};
  int slot = 0;
  for (auto variant : {layers::DropoutVariant::StoreMask, layers::DropoutVariant::RngReplay}) {
    Tape tape;
    const auto y = layers::dropout(x, {.p = p, .variant = variant, .seed = seed}, tape);
    bytes[slot++] = tape.tape_bytes();
    std::vector<std::uint8_t> forward;
    for (double value : y.to_doubles()) forward.push_back(value != 0.0);
    const auto loss = layers::sum(y, tape);
    const auto g = backward(tape, loss.id()).at(x.id()).to_doubles();
    std::vector<std::uint8_t> replayed;
    for (double value : g) replayed.push_back(value != 0.0);
    v.check(replayed == forward, "regenerated mask differs from the forward mask");
    grads.push_back(g);
  }
  v.check(bytes[0] == n, fmt("mask costs %zu B", bytes[0]));
  v.check(bytes[1] <= 16, fmt("seed costs %zu B", bytes[1]));
  v.check(grads[0] == grads[1], "gradients differ");

  // Inside a network: every dropout node, both policies.
  const auto net = builtins::builtin("attention");
  const auto rn = execute(convert_network(net, Policy::Naive), Scenario::everything());
  const auto rm = execute(convert_network(net, Policy::MemSave), Scenario::everything());
  int nodes = 0;
  for (const auto& rec : rm.saved)
    if (rec.op == OpKind::Dropout) {
      ++nodes;
      v.check(rec.bytes.size() == 1 && rec.bytes[0] <= 16, "network dropout seed exceeds 16 B");
    }
  const auto shapes = propagate_shapes(net);
  for (const auto& rec : rn.saved)
    if (rec.op == OpKind::Dropout) {
      const auto numel = shapes.outputs[static_cast<std::size_t>(rec.layer)].numel();
      v.check(rec.bytes.size() == 1 && rec.bytes[0] == numel, "network dropout mask is not N bytes");
    }
  v.check(nodes > 0, "no dropout node recorded");
  for (std::size_t i = 0; i < std::min(rn.gradients.size(), rm.gradients.size()); ++i) {
    v.check(rn.gradients[i].values == rm.gradients[i].values, "network gradients differ");
  }
  v.detail = fmt("N = %zu: mask %zu B, seed %zu B; %d network dropout nodes", n, bytes[0], bytes[1], nodes);
  return v;
}

// --- 7 and 8: full corpus -----------------------------------------------------------

struct Criterion78 {
  Verdict sufficiency, oracle;
};

Criterion78 corpus_checks() {
  Criterion78 out;
  const auto t0 = Clock::now();
  const auto entries = oracle::corpus(oracle::CorpusScale::Full);
  std::size_t memsave_saves = 0;
  for (const auto& e : entries) {
    RunResult r;
    try {
      r = execute(e.net, e.scenario);
    } catch (const Error& err) {
      out.sufficiency.check(err.code() != ErrorCode::MissingSavedValue, e.id + ": " + err.what());
      out.oracle.check(false, e.id + " did not run");
      continue;
    }
    for (const auto& u : r.unread) {
      // Naive layers of convertible kinds are allowed to over-save.
      const bool naive_layer = u.policy == Policy::Naive && has_memsave_variant(u.op);
      out.sufficiency.check(naive_layer, e.id + ": unread save in layer " + std::to_string(u.layer));
    }
    for (const auto& rec : r.saved)
      if (rec.policy == Policy::MemSave) memsave_saves += rec.roles.size();
    const auto p = plan(e.net, e.scenario);
    out.oracle.check(p.tape_bytes == r.report.tape_bytes,
                     fmt("%s: tape planned %zu executed %zu", e.id.c_str(), p.tape_bytes, r.report.tape_bytes));
    out.oracle.check(p.peak_bytes == r.report.peak_bytes,
                     fmt("%s: peak planned %zu executed %zu", e.id.c_str(), p.peak_bytes, r.report.peak_bytes));
  }
  const double secs = seconds_since(t0);
  out.sufficiency.detail = fmt("%zu entries, %zu memsave saved values read", entries.size(), memsave_saves);
  out.oracle.detail = fmt("%zu entries, %.1f s", entries.size(), secs);
  return out;
}

// --- 9: run time ------------------------------------------------------------------

Verdict run_time() {
  const auto base = builtins::builtin("deep_cnn", {.depth = 8});
  const auto naive = convert_network(base, Policy::Naive);
  const auto memsave = convert_network(base, Policy::MemSave);
  (void)execute(naive, Scenario::all());
  (void)execute(memsave, Scenario::all());
  std::vector<double> tn, tm;
  for (int rep = 0; rep < 5; ++rep) {
    const auto a = execute(naive, Scenario::all()).report;
    const auto b = execute(memsave, Scenario::all()).report;
    tn.push_back(a.forward_seconds + a.backward_seconds);
    tm.push_back(b.forward_seconds + b.backward_seconds);
  }
  std::sort(tn.begin(), tn.end());
  std::sort(tm.begin(), tm.end());
  const double ratio = tm[2] / tn[2];
  Verdict v;
  v.check(ratio >= 0.75 && ratio <= 1.25, fmt("ratio %.3f", ratio));
  v.detail = fmt("median naive %.1f ms, memsave %.1f ms, ratio %.3f", tn[2] * 1e3, tm[2] * 1e3, ratio);
  return v;
}

int report(const std::string& id, const Verdict& v) {
  std::printf("%-4s %s: %s", v.pass ? "PASS" : "FAIL", id.c_str(), v.detail.c_str());
  if (!v.pass) std::printf(" [%d failing checks; first: %s]", v.failures, v.first_failure.c_str());
  std::printf("\n");
  std::fflush(stdout);
  return v.pass ? 0 : 1;
}

Verdict guarded(const std::function<Verdict()>& fn) {
  try {
    return fn();
  } catch (const std::exception& e) {
    Verdict v;
    v.check(false, std::string("exception: ") + e.what());
    return v;
  }
}

}  // namespace
}  // namespace memsave

int main() {
  using namespace memsave;
  int failed = 0;
  failed += report("1  depth sweep", guarded(depth_sweep));
  failed += report("2  layer storage matrix", guarded(layer_matrix));
  failed += report("3  gradient correctness", guarded(gradients));
  failed += report("4  policy equivalence", guarded(policy_equivalence));
  Criterion5 c5;
  try {
    c5 = bottleneck_interaction();
  } catch (const std::exception& e) {
    c5.a.check(false, e.what());
    c5.b.check(false, e.what());
    c5.c.check(false, e.what());
  }
  failed += report("5a conv swap alone", c5.a);
  failed += report("5b conv and relu swap", c5.b);
  failed += report("5c masks under all", c5.c);
  failed += report("6  dropout replay", guarded(dropout_replay));
  Criterion78 c78;
  try {
    c78 = corpus_checks();
  } catch (const std::exception& e) {
    c78.sufficiency.check(false, e.what());
    c78.oracle.check(false, e.what());
  }
  failed += report("7  sufficiency and minimality", c78.sufficiency);
  failed += report("8  plan equals execution", c78.oracle);
  failed += report("9  run time", guarded(run_time));
  failed += report("10 curve shapes", guarded(curve_shapes));
  std::printf("%d criteria failed\n", failed);
  return failed == 0 ? 0 : 1;
}
