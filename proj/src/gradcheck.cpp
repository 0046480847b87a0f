// Copyright (c) 2026, the memsave authors
// SPDX-License-Identifier: Apache-2.0

#include "memsave/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "memsave/executor.hpp"

namespace memsave {

double relative_error(double analytic, double numeric, double floor) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

GradcheckResult gradcheck(const NetworkDescription& input_net, const Scenario& scenario, const GradcheckOptions& o) {
  NetworkDescription net = input_net;
  net.dtype = Dtype::F64;
  ParameterValues values = init_values(net);
  ExecuteOptions eo;
  eo.values = &values;
  const RunResult run = execute(net, scenario, eo);

  auto lookup = [&](const std::string& name) -> std::vector<double>& {
    if (name == "input") return values.input;
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
      const std::string label = layer_label(net, i);
      if (name == label + ".weight") return values.layers[i].weight;
      if (name == label + ".bias") return values.layers[i].bias;
    }
    throw Error(ErrorCode::UnknownTensor, "no leaf named " + name);
  };

  GradcheckResult result;
  for (const auto& g : run.gradients) {
    result.gradient_names.push_back(g.name);
    std::vector<double>& leaf = lookup(g.name);
    for (std::size_t j = 0; j < leaf.size(); ++j) {
      const double saved = leaf[j];
      leaf[j] = saved + o.step;
      const double up = forward_loss(net, values);
      leaf[j] = saved - o.step;
      const double down = forward_loss(net, values);
      leaf[j] = saved;
      const double numeric = (up - down) / (2.0 * o.step);
      const double err = relative_error(g.values[j], numeric, o.floor);
      ++result.checked;
      if (result.checked == 1 || err > result.max_error) {
        result.max_error = err;
        result.worst = {g.name, j, g.values[j], numeric, err};
      }
    }
  }
  result.passed = result.max_error <= o.tolerance;
  return result;
}

}  // namespace memsave
