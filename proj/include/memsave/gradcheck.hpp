// Copyright (c) 2026, the memsave authors
// SPDX-License-Identifier: Apache-2.0
//
// Central-difference gradient checks of whole networks in f64.

#pragma once

#include <string>
#include <vector>

#include "memsave/network.hpp"

namespace memsave {

struct GradcheckOptions {
  double step = 1e-6;
  double tolerance = 1e-5;
  /// Denominator floor of the relative error |a - n| / max(|a|, |n|, floor),
  /// so that gradients near zero are judged on an absolute scale.
  double floor = 1e-3;
};

struct GradcheckEntry {
  std::string name;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double error = 0.0;
};

struct GradcheckResult {
  bool passed = true;
  double max_error = 0.0;
  std::size_t checked = 0;
  GradcheckEntry worst;
  std::vector<std::string> gradient_names;
};

double relative_error(double analytic, double numeric, double floor);

/// Checks every gradient the scenario requests. The network is evaluated in
/// f64 regardless of its declared dtype.
GradcheckResult gradcheck(const NetworkDescription& net, const Scenario& scenario,
                          const GradcheckOptions& options = {});

}  // namespace memsave
