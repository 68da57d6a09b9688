// SPDX-License-Identifier: Apache-2.0
//
// Registry of finite-difference gradient checks over every differentiable op
// and module, shared by the command line and the acceptance run.
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "odisr/gradcheck.hpp"

namespace odisr {

struct GradCheckCase {
  std::string module;  // tensor, metrics, windowing, dgg, attention, dfa, model
  std::string name;
  std::function<GradCheckResult()> run;
};

/// Cases of `module`, or all of them when `module` is empty or "all".
/// ConfigError for an unknown module name.
std::vector<GradCheckCase> gradcheck_suite(const std::string& module = "");
std::vector<std::string> gradcheck_modules();

}  // namespace odisr
