#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "multitrans/grad_check.hpp"

namespace multitrans {

struct GradSuiteEntry {
  std::string name;
  std::string kind;  // "op", "block" or "model"
  std::size_t cases = 0;
  double tolerance = 0.0;
  GradCheckReport report;  // merged over the cases

  bool passed() const { return report.passed(); }
};

struct GradSuiteOptions {
  std::uint64_t seed = 1;
  double op_tolerance = 1e-4;
  double model_tolerance = 1e-3;
  std::string fault_op;
  /// Limit to entries whose name contains this string.
  std::string filter;
};

/// Finite-difference checks of every differentiable op, each model block
/// and one full multimodal forward/backward, three seeded shapes apiece.
std::vector<GradSuiteEntry> run_grad_suite(const GradSuiteOptions& options = {});

/// Names of the ops the suite covers, as recorded on the tape.
std::vector<std::string> grad_suite_ops();

}  // namespace multitrans
