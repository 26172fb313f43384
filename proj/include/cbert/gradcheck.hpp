#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "cbert/autograd.hpp"

namespace cbert {

struct GradCheckEntry {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

struct GradCheckOptions {
  double eps = 1e-5;
  double tolerance = 1e-4;
  // Relative error is |analytic - numeric| / max(|analytic|, |numeric|, floor)
  // so that entries whose true gradient is ~0 are judged on absolute error.
  double denominator_floor = 1e-6;
  // 0 checks every entry; otherwise a seeded sample of this many per tensor.
  std::size_t max_checks_per_tensor = 0;
  std::uint64_t sample_seed = 0;
};

using NamedParams = std::vector<std::pair<std::string, Var<double>>>;

// Compares the analytic gradient of `loss` with central differences
// (f(theta+eps) - f(theta-eps)) / 2eps for every listed parameter. `loss`
// must rebuild the graph from the current parameter values on every call and
// be deterministic. Throws NumericError on a non-finite loss.
GradCheckReport grad_check(const std::function<Var<double>()>& loss,
                           const NamedParams& params,
                           const GradCheckOptions& options = {});

}  // namespace cbert
