#include "cbert/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cbert/errors.hpp"
#include "cbert/rng.hpp"

namespace cbert {
namespace {

double evaluate(const std::function<Var<double>()>& loss) {
  const Var<double> out = loss();
  if (out.value().size() != 1) throw ShapeError("grad_check: loss must be scalar");
  const double v = out.value()[0];
  if (!std::isfinite(v)) throw NumericError("grad_check: non-finite loss");
  return v;
}

std::vector<std::size_t> pick_indices(std::size_t size, std::size_t limit,
                                      Rng& rng) {
  std::vector<std::size_t> idx(size);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (limit == 0 || limit >= size) return idx;
  for (std::size_t i = 0; i < limit; ++i) {
    std::swap(idx[i], idx[i + rng.index(size - i)]);
  }
  idx.resize(limit);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

GradCheckReport grad_check(const std::function<Var<double>()>& loss,
                           const NamedParams& params,
                           const GradCheckOptions& options) {
  for (const auto& entry : params) Var<double>(entry.second).zero_grad();
  {
    const Var<double> out = loss();
    if (!std::isfinite(out.value()[0])) {
      throw NumericError("grad_check: non-finite loss");
    }
    out.backward();
  }

  GradCheckReport report;
  report.tolerance = options.tolerance;
  Rng rng(options.sample_seed);
  for (const auto& [name, param] : params) {
    Var<double> p = param;
    const Tensor<double> analytic =
        p.has_grad() ? p.grad() : Tensor<double>(p.shape());
    GradCheckEntry entry;
    entry.name = name;
    auto& values = p.mutable_value();
    for (std::size_t i :
         pick_indices(values.size(), options.max_checks_per_tensor, rng)) {
      const double saved = values[i];
      values[i] = saved + options.eps;
      const double plus = evaluate(loss);
      values[i] = saved - options.eps;
      const double minus = evaluate(loss);
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * options.eps);
      const double abs_err = std::abs(analytic[i] - numeric);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric),
                                     options.denominator_floor});
      entry.max_abs_error = std::max(entry.max_abs_error, abs_err);
      entry.max_rel_error = std::max(entry.max_rel_error, abs_err / denom);
      ++entry.checked;
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.entries.push_back(std::move(entry));
    p.zero_grad();
  }
  report.passed = report.max_rel_error < options.tolerance;
  return report;
}

}  // namespace cbert
