#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "darc/tensor.hpp"

namespace darc {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-6;
  // Lower bound on the relative-error denominator, so coordinates whose
  // true gradient is ~0 are compared in absolute terms instead of
  // amplifying rounding noise.
  double denominator_floor = 1e-3;
};

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coordinates = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

// |a - n| / max(|a|, |n|, floor); exactly 0 when a == n.
inline double relative_error(double analytic, double numeric, double floor) {
  const double diff = std::abs(analytic - numeric);
  if (diff == 0.0) return 0.0;
  return diff / std::max({std::abs(analytic), std::abs(numeric), floor});
}

using ScalarFunction = std::function<Tensor(Graph&)>;

// Compares reverse-mode gradients of the scalar `f` with respect to every
// tensor in `params` against central differences
//   (f(x + h e_i) - f(x - h e_i)) / 2h.
// `f` must read the parameter tensors by handle so perturbations are seen.
inline GradCheckReport grad_check(const ScalarFunction& f, std::vector<NamedTensor> params,
                                  const GradCheckOptions& opts = {}) {
  for (auto& p : params) {
    p.tensor.set_requires_grad(true);
    p.tensor.zero_grad();
  }
  auto eval = [&f]() {
    Graph g(Graph::Mode::kInference);
    const double v = f(g).item();
    if (!std::isfinite(v)) throw NumericError("grad_check: function evaluated to a non-finite value");
    return v;
  };

  {
    Graph g;
    Tensor loss = f(g);
    if (!std::isfinite(loss.item())) throw NumericError("grad_check: function evaluated to a non-finite value");
    g.backward(loss);
  }

  GradCheckReport report;
  report.tolerance = opts.tolerance;
  for (auto& p : params) {
    GradCheckEntry entry;
    entry.name = p.name;
    entry.coordinates = p.tensor.numel();
    const std::vector<double> analytic(p.tensor.grad().begin(), p.tensor.grad().end());
    auto values = p.tensor.values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + opts.step;
      const double up = eval();
      values[i] = saved - opts.step;
      const double down = eval();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * opts.step);
      const double err = relative_error(analytic[i], numeric, opts.denominator_floor);
      if (err > entry.max_rel_error || i == 0) {
        entry.max_rel_error = err;
        entry.worst_index = i;
        entry.analytic = analytic[i];
        entry.numeric = numeric;
      }
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.entries.push_back(std::move(entry));
  }
  report.passed = report.max_rel_error <= opts.tolerance;
  for (auto& p : params) p.tensor.zero_grad();
  return report;
}

inline GradCheckReport grad_check(const ScalarFunction& f, Tensor x, const GradCheckOptions& opts = {}) {
  return grad_check(f, std::vector<NamedTensor>{{"x", std::move(x)}}, opts);
}

}  // namespace darc
