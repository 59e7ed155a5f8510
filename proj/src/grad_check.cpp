// Copyright 2026 The mmfx Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmfx/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace mmfx {

GradCheckReport grad_check(const std::function<Tensor()>& f, std::span<Tensor> inputs,
                           const GradCheckOptions& options) {
  for (auto& t : inputs) t.clear_grad();
  Tensor loss = f();
  if (loss.size() != 1) throw ShapeError("grad_check: function must be scalar-valued");
  loss.backward();

  std::vector<std::vector<double>> analytic;
  analytic.reserve(inputs.size());
  for (auto& t : inputs) {
    if (t.has_grad()) {
      analytic.emplace_back(t.grad().begin(), t.grad().end());
    } else {
      analytic.emplace_back(t.size(), 0.0);
    }
    t.clear_grad();
  }

  GradCheckReport report;
  report.tolerance = options.tolerance;
  for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
    auto values = inputs[ti].mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + options.step;
      const double up = f().item();
      values[i] = saved - options.step;
      const double down = f().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double a = analytic[ti][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.magnitude_floor});
      const double rel = std::abs(a - numeric) / denom;
      ++report.checked;
      if (rel > report.max_rel_error || !std::isfinite(rel)) {
        report.max_rel_error = std::isfinite(rel) ? rel : INFINITY;
        report.worst_tensor = ti;
        report.worst_element = i;
      }
    }
  }
  for (auto& t : inputs) t.clear_grad();
  report.passed = report.max_rel_error < options.tolerance;
  return report;
}

GradCheckReport grad_check(const std::function<Tensor()>& f, Tensor& input, const GradCheckOptions& options) {
  return grad_check(f, std::span<Tensor>(&input, 1), options);
}

}  // namespace mmfx
