// Copyright 2026 The mmfx Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mmfx/tensor.hpp"

namespace mmfx {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  /// Tensor index and element of the worst agreement.
  std::size_t worst_tensor = 0;
  std::size_t worst_element = 0;
  double tolerance = 0.0;
  bool passed = false;
};

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Denominator floor for the relative error |a - n| / max(|a|, |n|, floor);
  /// keeps near-zero entries from being judged on round-off alone.
  double magnitude_floor = 1e-6;
};

/// Compares autodiff gradients of a scalar function against central
/// differences, perturbing every element of every tensor in `inputs`.
/// `f` is re-evaluated from scratch for each perturbation, so it must be
/// deterministic (seed any dropout inside it).
GradCheckReport grad_check(const std::function<Tensor()>& f, std::span<Tensor> inputs,
                           const GradCheckOptions& options = {});

GradCheckReport grad_check(const std::function<Tensor()>& f, Tensor& input, const GradCheckOptions& options = {});

}  // namespace mmfx
