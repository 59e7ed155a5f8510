// Copyright 2026 The mmfx Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace mmfx {

struct SuiteResult {
  std::string name;
  bool passed = false;
  double max_error = 0.0;
  double tolerance = 0.0;
  std::size_t cases = 0;
  std::string detail;
};

struct VerifyReport {
  std::vector<SuiteResult> suites;
  bool passed() const;
};

nlohmann::json to_json(const VerifyReport& report);

// Each suite is self-contained and deterministic. Setting the environment
// variable MMFX_VERIFY_FAULT to a suite name corrupts that suite's
// computation, which must then report a failure.

/// Central-difference checks of every block and of the full model for all
/// three fusion variants at d_model 8, 2 heads, 2 levels.
SuiteResult verify_gradcheck();
/// Wrapped and unwrapped eval outputs agree for 20 seeds x 3 variants.
SuiteResult verify_lora_init();
/// Ten LoRA steps leave frozen tensors bitwise unchanged and move adapters.
SuiteResult verify_lora_frozen();
/// Equal parameter totals across variants, matching the closed form.
SuiteResult verify_param_parity();
/// Adapter/base ratio of every wrapped matrix equals r(1/d + 1/k).
SuiteResult verify_reduction_factor();
/// roc_auc against brute-force pair counting on 200 random instances.
SuiteResult verify_auc_oracle();

std::vector<std::string> verify_suite_names();
SuiteResult run_verify_suite(const std::string& name);
VerifyReport run_verify();

}  // namespace mmfx
