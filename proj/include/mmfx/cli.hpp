// Copyright 2026 The mmfx Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace mmfx::cli {

enum ExitCode : int {
  kOk = 0,
  kValidationError = 1,
  kRuntimeFailure = 2,
  kVerifyFailure = 3,
};

/// Entry point shared by the mmfx binary and the tests. `args` excludes the
/// program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mmfx::cli
