// Copyright 2026 The mmfx Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace mmfx {

struct GoldenResult {
  std::string name;
  std::string covers;
  double max_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

/// Replays every case listed in `dir`/index.json through the library and
/// compares against the stored outputs. Unknown case names throw.
std::vector<GoldenResult> check_goldens(const std::filesystem::path& dir);

}  // namespace mmfx
