// Copyright 2026 The mmfx Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <gtest/gtest.h>

#include "mmfx/model.hpp"
#include "mmfx/tensor.hpp"

namespace mmfx::testing {

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("mmfx-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << bytes;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  EXPECT_EQ(a.size(), b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  EXPECT_EQ(a.shape(), b.shape());
  return max_abs_diff(a.data(), b.data());
}

inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

inline ModelConfig tiny_config(Fusion fusion = Fusion::kParallel) {
  ModelConfig cfg;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.n_levels = 2;
  cfg.vocab_size = 20;
  cfg.text_seq_len = 6;
  cfg.image_side = 8;
  cfg.patch_size = 4;
  cfg.fusion = fusion;
  return cfg;
}

struct Inputs {
  TokenBatch tokens;
  Tensor images;
};

inline Inputs random_inputs(const ModelConfig& cfg, std::size_t batch, Rng& rng) {
  Inputs in;
  in.tokens.batch = batch;
  in.tokens.seq_len = cfg.text_seq_len;
  for (std::size_t i = 0; i < batch * cfg.text_seq_len; ++i)
    in.tokens.ids.push_back(static_cast<std::int32_t>(rng.below(cfg.vocab_size)));
  std::vector<double> px(batch * cfg.image_side * cfg.image_side);
  for (auto& p : px) p = rng.uniform();
  in.images = Tensor({batch, cfg.image_side, cfg.image_side}, std::move(px));
  return in;
}

inline const std::vector<Fusion>& all_fusions() {
  static const std::vector<Fusion> v{Fusion::kParallel, Fusion::kSerial, Fusion::kMixed};
  return v;
}

}  // namespace mmfx::testing
