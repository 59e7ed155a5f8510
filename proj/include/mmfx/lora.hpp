// Copyright 2026 The mmfx Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <set>
#include <string>
#include <vector>

#include "mmfx/rng.hpp"
#include "mmfx/tensor.hpp"

namespace mmfx {

class FusionModel;
struct RunMode;

/// Names of the weight matrices that can carry a low-rank adapter.
inline const std::set<std::string>& lora_target_names() {
  static const std::set<std::string> names{"wq", "wk", "wv", "wo", "w1", "w2", "w3", "embeddings", "vision_proj"};
  return names;
}

/// Attention projections, the feed-forward output projection, the text
/// embedding table and the patch projection. w1, w3 and the classifier head
/// are left alone.
inline std::set<std::string> default_lora_targets() {
  return {"wq", "wk", "wv", "wo", "w2", "embeddings", "vision_proj"};
}

struct LoraConfig {
  std::size_t rank = 2;
  double alpha = 32.0;
  double dropout_rate = 0.1;
  std::set<std::string> targets = default_lora_targets();
  double init_stddev = 0.02;

  /// Throws std::invalid_argument listing every problem found.
  void validate() const;
};

/// Low-rank update B·A attached to a frozen weight W₀ ∈ ℝ^{d×k}.
///
/// `a` is [r, k], `b` is [d, r]. The forward pass computes
/// W₀x + (alpha / r)·B·A·dropout(x). `base` shares storage with the wrapped
/// weight. An embedding table is stored [k, d] (one row per token), which
/// is flagged by `base_transposed`.
struct LoraAdapter {
  Tensor base;
  Tensor a;
  Tensor b;
  double alpha = 32.0;
  std::size_t rank = 1;
  double dropout_rate = 0.0;
  bool base_transposed = false;

  double scale() const { return alpha / static_cast<double>(rank); }
  std::size_t out_features() const { return b.dim(0); }
  std::size_t in_features() const { return a.dim(1); }
  std::size_t parameter_count() const { return a.size() + b.size(); }
};

/// Freezes `base` and attaches a fresh adapter: A Gaussian, B zero.
LoraAdapter make_lora_adapter(Tensor base, bool base_transposed, const LoraConfig& cfg, Rng& rng);

/// h = W₀x + (alpha/r)·B·A·dropout(x) for x [..., k].
Tensor lora_forward(const LoraAdapter& adapter, const Tensor& x, const RunMode& mode);

/// W₀ + (alpha/r)·B·A as a [d, k] matrix, detached from the graph.
Tensor merge_weights(const LoraAdapter& adapter);

/// r·(1/d + 1/k): adapter parameters over base parameters for one matrix.
double reduction_factor(std::size_t d, std::size_t k, std::size_t r);

struct WrappedMatrix {
  std::string name;
  std::size_t d = 0;
  std::size_t k = 0;
  std::size_t rank = 0;
  std::size_t base_params = 0;
  std::size_t adapter_params = 0;
};

struct TrainableReport {
  struct Group {
    std::string name;
    std::size_t frozen = 0;
    std::size_t trainable = 0;
  };
  std::vector<Group> groups;
  std::vector<WrappedMatrix> matrices;
  std::size_t frozen = 0;
  std::size_t trainable = 0;
  std::size_t adapter_params = 0;
  std::size_t head_params = 0;
  std::size_t total = 0;

  double frozen_fraction() const { return total ? static_cast<double>(frozen) / static_cast<double>(total) : 0.0; }
};

/// Attaches adapters to every matching matrix of the text, vision and cross
/// stacks (plus the token embedding table and the patch projection when
/// named), freezes every non-head parameter, and leaves the head trainable.
/// Returns the number of adapters attached.
std::size_t wrap_model(FusionModel& model, const LoraConfig& cfg, Rng& rng);

TrainableReport trainable_param_report(const FusionModel& model);

}  // namespace mmfx
