// Copyright 2026 The mmfx Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmfx/data.hpp"
#include "mmfx/features.hpp"
#include "mmfx/model.hpp"
#include "mmfx/tensor.hpp"

namespace mmfx {

inline constexpr double kProbabilityClamp = 1e-7;

struct TrainConfig {
  std::size_t epochs = 15;
  std::size_t batch_size = 20;
  double learning_rate = 1e-4;
  double weight_decay = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& cfg);
void from_json(const nlohmann::json& j, TrainConfig& cfg);

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t t = 0;
};

/// Gives every trainable parameter a zeroed gradient buffer. Parameters the
/// loss does not reach then step with a zero gradient instead of failing.
void zero_grads(std::span<Tensor> params);

/// Adam with bias correction; weight decay is added to the gradient before
/// the moment updates. Parameters with requires_grad == false are skipped.
/// Gradients are zeroed afterwards.
void adam_step(std::span<Tensor> params, AdamState& state, const TrainConfig& cfg);

/// Mean binary cross entropy over every element, probabilities clamped to
/// [1e-7, 1 - 1e-7].
Tensor bce_loss(const Tensor& probs, const Tensor& labels);

/// Mann–Whitney AUC with ties counted one half. Empty when either class is
/// absent.
std::optional<double> roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels);

struct EvalOptions {
  std::size_t batch_size = 20;
  /// 0 picks the hardware concurrency, capped by MMFX_THREADS when set.
  std::size_t threads = 0;
};

std::size_t eval_thread_count(std::size_t requested = 0);

struct EvalResult {
  double loss = 0.0;
  std::vector<std::optional<double>> auc;
  std::optional<double> mean_auc;
  std::vector<double> scores;  // [n, n_classes] in dataset order
};

/// Mean over the defined classes only.
std::optional<double> mean_defined(std::span<const std::optional<double>> values);

EvalResult evaluate(const FusionModel& model, const Dataset& dataset, const Tokenizer& tokenizer,
                    const EvalOptions& options = {});

struct MetricsRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  std::vector<std::optional<double>> val_auc;
  std::optional<double> val_mean_auc;
};

struct TrainResult {
  std::vector<MetricsRecord> records;
  std::optional<std::size_t> best_epoch;
  std::optional<double> best_val_auc;
};

/// Called with the model each time the validation mean AUC improves, or once
/// after the last epoch when it was never defined.
using CheckpointFn = std::function<void(const FusionModel&, const MetricsRecord&)>;

TrainResult train_loop(FusionModel& model, const Dataset& train, const Dataset& validation, const Tokenizer& tokenizer,
                       const TrainConfig& cfg, const CheckpointFn& on_improve = {}, const EvalOptions& eval = {});

std::string metrics_csv_header(std::size_t n_classes = kClassNames.size());
std::string metrics_csv(std::span<const MetricsRecord> records);
void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricsRecord> records);

enum class Ablation { kNone, kTextOnly, kVisionOnly };
std::string_view to_string(Ablation ablation);

/// Text-only and vision-only zero and freeze every cross-block tensor and
/// blank the other modality's input.
void apply_ablation(FusionModel& model, Ablation ablation);

}  // namespace mmfx
