// Copyright 2026 The mmfx Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "mmfx/checkpoint.hpp"
#include "mmfx/data.hpp"
#include "mmfx/features.hpp"
#include "mmfx/lora.hpp"
#include "mmfx/model.hpp"
#include "mmfx/train.hpp"

namespace mmfx {

/// Everything one training run needs. Defaults are the desk-scale setup:
/// d_model 32, 2 heads, 3 levels, LoRA rank 2.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  LoraConfig lora;
  bool use_lora = true;
  std::filesystem::path data_dir = "data";
  std::filesystem::path out_dir = "runs";

  RunConfig();

  /// "<arch>_r<rank>" or "<arch>_full".
  std::string run_tag() const;
  void validate() const;
};

void to_json(nlohmann::json& j, const RunConfig& cfg);
/// Nested sections "model", "train", "lora" plus top-level "use_lora",
/// "data_dir", "out_dir". Absent keys keep their defaults.
void from_json(const nlohmann::json& j, RunConfig& cfg);

struct RunData {
  Dataset train;
  Dataset validation;
  Dataset test;
  Tokenizer tokenizer;
};

/// Reads train/validation/test manifests and builds the vocabulary from
/// corpus.txt (or the training reports when it is absent).
RunData load_run_data(const std::filesystem::path& data_dir, std::size_t vocab_size);

struct RunOutcome {
  std::filesystem::path run_dir;
  TrainResult train;
  /// Test-split metrics of the best-validation model.
  std::optional<EvalResult> test;
};

struct RunOptions {
  Ablation ablation = Ablation::kNone;
  /// When false nothing is written to disk; the best model is kept in memory.
  bool write_outputs = true;
  EvalOptions eval;
};

/// Builds, optionally wraps, trains, and evaluates the best-validation
/// model on the test split. With write_outputs the run directory receives
/// config.resolved, metrics.csv and best.mmfx.
RunOutcome run_training(const RunConfig& cfg, const RunData& data, const RunOptions& options = {});

/// Checkpoint with the vocabulary embedded in its config document.
void save_run_checkpoint(const std::filesystem::path& path, const FusionModel& model, const RunConfig& cfg,
                         const Tokenizer& tokenizer);

struct LoadedRun {
  LoadedModel loaded;
  Tokenizer tokenizer;
};

LoadedRun load_run_checkpoint(const std::filesystem::path& path);

/// Table of per-class AUCs and their mean, three decimals, undefined
/// entries shown as "-". One header row and one value row.
std::string auc_table_csv(const EvalResult& result);

}  // namespace mmfx
