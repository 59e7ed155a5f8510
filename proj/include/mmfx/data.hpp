// Copyright 2026 The mmfx Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "mmfx/features.hpp"
#include "mmfx/rng.hpp"
#include "mmfx/tensor.hpp"

namespace mmfx {

inline constexpr std::array<std::string_view, 14> kClassNames{
    "Atelectasis",      "Cardiomegaly",  "Consolidation", "Edema",     "Enlarged-Cardiomediastinum",
    "Fracture",         "Lung-Lesion",   "Lung-Opacity",  "No-Finding", "Pleural-Effusion",
    "Pleural-Other",    "Pneumonia",     "Pneumothorax",  "Support-Devices"};
inline constexpr std::size_t kNoFinding = 8;

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Split { kTrain, kValidation, kTest };
std::string_view to_string(Split split);

struct Example {
  std::string id;
  std::string image_path;  // relative to the manifest directory
  Tensor image;            // [side, side] in [0, 1]
  std::string report;
  std::vector<std::uint8_t> labels;

  bool operator==(const Example& other) const;
};

struct Dataset {
  Split split = Split::kTrain;
  std::vector<Example> examples;

  std::size_t size() const { return examples.size(); }
  bool empty() const { return examples.empty(); }
  std::vector<std::string> reports() const;
};

/// Throws DataError when the vector has the wrong length, holds values other
/// than 0/1, or marks No-Finding alongside a finding.
void validate_labels(std::span<const std::uint8_t> labels, std::size_t n_classes = kClassNames.size());

/// Binary PGM (P5), square, maxval 255. Pixels are scaled to [0, 1].
Tensor load_pgm(const std::filesystem::path& path);
/// Writes round(255·x) with x clamped to [0, 1].
void save_pgm(const std::filesystem::path& path, const Tensor& image);

/// One JSON object per line: {"id", "image", "report", "labels"}.
Dataset load_manifest(const std::filesystem::path& path, Split split = Split::kTrain);
/// Writes the manifest and one PGM per example at its image_path.
void write_manifest(const std::filesystem::path& path, const Dataset& dataset);

struct SyntheticSpec {
  std::size_t n_train = 400;
  std::size_t n_validation = 12;
  std::size_t n_test = 48;
  std::size_t side = 32;
  std::size_t patch_size = 8;
  std::set<std::size_t> text_signal_classes{0, 1, 2, 3};
  std::set<std::size_t> vision_signal_classes{4, 5, 6, 7};
  std::set<std::size_t> both_signal_classes{9, 10, 11, 12, 13};
  double positive_rate = 0.25;
  double noise_rate = 0.05;
  double background = 0.25;
  double pixel_noise = 0.05;
  double evidence_gain = 0.5;
  std::size_t filler_sentences = 2;
  bool shuffle_sentences = true;
  std::uint64_t seed = 0;

  /// The three signal subsets must partition every class except No-Finding.
  void validate() const;
  /// Theme word planted in reports for class c.
  static std::string_view theme_word(std::size_t c);
};

struct SyntheticData {
  Dataset train;
  Dataset validation;
  Dataset test;
  std::vector<std::string> corpus;  // training reports, one per example
};

/// Deterministic under `spec.seed`. Each disease class is positive with
/// `positive_rate`; No-Finding is set when no disease is drawn. Evidence for a
/// positive class is planted on its channel(s): a theme sentence in the
/// report and/or a class-specific texture inside its patch. `noise_rate`
/// flips evidence presence independently per class and channel.
SyntheticData generate_synthetic(const SyntheticSpec& spec);

/// Writes images/, train.jsonl, validation.jsonl, test.jsonl and corpus.txt.
void write_synthetic(const std::filesystem::path& dir, const SyntheticData& data);

struct Batch {
  std::vector<std::string> ids;
  TokenBatch tokens;
  Tensor images;  // [b, side, side]
  Tensor labels;  // [b, n_classes], 0/1
};

/// Final partial batch is kept. `shuffle` permutes example order with `rng`.
std::vector<Batch> batch_iter(const Dataset& dataset, std::size_t batch_size, const Tokenizer& tokenizer,
                              std::size_t seq_len, bool shuffle, Rng& rng);

}  // namespace mmfx
