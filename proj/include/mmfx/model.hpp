// Copyright 2026 The mmfx Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmfx/features.hpp"
#include "mmfx/nn.hpp"
#include "mmfx/tensor.hpp"

namespace mmfx {

enum class Fusion {
  kParallel,  // cross blocks fed by the raw embedded features
  kSerial,    // cross blocks fed by the unimodal stack outputs
  kMixed,     // parallel cross chain, final cross block fed serially
};

std::string_view to_string(Fusion fusion);
Fusion parse_fusion(std::string_view name);

inline constexpr std::size_t kDefaultClasses = 14;

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_levels = 3;
  std::size_t hidden_dim = 0;  // 0 selects default_hidden_dim(d_model)
  std::size_t vocab_size = 256;
  std::size_t text_seq_len = 24;
  std::size_t image_side = 32;
  std::size_t patch_size = 8;
  std::size_t n_classes = kDefaultClasses;
  double dropout_rate = 0.1;
  Fusion fusion = Fusion::kParallel;
  std::size_t head_hidden = 0;  // 0 selects d_model
  FeedForwardForm ff_form = FeedForwardForm::kSiluOfProduct;
  double init_stddev = kInitStddev;

  std::size_t resolved_hidden_dim() const { return hidden_dim ? hidden_dim : default_hidden_dim(d_model); }
  std::size_t resolved_head_hidden() const { return head_hidden ? head_hidden : d_model; }
  std::size_t patch_count() const { return (image_side / patch_size) * (image_side / patch_size); }

  /// Throws std::invalid_argument naming every invalid field at once.
  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& cfg);
void from_json(const nlohmann::json& j, ModelConfig& cfg);

/// Dense Linear -> tanh -> dropout -> Dense CLS -> sigmoid.
struct ClassifierHead {
  LinearLayer dense_linear;  // [head_hidden, 2·d]
  LinearLayer dense_cls;     // [n_classes, head_hidden]
  double dropout_rate = 0.1;
};

enum class ParamGroup { kEmbeddings, kText, kVision, kCross, kHead };
std::string_view to_string(ParamGroup group);

struct NamedParameter {
  std::string name;
  ParamGroup group;
  Tensor tensor;
  bool is_adapter = false;
};

struct NamedLinear {
  std::string name;
  std::string role;  // wq, wk, wv, wo, w1, w2, w3, vision_proj, dense_linear, dense_cls
  ParamGroup group;
  LinearLayer* layer;
};

/// Optional input ablations applied inside forward().
struct InputMask {
  bool zero_text = false;
  bool zero_vision = false;
};

class FusionModel {
 public:
  ModelConfig config;
  TextEmbedder embedder;
  PatchProjector projector;
  std::vector<TransformerLayer> text_stack;
  std::vector<TransformerLayer> vision_stack;
  std::vector<CrossBlock> cross_blocks;
  ClassifierHead head;
  InputMask input_mask;

  /// Base weights and adapters in a fixed order; adapter entries are named
  /// "<weight name>.lora_a" / "<weight name>.lora_b".
  std::vector<NamedParameter> named_parameters() const;
  std::vector<NamedLinear> named_linears();
  std::vector<Tensor> trainable_parameters() const;
  /// Every attached adapter keyed by the name of the weight it wraps.
  std::vector<std::pair<std::string, const LoraAdapter*>> adapters() const;

  bool is_wrapped() const { return wrapped_; }
  void mark_wrapped() { wrapped_ = true; }

 private:
  bool wrapped_ = false;
};

/// Gaussian weights (config.init_stddev), zero biases, unit norm gains.
/// The draw order is independent of the fusion variant, so equal configs
/// and seeds give identical weights for every variant.
FusionModel build_model(const ModelConfig& cfg, Rng& rng);

/// Dense Linear -> tanh -> dropout -> Dense CLS -> sigmoid on [batch, 2·d].
Tensor head_forward(const ClassifierHead& head, const Tensor& pooled, const RunMode& mode);

/// Class probabilities [batch, n_classes]. `images` is [batch, side, side].
Tensor forward(const FusionModel& model, const TokenBatch& text_ids, const Tensor& images, const RunMode& mode);

/// Head input before the classifier: concat(mean-pooled text, mean-pooled
/// vision) of the final fused streams, [batch, 2·d].
Tensor fused_features(const FusionModel& model, const TokenBatch& text_ids, const Tensor& images, const RunMode& mode);

struct ParameterCounts {
  std::size_t embeddings = 0;
  std::size_t text = 0;
  std::size_t vision = 0;
  std::size_t cross = 0;
  std::size_t head = 0;
  std::size_t total = 0;
};

/// Base parameters only; adapters are reported by trainable_param_report().
ParameterCounts count_parameters(const FusionModel& model);

/// Closed-form count for a config, without building the model.
ParameterCounts expected_parameter_counts(const ModelConfig& cfg);

/// Sets every weight of the cross blocks (not their norm gains) to zero.
void zero_cross_weights(FusionModel& model);

}  // namespace mmfx
