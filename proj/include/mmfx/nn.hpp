// Copyright 2026 The mmfx Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>
#include <utility>

#include "mmfx/lora.hpp"
#include "mmfx/rng.hpp"
#include "mmfx/tensor.hpp"

namespace mmfx {

/// Training flag plus the generator feeding dropout masks.
struct RunMode {
  bool training = false;
  Rng* rng = nullptr;

  static RunMode eval() { return {}; }
  static RunMode train(Rng& rng) { return {true, &rng}; }
};

Tensor dropout(const Tensor& x, double rate, const RunMode& mode);

inline constexpr double kInitStddev = 0.02;

struct LinearLayer {
  Tensor weight;  // [out, in]
  std::optional<Tensor> bias;
  std::optional<LoraAdapter> adapter;

  std::size_t in_features() const { return weight.dim(1); }
  std::size_t out_features() const { return weight.dim(0); }
};

LinearLayer make_linear(std::size_t out, std::size_t in, bool with_bias, Rng& rng, double stddev = kInitStddev);
Tensor linear_forward(const LinearLayer& layer, const Tensor& x, const RunMode& mode);

struct AttentionBlock {
  LinearLayer wq, wk, wv, wo;
  std::size_t heads = 1;

  std::size_t model_dim() const { return wq.in_features(); }
  std::size_t head_dim() const { return model_dim() / heads; }
};

enum class FeedForwardForm {
  kSiluOfProduct,  // W2(silu(W1x ⊙ W3x))
  kGated,          // W2(silu(W1x) ⊙ W3x)
};

struct FeedForward {
  LinearLayer w1, w2, w3;
  FeedForwardForm form = FeedForwardForm::kSiluOfProduct;

  std::size_t hidden_dim() const { return w1.out_features(); }
};

struct TransformerLayer {
  AttentionBlock attn;
  FeedForward ff;
  Tensor norm1;  // [d]
  Tensor norm2;  // [d]
};

/// One fusion level: text queries against vision keys/values, and vision
/// queries against text keys/values.
struct CrossBlock {
  TransformerLayer text_from_vision;
  TransformerLayer vision_from_text;
};

AttentionBlock make_attention(std::size_t d_model, std::size_t heads, Rng& rng);
FeedForward make_feed_forward(std::size_t d_model, std::size_t hidden_dim, FeedForwardForm form, Rng& rng);
TransformerLayer make_layer(std::size_t d_model, std::size_t heads, std::size_t hidden_dim, FeedForwardForm form,
                            Rng& rng);
CrossBlock make_cross_block(std::size_t d_model, std::size_t heads, std::size_t hidden_dim, FeedForwardForm form,
                            Rng& rng);

/// 4·d rounded up to a multiple of 8.
std::size_t default_hidden_dim(std::size_t d_model);

/// softmax(q·kᵀ / sqrt(d_k))·v over the last two axes; leading axes are
/// batch axes and must agree across q, k and v.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v);

/// Accepts [s, d] or [b, s, d] inputs.
Tensor multi_head_attention(const Tensor& x_q, const Tensor& x_kv, const AttentionBlock& block, const RunMode& mode);

Tensor feed_forward(const Tensor& x, const FeedForward& ff, const RunMode& mode);

/// Pre-norm residual layer in self-attention mode:
///   y = x + MHA(norm1(x), norm1(x)),  out = y + FF(norm2(y)).
Tensor layer_forward(const Tensor& x, const TransformerLayer& layer, const RunMode& mode);

/// Cross mode: queries from `x_q`, keys/values from `x_kv`, both normalized
/// with norm1. The residual path follows the query stream.
Tensor layer_forward(const Tensor& x_q, const Tensor& x_kv, const TransformerLayer& layer, const RunMode& mode);

/// Both directions read the same (text, vision) pair.
std::pair<Tensor, Tensor> cross_block_forward(const Tensor& text, const Tensor& vision, const CrossBlock& block,
                                              const RunMode& mode);

}  // namespace mmfx
