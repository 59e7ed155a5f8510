// Copyright 2026 The mmfx Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmfx/nn.hpp"

#include <cmath>
#include <string>

namespace mmfx {

Tensor dropout(const Tensor& x, double rate, const RunMode& mode) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout: rate must lie in [0, 1)");
  if (!mode.training || rate == 0.0) return x;
  if (mode.rng == nullptr) throw std::logic_error("dropout: training mode needs a generator");
  return dropout(x, rate, *mode.rng, true);
}

LinearLayer make_linear(std::size_t out, std::size_t in, bool with_bias, Rng& rng, double stddev) {
  LinearLayer layer;
  layer.weight = Tensor::randn({out, in}, stddev, rng, true);
  if (with_bias) layer.bias = Tensor::zeros({out}, true);
  return layer;
}

Tensor linear_forward(const LinearLayer& layer, const Tensor& x, const RunMode& mode) {
  Tensor y = layer.adapter ? lora_forward(*layer.adapter, x, mode) : linear(x, layer.weight);
  if (layer.bias) y = add(y, *layer.bias);
  return y;
}

AttentionBlock make_attention(std::size_t d_model, std::size_t heads, Rng& rng) {
  if (heads == 0 || d_model % heads != 0) {
    throw std::invalid_argument("attention: " + std::to_string(heads) + " heads do not divide d_model " +
                                std::to_string(d_model));
  }
  AttentionBlock block;
  block.wq = make_linear(d_model, d_model, false, rng);
  block.wk = make_linear(d_model, d_model, false, rng);
  block.wv = make_linear(d_model, d_model, false, rng);
  block.wo = make_linear(d_model, d_model, false, rng);
  block.heads = heads;
  return block;
}

FeedForward make_feed_forward(std::size_t d_model, std::size_t hidden_dim, FeedForwardForm form, Rng& rng) {
  FeedForward ff;
  ff.w1 = make_linear(hidden_dim, d_model, false, rng);
  ff.w2 = make_linear(d_model, hidden_dim, false, rng);
  ff.w3 = make_linear(hidden_dim, d_model, false, rng);
  ff.form = form;
  return ff;
}

TransformerLayer make_layer(std::size_t d_model, std::size_t heads, std::size_t hidden_dim, FeedForwardForm form,
                            Rng& rng) {
  TransformerLayer layer;
  layer.attn = make_attention(d_model, heads, rng);
  layer.ff = make_feed_forward(d_model, hidden_dim, form, rng);
  layer.norm1 = Tensor::full({d_model}, 1.0, true);
  layer.norm2 = Tensor::full({d_model}, 1.0, true);
  return layer;
}

CrossBlock make_cross_block(std::size_t d_model, std::size_t heads, std::size_t hidden_dim, FeedForwardForm form,
                            Rng& rng) {
  CrossBlock block;
  block.text_from_vision = make_layer(d_model, heads, hidden_dim, form, rng);
  block.vision_from_text = make_layer(d_model, heads, hidden_dim, form, rng);
  return block;
}

std::size_t default_hidden_dim(std::size_t d_model) { return (4 * d_model + 7) / 8 * 8; }

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  if (q.rank() < 2 || k.rank() != q.rank() || v.rank() != q.rank()) {
    throw ShapeError("attention: rank mismatch " + to_string(q.shape()) + ", " + to_string(k.shape()) + ", " +
                     to_string(v.shape()));
  }
  const std::size_t r = q.rank();
  if (q.shape()[r - 1] != k.shape()[r - 1]) {
    throw ShapeError("attention: query width " + to_string(q.shape()) + " differs from key width " +
                     to_string(k.shape()));
  }
  if (k.shape()[r - 2] != v.shape()[r - 2]) {
    throw ShapeError("attention: key length " + to_string(k.shape()) + " differs from value length " +
                     to_string(v.shape()));
  }
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(q.shape()[r - 1]));
  Tensor scores = scale(matmul(q, transpose(k)), inv_scale);
  return matmul(softmax_last(scores), v);
}

namespace {

// [b, s, d] -> [b, h, s, d/h]
Tensor split_heads(const Tensor& x, std::size_t heads) {
  const std::size_t b = x.dim(0), s = x.dim(1), d = x.dim(2);
  return swap_axes_1_2(reshape(x, {b, s, heads, d / heads}));
}

// [b, h, s, e] -> [b, s, h·e]
Tensor merge_heads(const Tensor& x) {
  const std::size_t b = x.dim(0), h = x.dim(1), s = x.dim(2), e = x.dim(3);
  return reshape(swap_axes_1_2(x), {b, s, h * e});
}

}  // namespace

Tensor multi_head_attention(const Tensor& x_q, const Tensor& x_kv, const AttentionBlock& block, const RunMode& mode) {
  const std::size_t d = block.model_dim();
  if (x_q.rank() != x_kv.rank() || (x_q.rank() != 2 && x_q.rank() != 3) || x_q.shape().back() != d ||
      x_kv.shape().back() != d || (x_q.rank() == 3 && x_q.dim(0) != x_kv.dim(0))) {
    throw ShapeError("multi_head_attention: inputs " + to_string(x_q.shape()) + " and " + to_string(x_kv.shape()) +
                     " do not match d_model " + std::to_string(d));
  }
  if (x_q.rank() == 2) {
    Tensor out = multi_head_attention(reshape(x_q, {1, x_q.dim(0), d}), reshape(x_kv, {1, x_kv.dim(0), d}), block, mode);
    return reshape(out, {x_q.dim(0), d});
  }
  Tensor q = split_heads(linear_forward(block.wq, x_q, mode), block.heads);
  Tensor k = split_heads(linear_forward(block.wk, x_kv, mode), block.heads);
  Tensor v = split_heads(linear_forward(block.wv, x_kv, mode), block.heads);
  return linear_forward(block.wo, merge_heads(attention(q, k, v)), mode);
}

Tensor feed_forward(const Tensor& x, const FeedForward& ff, const RunMode& mode) {
  Tensor a = linear_forward(ff.w1, x, mode);
  Tensor b = linear_forward(ff.w3, x, mode);
  Tensor hidden = ff.form == FeedForwardForm::kSiluOfProduct ? silu(mul(a, b)) : mul(silu(a), b);
  return linear_forward(ff.w2, hidden, mode);
}

Tensor layer_forward(const Tensor& x, const TransformerLayer& layer, const RunMode& mode) {
  Tensor normed = rms_norm(x, layer.norm1);
  Tensor y = add(x, multi_head_attention(normed, normed, layer.attn, mode));
  return add(y, feed_forward(rms_norm(y, layer.norm2), layer.ff, mode));
}

Tensor layer_forward(const Tensor& x_q, const Tensor& x_kv, const TransformerLayer& layer, const RunMode& mode) {
  if (x_q.same_storage(x_kv)) return layer_forward(x_q, layer, mode);
  Tensor y = add(x_q, multi_head_attention(rms_norm(x_q, layer.norm1), rms_norm(x_kv, layer.norm1), layer.attn, mode));
  return add(y, feed_forward(rms_norm(y, layer.norm2), layer.ff, mode));
}

std::pair<Tensor, Tensor> cross_block_forward(const Tensor& text, const Tensor& vision, const CrossBlock& block,
                                              const RunMode& mode) {
  if (text.shape().back() != vision.shape().back()) {
    throw ShapeError("cross_block_forward: stream widths differ " + to_string(text.shape()) + " vs " +
                     to_string(vision.shape()));
  }
  Tensor t = layer_forward(text, vision, block.text_from_vision, mode);
  Tensor v = layer_forward(vision, text, block.vision_from_text, mode);
  return {std::move(t), std::move(v)};
}

}  // namespace mmfx
