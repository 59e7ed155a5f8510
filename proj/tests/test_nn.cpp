// Copyright 2026 The mmfx Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include <gtest/gtest.h>

#include "helpers.hpp"
#include "mmfx/grad_check.hpp"
#include "mmfx/nn.hpp"

namespace mmfx {
namespace {

using testing::max_abs_diff;

// Plain row-major matrices for the oracles below.
using Mat = std::vector<std::vector<double>>;

Mat to_mat(const Tensor& t) {
  const std::size_t r = t.dim(0), c = t.dim(1);
  Mat m(r, std::vector<double>(c));
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) m[i][j] = t.data()[i * c + j];
  return m;
}

std::vector<double> flat(const Mat& m) {
  std::vector<double> out;
  for (const auto& row : m) out.insert(out.end(), row.begin(), row.end());
  return out;
}

Mat mm(const Mat& a, const Mat& b) {
  Mat out(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b[0].size(); ++j)
      for (std::size_t p = 0; p < b.size(); ++p) out[i][j] += a[i][p] * b[p][j];
  return out;
}

Mat tr(const Mat& a) {
  Mat out(a[0].size(), std::vector<double>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[0].size(); ++j) out[j][i] = a[i][j];
  return out;
}

Mat plus(const Mat& a, const Mat& b) {
  Mat out = a;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[0].size(); ++j) out[i][j] += b[i][j];
  return out;
}

Mat cols(const Mat& a, std::size_t from, std::size_t n) {
  Mat out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i].assign(a[i].begin() + from, a[i].begin() + from + n);
  return out;
}

Mat oracle_attention(const Mat& q, const Mat& k, const Mat& v) {
  Mat scores = mm(q, tr(k));
  const double scale = 1.0 / std::sqrt(static_cast<double>(q[0].size()));
  for (auto& row : scores) {
    double top = -1e300;
    for (double& s : row) top = std::max(top, s *= scale);
    double z = 0.0;
    for (double& s : row) z += (s = std::exp(s - top));
    for (double& s : row) s /= z;
  }
  return mm(scores, v);
}

Mat oracle_mha(const Mat& xq, const Mat& xkv, const AttentionBlock& b) {
  const Mat q = mm(xq, tr(to_mat(b.wq.weight)));
  const Mat k = mm(xkv, tr(to_mat(b.wk.weight)));
  const Mat v = mm(xkv, tr(to_mat(b.wv.weight)));
  const std::size_t e = b.head_dim();
  Mat concat(xq.size());
  for (std::size_t h = 0; h < b.heads; ++h) {
    const Mat head = oracle_attention(cols(q, h * e, e), cols(k, h * e, e), cols(v, h * e, e));
    for (std::size_t i = 0; i < head.size(); ++i) concat[i].insert(concat[i].end(), head[i].begin(), head[i].end());
  }
  return mm(concat, tr(to_mat(b.wo.weight)));
}

Mat oracle_rms(const Mat& x, const Tensor& gain) {
  Mat out = x;
  for (auto& row : out) {
    double ms = 0.0;
    for (double v : row) ms += v * v;
    const double inv = 1.0 / std::sqrt(ms / static_cast<double>(row.size()) + kRmsNormEps);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] *= inv * gain.data()[j];
  }
  return out;
}

Mat oracle_ff(const Mat& x, const FeedForward& ff) {
  Mat a = mm(x, tr(to_mat(ff.w1.weight)));
  const Mat b = mm(x, tr(to_mat(ff.w3.weight)));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[0].size(); ++j) {
      const double z = a[i][j] * b[i][j];
      a[i][j] = z / (1.0 + std::exp(-z));
    }
  return mm(a, tr(to_mat(ff.w2.weight)));
}

Mat oracle_layer(const Mat& xq, const Mat& xkv, const TransformerLayer& l) {
  const Mat y = plus(xq, oracle_mha(oracle_rms(xq, l.norm1), oracle_rms(xkv, l.norm1), l.attn));
  return plus(y, oracle_ff(oracle_rms(y, l.norm2), l.ff));
}

// Tensor is a handle, so writing through a copy updates the block's weight.
void fill_normal(Tensor t, double stddev, Rng& rng) {
  for (double& v : t.mutable_data()) v = stddev * rng.normal();
}

void zero_layer(TransformerLayer& l) {
  for (auto* w : {&l.attn.wq, &l.attn.wk, &l.attn.wv, &l.attn.wo, &l.ff.w1, &l.ff.w2, &l.ff.w3})
    for (double& v : w->weight.mutable_data()) v = 0.0;
}

Tensor eye(std::size_t n) {
  Tensor t = Tensor::zeros({n, n});
  for (std::size_t i = 0; i < n; ++i) t.mutable_data()[i * n + i] = 1.0;
  return t;
}

TEST(Attention, SingleKeyReturnsItsValue) {
  Rng rng(1);
  const Tensor q = Tensor::randn({4, 3}, 1.0, rng);
  const Tensor k = Tensor::randn({1, 3}, 1.0, rng);
  const Tensor v = Tensor::randn({1, 5}, 1.0, rng);
  const Tensor out = attention(q, k, v);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(out.at({i, j}), v.at({0, j}), 1e-15);
}

TEST(Attention, IdenticalKeysAverageValues) {
  Rng rng(2);
  const Tensor q = Tensor::randn({3, 2}, 1.0, rng);
  const Tensor k({4, 2}, {1, 2, 1, 2, 1, 2, 1, 2});
  const Tensor v = Tensor::randn({4, 3}, 1.0, rng);
  const Tensor out = attention(q, k, v);
  for (std::size_t j = 0; j < 3; ++j) {
    double m = 0.0;
    for (std::size_t r = 0; r < 4; ++r) m += v.at({r, j}) / 4.0;
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(out.at({i, j}), m, 1e-14);
  }
}

TEST(Attention, HandExample) {
  const Tensor out = attention(Tensor({1, 2}, {1, 0}), Tensor({2, 2}, {1, 0, 0, 1}), Tensor({2, 2}, {1, 0, 0, 1}));
  const double a = std::exp(1.0 / std::sqrt(2.0));
  EXPECT_NEAR(out.data()[0], a / (a + 1.0), 1e-15);
  EXPECT_NEAR(out.data()[1], 1.0 / (a + 1.0), 1e-15);
  EXPECT_NEAR(out.data()[0], 0.66976, 1e-5);
  EXPECT_NEAR(out.data()[1], 0.33024, 1e-5);
}

TEST(Attention, RowsAreConvexCombinationsOfValues) {
  Rng rng(3);
  const Tensor q = Tensor::randn({5, 4}, 2.0, rng);
  const Tensor k = Tensor::randn({6, 4}, 2.0, rng);
  const Tensor v = Tensor::randn({6, 3}, 1.0, rng);
  const Tensor out = attention(q, k, v);
  for (std::size_t j = 0; j < 3; ++j) {
    double lo = 1e300, hi = -1e300;
    for (std::size_t r = 0; r < 6; ++r) {
      lo = std::min(lo, v.at({r, j}));
      hi = std::max(hi, v.at({r, j}));
    }
    for (std::size_t i = 0; i < 5; ++i) {
      EXPECT_GE(out.at({i, j}), lo - 1e-12);
      EXPECT_LE(out.at({i, j}), hi + 1e-12);
    }
  }
}

TEST(Attention, MatchesOracleBatched) {
  Rng rng(4);
  const Tensor q = Tensor::randn({2, 3, 4}, 1.0, rng);
  const Tensor k = Tensor::randn({2, 5, 4}, 1.0, rng);
  const Tensor v = Tensor::randn({2, 5, 2}, 1.0, rng);
  const Tensor out = attention(q, k, v);
  for (std::size_t b = 0; b < 2; ++b) {
    auto slice = [&](const Tensor& t) {
      const std::size_t r = t.dim(1), c = t.dim(2);
      return to_mat(Tensor({r, c}, std::vector<double>(t.data().begin() + b * r * c, t.data().begin() + (b + 1) * r * c)));
    };
    const auto expected = flat(oracle_attention(slice(q), slice(k), slice(v)));
    EXPECT_LE(max_abs_diff(std::span(out.data()).subspan(b * 6, 6), expected), 1e-12);
  }
}

TEST(MultiHead, SingleHeadIdentityReducesToAttention) {
  Rng rng(5);
  AttentionBlock block = make_attention(4, 1, rng);
  for (auto* w : {&block.wq, &block.wk, &block.wv, &block.wo}) w->weight = eye(4);
  const Tensor xq = Tensor::randn({3, 4}, 1.0, rng);
  const Tensor xkv = Tensor::randn({5, 4}, 1.0, rng);
  EXPECT_LE(max_abs_diff(multi_head_attention(xq, xkv, block, RunMode::eval()), attention(xq, xkv, xkv)), 1e-14);
}

TEST(MultiHead, ZeroValueProjectionGivesZero) {
  Rng rng(6);
  AttentionBlock block = make_attention(8, 2, rng);
  block.wv.weight = Tensor::zeros({8, 8});
  const Tensor out = multi_head_attention(Tensor::randn({3, 8}, 1.0, rng), Tensor::randn({4, 8}, 1.0, rng), block,
                                          RunMode::eval());
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(MultiHead, MatchesHeadSlicingOracle) {
  Rng rng(7);
  for (std::size_t d : {4, 8}) {
    for (std::size_t h : {1, 2, 4}) {
      const AttentionBlock block = make_attention(d, h, rng);
      for (const auto* w : {&block.wq, &block.wk, &block.wv, &block.wo}) fill_normal(w->weight, 1.0, rng);
      const Tensor xq = Tensor::randn({3, d}, 1.0, rng);
      const Tensor xkv = Tensor::randn({5, d}, 1.0, rng);
      const auto expected = flat(oracle_mha(to_mat(xq), to_mat(xkv), block));
      EXPECT_LE(max_abs_diff(multi_head_attention(xq, xkv, block, RunMode::eval()).data(), expected), 1e-12)
          << "d=" << d << " h=" << h;
    }
  }
}

TEST(MultiHead, RejectsWrongWidth) {
  Rng rng(8);
  const AttentionBlock block = make_attention(4, 2, rng);
  EXPECT_THROW(multi_head_attention(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}), block, RunMode::eval()),
               ShapeError);
}

TEST(FeedForward, ScalarIdentityExample) {
  Rng rng(9);
  FeedForward ff = make_feed_forward(1, 1, FeedForwardForm::kSiluOfProduct, rng);
  for (auto* w : {&ff.w1, &ff.w2, &ff.w3}) w->weight = eye(1);
  const Tensor out = feed_forward(Tensor({1, 1}, {2.0}), ff, RunMode::eval());
  EXPECT_NEAR(out.item(), 4.0 / (1.0 + std::exp(-4.0)), 1e-14);
  EXPECT_NEAR(out.item(), 3.92806, 1e-5);
}

TEST(FeedForward, ZeroW1OrZeroInputGivesZero) {
  Rng rng(10);
  FeedForward ff = make_feed_forward(4, 8, FeedForwardForm::kSiluOfProduct, rng);
  const Tensor from_zero = feed_forward(Tensor::zeros({3, 4}), ff, RunMode::eval());
  for (double v : from_zero.data()) EXPECT_EQ(v, 0.0);
  ff.w1.weight = Tensor::zeros({8, 4});
  const Tensor from_random = feed_forward(Tensor::randn({3, 4}, 1.0, rng), ff, RunMode::eval());
  for (double v : from_random.data()) EXPECT_EQ(v, 0.0);
}

TEST(FeedForward, GatedFormDiffers) {
  Rng rng(11);
  FeedForward ff = make_feed_forward(4, 8, FeedForwardForm::kGated, rng);
  const Tensor x = Tensor::randn({2, 4}, 1.0, rng);
  const Tensor gated = feed_forward(x, ff, RunMode::eval());
  ff.form = FeedForwardForm::kSiluOfProduct;
  EXPECT_GT(max_abs_diff(gated, feed_forward(x, ff, RunMode::eval())), 0.0);
}

TEST(Layer, ZeroWeightsPassQueryThrough) {
  Rng rng(12);
  TransformerLayer layer = make_layer(8, 2, 16, FeedForwardForm::kSiluOfProduct, rng);
  zero_layer(layer);
  const Tensor x = Tensor::randn({2, 3, 8}, 1.0, rng);
  EXPECT_TRUE(testing::bitwise_equal(layer_forward(x, layer, RunMode::eval()), x));
  const Tensor kv = Tensor::randn({2, 5, 8}, 1.0, rng);
  EXPECT_TRUE(testing::bitwise_equal(layer_forward(x, kv, layer, RunMode::eval()), x));
}

TEST(Layer, OutputShapeFollowsQuery) {
  Rng rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t heads = 1 + rng.below(3);
    const std::size_t d = heads * (1 + rng.below(4));
    const TransformerLayer layer = make_layer(d, heads, default_hidden_dim(d), FeedForwardForm::kSiluOfProduct, rng);
    const std::size_t sq = 1 + rng.below(6), sk = 1 + rng.below(6);
    const Tensor out =
        layer_forward(Tensor::randn({sq, d}, 1.0, rng), Tensor::randn({sk, d}, 1.0, rng), layer, RunMode::eval());
    EXPECT_EQ(out.shape(), (Shape{sq, d}));
  }
}

TEST(Layer, MatchesCompositionOracle) {
  Rng rng(14);
  const TransformerLayer layer = make_layer(4, 2, 8, FeedForwardForm::kSiluOfProduct, rng);
  for (const auto* w : {&layer.attn.wq, &layer.attn.wk, &layer.attn.wv, &layer.attn.wo, &layer.ff.w1, &layer.ff.w2,
                        &layer.ff.w3})
    fill_normal(w->weight, 0.5, rng);
  Tensor gain = layer.norm1;
  for (double& g : gain.mutable_data()) g = 1.0 + 0.1 * rng.normal();
  const Tensor x = Tensor::randn({2, 4}, 1.0, rng);
  const auto expected = flat(oracle_layer(to_mat(x), to_mat(x), layer));
  EXPECT_LE(max_abs_diff(layer_forward(x, layer, RunMode::eval()).data(), expected), 1e-12);
  const Tensor kv = Tensor::randn({3, 4}, 1.0, rng);
  EXPECT_LE(max_abs_diff(layer_forward(x, kv, layer, RunMode::eval()).data(),
                         flat(oracle_layer(to_mat(x), to_mat(kv), layer))),
            1e-12);
}

TEST(CrossBlock, ZeroWeightsLeaveStreams) {
  Rng rng(15);
  CrossBlock block = make_cross_block(8, 2, 16, FeedForwardForm::kSiluOfProduct, rng);
  zero_layer(block.text_from_vision);
  zero_layer(block.vision_from_text);
  const Tensor t = Tensor::randn({3, 8}, 1.0, rng);
  const Tensor v = Tensor::randn({4, 8}, 1.0, rng);
  auto [t2, v2] = cross_block_forward(t, v, block, RunMode::eval());
  EXPECT_TRUE(testing::bitwise_equal(t2, t));
  EXPECT_TRUE(testing::bitwise_equal(v2, v));
}

TEST(CrossBlock, SwappingStreamsAndDirectionsSwapsOutputs) {
  Rng rng(16);
  const CrossBlock block = make_cross_block(8, 2, 16, FeedForwardForm::kSiluOfProduct, rng);
  const CrossBlock swapped{block.vision_from_text, block.text_from_vision};
  const Tensor t = Tensor::randn({3, 8}, 1.0, rng);
  const Tensor v = Tensor::randn({4, 8}, 1.0, rng);
  auto [t1, v1] = cross_block_forward(t, v, block, RunMode::eval());
  auto [v2, t2] = cross_block_forward(v, t, swapped, RunMode::eval());
  EXPECT_TRUE(testing::bitwise_equal(t1, t2));
  EXPECT_TRUE(testing::bitwise_equal(v1, v2));
}

TEST(CrossBlock, EqualsTwoLayerCalls) {
  Rng rng(17);
  const CrossBlock block = make_cross_block(8, 2, 16, FeedForwardForm::kSiluOfProduct, rng);
  const Tensor t = Tensor::randn({2, 3, 8}, 1.0, rng);
  const Tensor v = Tensor::randn({2, 4, 8}, 1.0, rng);
  auto [t1, v1] = cross_block_forward(t, v, block, RunMode::eval());
  EXPECT_LE(max_abs_diff(t1, layer_forward(t, v, block.text_from_vision, RunMode::eval())), 1e-15);
  EXPECT_LE(max_abs_diff(v1, layer_forward(v, t, block.vision_from_text, RunMode::eval())), 1e-15);
}

TEST(CrossBlock, KeyValuePermutationDoesNotMatter) {
  Rng rng(18);
  const CrossBlock block = make_cross_block(8, 2, 16, FeedForwardForm::kSiluOfProduct, rng);
  const Tensor t = Tensor::randn({3, 8}, 1.0, rng);
  const Tensor v = Tensor::randn({4, 8}, 1.0, rng);
  std::vector<double> rev;
  for (std::size_t r = 4; r-- > 0;) rev.insert(rev.end(), v.data().begin() + r * 8, v.data().begin() + (r + 1) * 8);
  const Tensor v_rev({4, 8}, rev);
  auto [t1, unused1] = cross_block_forward(t, v, block, RunMode::eval());
  auto [t2, unused2] = cross_block_forward(t, v_rev, block, RunMode::eval());
  EXPECT_LE(max_abs_diff(t1, t2), 1e-12);
}

TEST(Blocks, GradientsPassGradCheck) {
  Rng rng(19);
  const TransformerLayer layer = make_layer(8, 2, 16, FeedForwardForm::kSiluOfProduct, rng);
  std::vector<Tensor> in{Tensor::randn({2, 3, 8}, 1.0, rng, true), Tensor::randn({2, 4, 8}, 1.0, rng, true)};
  for (auto* w : {&layer.attn.wq, &layer.attn.wk, &layer.attn.wv, &layer.attn.wo, &layer.ff.w1, &layer.ff.w2,
                  &layer.ff.w3}) {
    Tensor weight = w->weight;
    for (double& v : weight.mutable_data()) v *= 15.0;  // 0.3 std, away from the linear regime
    in.push_back(weight);
  }
  in.push_back(layer.norm1);
  in.push_back(layer.norm2);
  const Tensor probe = Tensor::randn({2, 3, 8}, 1.0, rng);
  const auto report =
      grad_check([&] { return sum(mul(layer_forward(in[0], in[1], layer, RunMode::eval()), probe)); }, in);
  EXPECT_TRUE(report.passed) << report.max_rel_error;
}

}  // namespace
}  // namespace mmfx
