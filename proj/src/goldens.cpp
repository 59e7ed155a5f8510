// Copyright 2026 The mmfx Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmfx/goldens.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "mmfx/checkpoint.hpp"
#include "mmfx/nn.hpp"

namespace mmfx {
namespace {

double max_diff(const Tensor& got, const Tensor& want) {
  if (got.shape() != want.shape()) return INFINITY;
  double worst = 0.0;
  for (std::size_t i = 0; i < got.size(); ++i) worst = std::max(worst, std::abs(got.data()[i] - want.data()[i]));
  return worst;
}

LinearLayer plain(const Tensor& w) { return LinearLayer{w, std::nullopt, std::nullopt}; }

AttentionBlock attention_block(const TensorTable& t, std::size_t heads) {
  AttentionBlock b{plain(t.at("wq")), plain(t.at("wk")), plain(t.at("wv")), plain(t.at("wo")), heads};
  return b;
}

FeedForward ff_block(const TensorTable& t, FeedForwardForm form) {
  return FeedForward{plain(t.at("w1")), plain(t.at("w2")), plain(t.at("w3")), form};
}

TransformerLayer layer_block(const TensorTable& t, std::size_t heads) {
  return TransformerLayer{attention_block(t, heads), ff_block(t, FeedForwardForm::kSiluOfProduct), t.at("norm1"),
                          t.at("norm2")};
}

double replay(const std::string& name, const TensorTable& t, const nlohmann::json& cfg) {
  const RunMode eval = RunMode::eval();
  const std::size_t heads = cfg.value("heads", std::size_t{1});
  if (name == "attention_hand" || name == "attention_random") {
    return max_diff(attention(t.at("q"), t.at("k"), t.at("v")), t.at("out"));
  }
  if (name == "multi_head_attention") {
    return max_diff(multi_head_attention(t.at("x_q"), t.at("x_kv"), attention_block(t, heads), eval), t.at("out"));
  }
  if (name == "feed_forward_silu_of_product" || name == "feed_forward_gated") {
    const auto form = cfg.at("form") == "gated" ? FeedForwardForm::kGated : FeedForwardForm::kSiluOfProduct;
    return max_diff(feed_forward(t.at("x"), ff_block(t, form), eval), t.at("out"));
  }
  if (name == "attention_residual") {
    const Tensor n = rms_norm(t.at("x"), t.at("norm1"));
    return max_diff(add(t.at("x"), multi_head_attention(n, n, attention_block(t, heads), eval)), t.at("out"));
  }
  if (name == "layer_self") return max_diff(layer_forward(t.at("x"), layer_block(t, heads), eval), t.at("out"));
  if (name == "layer_cross") {
    return max_diff(layer_forward(t.at("x_q"), t.at("x_kv"), layer_block(t, heads), eval), t.at("out"));
  }
  if (name == "lora") {
    LoraConfig lcfg;
    lcfg.rank = cfg.at("rank");
    lcfg.alpha = cfg.at("alpha");
    lcfg.dropout_rate = 0.0;
    Rng rng(0);
    LoraAdapter adapter = make_lora_adapter(t.at("w0").clone(), false, lcfg, rng);
    adapter.a = t.at("a");
    adapter.b = t.at("b");
    return std::max(max_diff(lora_forward(adapter, t.at("x"), eval), t.at("out")),
                    max_diff(merge_weights(adapter), t.at("merged")));
  }
  throw std::invalid_argument("golden case '" + name + "' has no replay");
}

}  // namespace

std::vector<GoldenResult> check_goldens(const std::filesystem::path& dir) {
  std::ifstream in(dir / "index.json");
  if (!in) throw std::runtime_error("cannot open " + (dir / "index.json").string());
  const auto index = nlohmann::json::parse(in);
  std::vector<GoldenResult> results;
  for (const auto& entry : index.at("cases")) {
    GoldenResult r;
    r.name = entry.at("name");
    r.covers = entry.at("covers");
    r.tolerance = entry.at("tolerance");
    const TensorTable table = read_mmfx(dir / entry.at("file").get<std::string>());
    r.max_error = replay(r.name, table, nlohmann::json::parse(table.config));
    r.passed = r.max_error <= r.tolerance;
    results.push_back(r);
  }
  return results;
}

}  // namespace mmfx
