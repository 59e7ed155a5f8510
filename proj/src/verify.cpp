// Copyright 2026 The mmfx Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmfx/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <stdexcept>

#include "mmfx/grad_check.hpp"
#include "mmfx/lora.hpp"
#include "mmfx/model.hpp"
#include "mmfx/nn.hpp"
#include "mmfx/train.hpp"

namespace mmfx {

bool VerifyReport::passed() const {
  return std::all_of(suites.begin(), suites.end(), [](const SuiteResult& s) { return s.passed; });
}

nlohmann::json to_json(const VerifyReport& report) {
  nlohmann::json suites = nlohmann::json::array();
  for (const auto& s : report.suites) {
    suites.push_back({{"suite", s.name},
                      {"passed", s.passed},
                      {"max_error", s.max_error},
                      {"tolerance", s.tolerance},
                      {"cases", s.cases},
                      {"detail", s.detail}});
  }
  return {{"passed", report.passed()}, {"suites", suites}};
}

namespace {

bool fault(const char* suite) {
  const char* env = std::getenv("MMFX_VERIFY_FAULT");
  return env != nullptr && std::string(env) == suite;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

const std::vector<Fusion> kVariants{Fusion::kParallel, Fusion::kSerial, Fusion::kMixed};

ModelConfig tiny_config(Fusion fusion, double init_stddev) {
  ModelConfig cfg;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.n_levels = 2;
  cfg.vocab_size = 16;
  cfg.text_seq_len = 5;
  cfg.image_side = 8;
  cfg.patch_size = 4;
  cfg.fusion = fusion;
  cfg.init_stddev = init_stddev;
  return cfg;
}

struct TinyBatch {
  TokenBatch tokens;
  Tensor images;
  Tensor labels;
};

TinyBatch tiny_batch(const ModelConfig& cfg, std::size_t batch, Rng& rng) {
  TinyBatch b;
  b.tokens.batch = batch;
  b.tokens.seq_len = cfg.text_seq_len;
  for (std::size_t i = 0; i < batch * cfg.text_seq_len; ++i)
    b.tokens.ids.push_back(static_cast<std::int32_t>(rng.below(cfg.vocab_size)));
  std::vector<double> pixels(batch * cfg.image_side * cfg.image_side);
  for (auto& p : pixels) p = rng.uniform();
  b.images = Tensor({batch, cfg.image_side, cfg.image_side}, std::move(pixels));
  std::vector<double> labels(batch * cfg.n_classes);
  for (auto& l : labels) l = rng.bernoulli(0.3) ? 1.0 : 0.0;
  b.labels = Tensor({batch, cfg.n_classes}, std::move(labels));
  return b;
}

Tensor leaf(Shape shape, Rng& rng) { return Tensor::randn(std::move(shape), 1.0, rng, true); }

// Scalar probe of a tensor-valued output with fixed random weights.
Tensor probe(const Tensor& out, const Tensor& weights) { return sum(mul(out, weights)); }

void push_layer(std::vector<Tensor>& out, const TransformerLayer& l) {
  for (const auto* w : {&l.attn.wq, &l.attn.wk, &l.attn.wv, &l.attn.wo, &l.ff.w1, &l.ff.w2, &l.ff.w3})
    out.push_back(w->weight);
  out.push_back(l.norm1);
  out.push_back(l.norm2);
}

}  // namespace

SuiteResult verify_gradcheck() {
  SuiteResult r{"gradcheck", true, 0.0, GradCheckOptions{}.tolerance, 0, ""};
  Rng rng(11);
  auto record = [&](const std::string& name, const GradCheckReport& rep) {
    r.max_error = std::max(r.max_error, rep.max_rel_error);
    r.passed = r.passed && rep.passed;
    ++r.cases;
    r.detail += name + "=" + fmt(rep.max_rel_error) + " ";
  };

  Rng build_rng(3);
  const FusionModel blocks = build_model(tiny_config(Fusion::kSerial, 0.3), build_rng);
  const auto& layer = blocks.text_stack[0];

  {
    std::vector<Tensor> in{leaf({2, 3, 4}, rng), leaf({2, 5, 4}, rng), leaf({2, 5, 4}, rng)};
    const Tensor w = Tensor::randn({2, 3, 4}, 1.0, rng);
    record("attention", grad_check([&] { return probe(attention(in[0], in[1], in[2]), w); }, in));
  }
  {
    std::vector<Tensor> in{leaf({2, 3, 8}, rng), leaf({2, 4, 8}, rng)};
    for (const auto* l : {&layer.attn.wq, &layer.attn.wk, &layer.attn.wv, &layer.attn.wo}) in.push_back(l->weight);
    const Tensor w = Tensor::randn({2, 3, 8}, 1.0, rng);
    record("multi_head_attention",
           grad_check([&] { return probe(multi_head_attention(in[0], in[1], layer.attn, RunMode::eval()), w); }, in));
  }
  {
    std::vector<Tensor> in{leaf({2, 3, 8}, rng), layer.ff.w1.weight, layer.ff.w2.weight, layer.ff.w3.weight};
    const Tensor w = Tensor::randn({2, 3, 8}, 1.0, rng);
    record("feed_forward", grad_check([&] { return probe(feed_forward(in[0], layer.ff, RunMode::eval()), w); }, in));
  }
  {
    std::vector<Tensor> in{leaf({2, 3, 8}, rng)};
    push_layer(in, layer);
    const Tensor w = Tensor::randn({2, 3, 8}, 1.0, rng);
    record("layer", grad_check([&] { return probe(layer_forward(in[0], layer, RunMode::eval()), w); }, in));
  }
  {
    const auto& block = blocks.cross_blocks[0];
    std::vector<Tensor> in{leaf({2, 3, 8}, rng), leaf({2, 4, 8}, rng)};
    push_layer(in, block.text_from_vision);
    push_layer(in, block.vision_from_text);
    const Tensor wt = Tensor::randn({2, 3, 8}, 1.0, rng);
    const Tensor wv = Tensor::randn({2, 4, 8}, 1.0, rng);
    record("cross_block", grad_check(
                              [&] {
                                auto [t, v] = cross_block_forward(in[0], in[1], block, RunMode::eval());
                                return add(probe(t, wt), probe(v, wv));
                              },
                              in));
  }
  {
    const auto& head = blocks.head;
    std::vector<Tensor> in{leaf({3, 16}, rng), head.dense_linear.weight, *head.dense_linear.bias,
                           head.dense_cls.weight, *head.dense_cls.bias};
    const Tensor labels = Tensor({3, 14}, std::vector<double>(42, 0.0));
    record("head", grad_check(
                       [&] {
                         Rng dropout_rng(5);
                         return bce_loss(head_forward(head, in[0], RunMode::train(dropout_rng)), labels);
                       },
                       in));
  }
  {
    std::vector<Tensor> in{leaf({3, 4}, rng)};
    const Tensor labels({3, 4}, {1, 0, 0, 1, 0, 1, 1, 0, 0, 0, 1, 1});
    const bool broken = fault("gradcheck");
    record("bce", grad_check(
                      [&] {
                        Tensor loss = bce_loss(sigmoid(in[0]), labels);
                        if (!broken) return loss;
                        // A term autodiff never sees, so only the numeric side moves.
                        double extra = 0.0;
                        for (double x : in[0].data()) extra += 0.01 * x * x * x;
                        return add(loss, Tensor::scalar(extra));
                      },
                      in));
  }
  for (Fusion fusion : kVariants) {
    const ModelConfig cfg = tiny_config(fusion, 0.3);
    Rng model_rng(7);
    const FusionModel model = build_model(cfg, model_rng);
    Rng data_rng(8);
    const TinyBatch b = tiny_batch(cfg, 2, data_rng);
    std::vector<Tensor> in;
    for (const auto& p : model.named_parameters()) in.push_back(p.tensor);
    record("model_" + std::string(to_string(fusion)), grad_check(
                                                          [&] {
                                                            Rng dropout_rng(9);
                                                            return bce_loss(forward(model, b.tokens, b.images,
                                                                                    RunMode::train(dropout_rng)),
                                                                            b.labels);
                                                          },
                                                          in));
  }
  return r;
}

SuiteResult verify_lora_init() {
  SuiteResult r{"lora_init", true, 0.0, 1e-12, 0, ""};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    for (Fusion fusion : kVariants) {
      ModelConfig cfg = tiny_config(fusion, kInitStddev);
      cfg.d_model = 16;
      Rng rng(seed);
      FusionModel model = build_model(cfg, rng);
      Rng data_rng(seed + 100);
      const TinyBatch b = tiny_batch(cfg, 3, data_rng);
      const Tensor base = forward(model, b.tokens, b.images, RunMode::eval());
      Rng adapter_rng(seed + 200);
      wrap_model(model, LoraConfig{}, adapter_rng);
      if (fault("lora_init")) model.embedder.adapter->b.mutable_data()[0] = 0.1;
      const Tensor wrapped = forward(model, b.tokens, b.images, RunMode::eval());
      for (std::size_t i = 0; i < base.size(); ++i)
        r.max_error = std::max(r.max_error, std::abs(base.data()[i] - wrapped.data()[i]));
      ++r.cases;
    }
  }
  r.passed = r.max_error <= r.tolerance;
  r.detail = "max |wrapped - base| over 20 seeds x 3 variants";
  return r;
}

SuiteResult verify_lora_frozen() {
  SuiteResult r{"lora_frozen", true, 0.0, 0.0, 0, ""};
  for (Fusion fusion : kVariants) {
    const ModelConfig cfg = tiny_config(fusion, kInitStddev);
    Rng rng(21);
    FusionModel model = build_model(cfg, rng);
    wrap_model(model, LoraConfig{}, rng);
    if (fault("lora_frozen")) model.text_stack[0].attn.wq.weight.set_requires_grad(true);

    std::vector<std::pair<Tensor, std::vector<double>>> frozen;
    std::vector<std::pair<Tensor, std::vector<double>>> adapters;
    for (const auto& p : model.named_parameters()) {
      std::vector<double> copy(p.tensor.data().begin(), p.tensor.data().end());
      if (p.is_adapter) adapters.emplace_back(p.tensor, std::move(copy));
      else if (p.group != ParamGroup::kHead) frozen.emplace_back(p.tensor, std::move(copy));
    }

    auto params = model.trainable_parameters();
    AdamState state;
    TrainConfig tcfg;
    Rng data_rng(22);
    Rng dropout_rng(23);
    const TinyBatch b = tiny_batch(cfg, 4, data_rng);
    for (int step = 0; step < 10; ++step) {
      zero_grads(params);
      bce_loss(forward(model, b.tokens, b.images, RunMode::train(dropout_rng)), b.labels).backward();
      adam_step(params, state, tcfg);
    }

    for (const auto& [t, before] : frozen) {
      auto now = t.data();
      for (std::size_t i = 0; i < now.size(); ++i) r.max_error = std::max(r.max_error, std::abs(now[i] - before[i]));
      if (!std::equal(now.begin(), now.end(), before.begin())) r.passed = false;
    }
    bool moved = false;
    for (const auto& [t, before] : adapters) moved = moved || !std::equal(t.data().begin(), t.data().end(), before.begin());
    if (!moved) r.passed = false;
    r.detail += std::string(to_string(fusion)) + (moved ? ": adapters moved; " : ": adapters did not move; ");
    ++r.cases;
  }
  return r;
}

SuiteResult verify_param_parity() {
  SuiteResult r{"param_parity", true, 0.0, 0.0, 0, ""};
  Rng rng(2024);
  const std::size_t widths[] = {8, 12, 16, 24, 32};
  const std::size_t heads[] = {1, 2, 4};
  for (int i = 0; i < 5; ++i) {
    ModelConfig cfg;
    cfg.d_model = widths[rng.below(5)];
    do cfg.n_heads = heads[rng.below(3)];
    while (cfg.d_model % cfg.n_heads != 0);
    cfg.n_levels = 1 + rng.below(3);
    cfg.vocab_size = 10 + rng.below(50);
    cfg.text_seq_len = 3 + rng.below(10);
    cfg.patch_size = 2 + 2 * rng.below(2);
    cfg.image_side = cfg.patch_size * (2 + rng.below(3));
    cfg.hidden_dim = rng.bernoulli(0.5) ? 0 : 4 + rng.below(40);
    cfg.head_hidden = rng.bernoulli(0.5) ? 0 : 4 + rng.below(40);
    cfg.n_classes = 1 + rng.below(14);
    auto expected = expected_parameter_counts(cfg);
    if (fault("param_parity")) expected.total += 1;
    std::string line = "d=" + std::to_string(cfg.d_model) + " L=" + std::to_string(cfg.n_levels) + ":";
    for (Fusion fusion : kVariants) {
      cfg.fusion = fusion;
      Rng build_rng(i);
      const auto counts = count_parameters(build_model(cfg, build_rng));
      const double diff = std::abs(static_cast<double>(counts.total) - static_cast<double>(expected.total));
      r.max_error = std::max(r.max_error, diff);
      if (counts.total != expected.total) r.passed = false;
      line += " " + std::to_string(counts.total);
    }
    r.detail += line + "; ";
    ++r.cases;
  }
  return r;
}

SuiteResult verify_reduction_factor() {
  SuiteResult r{"reduction_factor", true, 0.0, 0.0, 0, ""};
  const bool broken = fault("reduction_factor");
  for (std::size_t rank : {1, 2, 4}) {
    for (Fusion fusion : kVariants) {
      ModelConfig cfg = tiny_config(fusion, kInitStddev);
      Rng rng(31);
      FusionModel model = build_model(cfg, rng);
      LoraConfig lcfg;
      lcfg.rank = rank;
      lcfg.targets = lora_target_names();
      wrap_model(model, lcfg, rng);
      for (const auto& m : trainable_param_report(model).matrices) {
        const double measured = static_cast<double>(m.adapter_params) / static_cast<double>(m.base_params);
        const double formula = reduction_factor(m.d, m.k, broken ? m.rank + 1 : m.rank);
        r.max_error = std::max(r.max_error, std::abs(measured - formula));
        if (measured != formula) r.passed = false;
        ++r.cases;
      }
    }
  }
  const double spot = reduction_factor(4096, 4096, 2);
  if (spot != 1.0 / 1024.0) r.passed = false;
  r.detail = "d=k=4096, r=2 -> " + fmt(spot) + " (1/1024 = " + fmt(1.0 / 1024.0) + ")";
  return r;
}

SuiteResult verify_auc_oracle() {
  SuiteResult r{"auc_oracle", true, 0.0, 1e-12, 0, ""};
  Rng rng(77);
  const double positive_rates[] = {0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0};
  std::size_t undefined = 0;
  for (int i = 0; i < 200; ++i) {
    const std::size_t n = 2 + rng.below(99);
    const bool discrete = rng.bernoulli(0.5);
    const double rate = positive_rates[rng.below(7)];
    std::vector<double> scores(n);
    std::vector<std::uint8_t> labels(n);
    for (std::size_t j = 0; j < n; ++j) {
      scores[j] = discrete ? static_cast<double>(rng.below(5)) / 4.0 : rng.uniform();
      labels[j] = rng.bernoulli(rate) ? 1 : 0;
    }
    std::vector<std::uint8_t> oracle_labels = labels;
    if (fault("auc_oracle")) oracle_labels[0] ^= 1;

    double wins = 0.0;
    std::size_t pairs = 0;
    for (std::size_t a = 0; a < n; ++a) {
      if (!oracle_labels[a]) continue;
      for (std::size_t b = 0; b < n; ++b) {
        if (oracle_labels[b]) continue;
        ++pairs;
        wins += scores[a] > scores[b] ? 1.0 : scores[a] == scores[b] ? 0.5 : 0.0;
      }
    }
    const auto got = roc_auc(scores, labels);
    if (pairs == 0) {
      ++undefined;
      if (got) r.passed = false;
    } else if (!got) {
      r.passed = false;
    } else {
      const double err = std::abs(*got - wins / static_cast<double>(pairs));
      r.max_error = std::max(r.max_error, err);
      if (err > r.tolerance) r.passed = false;
    }
    ++r.cases;
  }
  r.detail = std::to_string(undefined) + " degenerate instances reported undefined";
  return r;
}

std::vector<std::string> verify_suite_names() {
  return {"gradcheck", "lora_init", "lora_frozen", "param_parity", "reduction_factor", "auc_oracle"};
}

SuiteResult run_verify_suite(const std::string& name) {
  SuiteResult r;
  if (name == "gradcheck") {
    r = verify_gradcheck();
  } else if (name == "lora_init") {
    r = verify_lora_init();
  } else if (name == "lora_frozen") {
    r = verify_lora_frozen();
  } else if (name == "param_parity") {
    r = verify_param_parity();
  } else if (name == "reduction_factor") {
    r = verify_reduction_factor();
  } else if (name == "auc_oracle") {
    r = verify_auc_oracle();
  } else {
    throw std::invalid_argument("unknown verify suite '" + name + "'");
  }
  while (!r.detail.empty() && (r.detail.back() == ' ' || r.detail.back() == ';')) r.detail.pop_back();
  return r;
}

VerifyReport run_verify() {
  VerifyReport report;
  for (const auto& name : verify_suite_names()) report.suites.push_back(run_verify_suite(name));
  return report;
}

}  // namespace mmfx
