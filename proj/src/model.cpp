// Copyright 2026 The mmfx Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmfx/model.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

namespace mmfx {

std::string_view to_string(Fusion fusion) {
  switch (fusion) {
    case Fusion::kParallel: return "parallel";
    case Fusion::kSerial: return "serial";
    case Fusion::kMixed: return "mixed";
  }
  return "unknown";
}

Fusion parse_fusion(std::string_view name) {
  if (name == "parallel") return Fusion::kParallel;
  if (name == "serial") return Fusion::kSerial;
  if (name == "mixed") return Fusion::kMixed;
  throw std::invalid_argument("unknown fusion variant '" + std::string(name) + "' (expected parallel, serial or mixed)");
}

std::string_view to_string(ParamGroup group) {
  switch (group) {
    case ParamGroup::kEmbeddings: return "embeddings";
    case ParamGroup::kText: return "text";
    case ParamGroup::kVision: return "vision";
    case ParamGroup::kCross: return "cross";
    case ParamGroup::kHead: return "head";
  }
  return "unknown";
}

void ModelConfig::validate() const {
  std::vector<std::string> problems;
  if (d_model == 0) problems.emplace_back("d_model must be positive");
  if (n_heads == 0) {
    problems.emplace_back("n_heads must be positive");
  } else if (d_model % n_heads != 0) {
    problems.push_back("n_heads (" + std::to_string(n_heads) + ") must divide d_model (" + std::to_string(d_model) + ")");
  }
  if (n_levels == 0) problems.emplace_back("n_levels must be positive");
  if (vocab_size < 4) problems.emplace_back("vocab_size must exceed the 3 reserved ids");
  if (text_seq_len == 0) problems.emplace_back("text_seq_len must be positive");
  if (patch_size == 0) {
    problems.emplace_back("patch_size must be positive");
  } else if (image_side == 0 || image_side % patch_size != 0) {
    problems.push_back("image_side (" + std::to_string(image_side) + ") must be a positive multiple of patch_size (" +
                       std::to_string(patch_size) + ")");
  }
  if (n_classes == 0) problems.emplace_back("n_classes must be at least 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) problems.emplace_back("dropout_rate must lie in [0, 1)");
  if (!(init_stddev > 0.0)) problems.emplace_back("init_stddev must be positive");
  if (!problems.empty()) {
    std::ostringstream os;
    os << "invalid model config:";
    for (const auto& p : problems) os << "\n  - " << p;
    throw std::invalid_argument(os.str());
  }
}

void to_json(nlohmann::json& j, const ModelConfig& cfg) {
  j = nlohmann::json{
      {"d_model", cfg.d_model},
      {"n_heads", cfg.n_heads},
      {"n_levels", cfg.n_levels},
      {"hidden_dim", cfg.resolved_hidden_dim()},
      {"vocab_size", cfg.vocab_size},
      {"text_seq_len", cfg.text_seq_len},
      {"image_side", cfg.image_side},
      {"patch_size", cfg.patch_size},
      {"n_classes", cfg.n_classes},
      {"dropout_rate", cfg.dropout_rate},
      {"fusion", std::string(to_string(cfg.fusion))},
      {"head_hidden", cfg.resolved_head_hidden()},
      {"ff_form", cfg.ff_form == FeedForwardForm::kSiluOfProduct ? "silu_of_product" : "gated"},
      {"init_stddev", cfg.init_stddev},
  };
}

void from_json(const nlohmann::json& j, ModelConfig& cfg) {
  static const std::vector<std::string> known{"d_model",   "n_heads",     "n_levels",     "hidden_dim", "vocab_size",
                                              "text_seq_len", "image_side", "patch_size", "n_classes", "dropout_rate",
                                              "fusion",    "head_hidden", "ff_form",      "init_stddev"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw std::invalid_argument("unknown model config field '" + key + "'");
    }
  }
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("d_model", cfg.d_model);
  get("n_heads", cfg.n_heads);
  get("n_levels", cfg.n_levels);
  get("hidden_dim", cfg.hidden_dim);
  get("vocab_size", cfg.vocab_size);
  get("text_seq_len", cfg.text_seq_len);
  get("image_side", cfg.image_side);
  get("patch_size", cfg.patch_size);
  get("n_classes", cfg.n_classes);
  get("dropout_rate", cfg.dropout_rate);
  get("head_hidden", cfg.head_hidden);
  get("init_stddev", cfg.init_stddev);
  if (j.contains("fusion")) cfg.fusion = parse_fusion(j.at("fusion").get<std::string>());
  if (j.contains("ff_form")) {
    const auto form = j.at("ff_form").get<std::string>();
    if (form == "silu_of_product") {
      cfg.ff_form = FeedForwardForm::kSiluOfProduct;
    } else if (form == "gated") {
      cfg.ff_form = FeedForwardForm::kGated;
    } else {
      throw std::invalid_argument("unknown ff_form '" + form + "' (expected silu_of_product or gated)");
    }
  }
}

// ---------------------------------------------------------------------------

namespace {

template <typename Model, typename Visit>
void visit_linears(Model& m, Visit&& visit) {
  auto layer = [&](const std::string& prefix, ParamGroup group, auto& l) {
    visit(prefix + ".attn.wq", "wq", group, l.attn.wq);
    visit(prefix + ".attn.wk", "wk", group, l.attn.wk);
    visit(prefix + ".attn.wv", "wv", group, l.attn.wv);
    visit(prefix + ".attn.wo", "wo", group, l.attn.wo);
    visit(prefix + ".ff.w1", "w1", group, l.ff.w1);
    visit(prefix + ".ff.w2", "w2", group, l.ff.w2);
    visit(prefix + ".ff.w3", "w3", group, l.ff.w3);
  };
  visit(std::string("vision_proj.weight"), "vision_proj", ParamGroup::kEmbeddings, m.projector.proj);
  for (std::size_t i = 0; i < m.text_stack.size(); ++i) layer("text." + std::to_string(i), ParamGroup::kText, m.text_stack[i]);
  for (std::size_t i = 0; i < m.vision_stack.size(); ++i)
    layer("vision." + std::to_string(i), ParamGroup::kVision, m.vision_stack[i]);
  for (std::size_t i = 0; i < m.cross_blocks.size(); ++i) {
    layer("cross." + std::to_string(i) + ".text_from_vision", ParamGroup::kCross, m.cross_blocks[i].text_from_vision);
    layer("cross." + std::to_string(i) + ".vision_from_text", ParamGroup::kCross, m.cross_blocks[i].vision_from_text);
  }
  visit(std::string("head.dense_linear"), "dense_linear", ParamGroup::kHead, m.head.dense_linear);
  visit(std::string("head.dense_cls"), "dense_cls", ParamGroup::kHead, m.head.dense_cls);
}

void push_adapter(std::vector<NamedParameter>& out, const std::string& name, ParamGroup group,
                  const std::optional<LoraAdapter>& adapter) {
  if (!adapter) return;
  out.push_back({name + ".lora_a", group, adapter->a, true});
  out.push_back({name + ".lora_b", group, adapter->b, true});
}

}  // namespace

std::vector<NamedParameter> FusionModel::named_parameters() const {
  std::vector<NamedParameter> out;
  out.push_back({"embed.token", ParamGroup::kEmbeddings, embedder.token_table});
  push_adapter(out, "embed.token", ParamGroup::kEmbeddings, embedder.adapter);
  out.push_back({"embed.pos", ParamGroup::kEmbeddings, embedder.pos_table});
  out.push_back({"vision_proj.pos", ParamGroup::kEmbeddings, projector.pos_table});

  auto norms = [&](const std::string& prefix, ParamGroup group, const TransformerLayer& l) {
    out.push_back({prefix + ".norm1", group, l.norm1});
    out.push_back({prefix + ".norm2", group, l.norm2});
  };
  for (std::size_t i = 0; i < text_stack.size(); ++i) norms("text." + std::to_string(i), ParamGroup::kText, text_stack[i]);
  for (std::size_t i = 0; i < vision_stack.size(); ++i)
    norms("vision." + std::to_string(i), ParamGroup::kVision, vision_stack[i]);
  for (std::size_t i = 0; i < cross_blocks.size(); ++i) {
    norms("cross." + std::to_string(i) + ".text_from_vision", ParamGroup::kCross, cross_blocks[i].text_from_vision);
    norms("cross." + std::to_string(i) + ".vision_from_text", ParamGroup::kCross, cross_blocks[i].vision_from_text);
  }

  visit_linears(*this, [&](const std::string& name, const char*, ParamGroup group, const LinearLayer& l) {
    const bool head = group == ParamGroup::kHead;
    const std::string weight_name = head ? name + ".weight" : name;
    out.push_back({weight_name, group, l.weight});
    if (l.bias) out.push_back({name + ".bias", group, *l.bias});
    push_adapter(out, weight_name, group, l.adapter);
  });
  return out;
}

std::vector<NamedLinear> FusionModel::named_linears() {
  std::vector<NamedLinear> out;
  visit_linears(*this, [&](const std::string& name, const char* role, ParamGroup group, LinearLayer& l) {
    out.push_back({name, role, group, &l});
  });
  return out;
}

std::vector<std::pair<std::string, const LoraAdapter*>> FusionModel::adapters() const {
  std::vector<std::pair<std::string, const LoraAdapter*>> out;
  if (embedder.adapter) out.emplace_back("embed.token", &*embedder.adapter);
  visit_linears(*this, [&](const std::string& name, const char*, ParamGroup group, const LinearLayer& l) {
    if (l.adapter) out.emplace_back(group == ParamGroup::kHead ? name + ".weight" : name, &*l.adapter);
  });
  return out;
}

std::vector<Tensor> FusionModel::trainable_parameters() const {
  std::vector<Tensor> out;
  for (auto& p : named_parameters())
    if (p.tensor.requires_grad()) out.push_back(p.tensor);
  return out;
}

FusionModel build_model(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t d = cfg.d_model;
  const std::size_t hidden = cfg.resolved_hidden_dim();
  const std::size_t head_hidden = cfg.resolved_head_hidden();
  const double stddev = cfg.init_stddev;

  FusionModel m;
  m.config = cfg;
  m.embedder.token_table = Tensor::randn({cfg.vocab_size, d}, stddev, rng, true);
  m.embedder.pos_table = Tensor::randn({cfg.text_seq_len, d}, stddev, rng, true);
  m.projector.patch_size = cfg.patch_size;
  m.projector.proj = make_linear(d, cfg.patch_size * cfg.patch_size, false, rng, stddev);
  m.projector.pos_table = Tensor::randn({cfg.patch_count(), d}, stddev, rng, true);

  auto make = [&]() {
    TransformerLayer l;
    l.attn.wq = make_linear(d, d, false, rng, stddev);
    l.attn.wk = make_linear(d, d, false, rng, stddev);
    l.attn.wv = make_linear(d, d, false, rng, stddev);
    l.attn.wo = make_linear(d, d, false, rng, stddev);
    l.attn.heads = cfg.n_heads;
    l.ff.w1 = make_linear(hidden, d, false, rng, stddev);
    l.ff.w2 = make_linear(d, hidden, false, rng, stddev);
    l.ff.w3 = make_linear(hidden, d, false, rng, stddev);
    l.ff.form = cfg.ff_form;
    l.norm1 = Tensor::full({d}, 1.0, true);
    l.norm2 = Tensor::full({d}, 1.0, true);
    return l;
  };
  for (std::size_t i = 0; i < cfg.n_levels; ++i) m.text_stack.push_back(make());
  for (std::size_t i = 0; i < cfg.n_levels; ++i) m.vision_stack.push_back(make());
  for (std::size_t i = 0; i < cfg.n_levels; ++i) {
    CrossBlock block;
    block.text_from_vision = make();
    block.vision_from_text = make();
    m.cross_blocks.push_back(std::move(block));
  }
  m.head.dense_linear = make_linear(head_hidden, 2 * d, true, rng, stddev);
  m.head.dense_cls = make_linear(cfg.n_classes, head_hidden, true, rng, stddev);
  m.head.dropout_rate = cfg.dropout_rate;
  return m;
}

namespace {

Tensor run_stack(Tensor x, const std::vector<TransformerLayer>& stack, const RunMode& mode) {
  for (const auto& layer : stack) x = layer_forward(x, layer, mode);
  return x;
}

Tensor average(const Tensor& a, const Tensor& b) { return scale(add(a, b), 0.5); }

}  // namespace

Tensor fused_features(const FusionModel& model, const TokenBatch& text_ids, const Tensor& images, const RunMode& mode) {
  const auto& cfg = model.config;
  if (images.rank() != 3 || images.dim(0) != text_ids.batch) {
    throw ShapeError("forward: text batch of " + std::to_string(text_ids.batch) + " does not match image batch " +
                     to_string(images.shape()));
  }
  if (text_ids.seq_len != cfg.text_seq_len) {
    throw ShapeError("forward: text length " + std::to_string(text_ids.seq_len) + " differs from configured " +
                     std::to_string(cfg.text_seq_len));
  }
  Tensor t0 = embed_text(model.embedder, text_ids, mode);
  Tensor v0 = patchify_project(model.projector, images, mode);
  if (model.input_mask.zero_text) t0 = Tensor::zeros(t0.shape());
  if (model.input_mask.zero_vision) v0 = Tensor::zeros(v0.shape());

  Tensor t = t0;
  Tensor v = v0;
  const auto& blocks = model.cross_blocks;
  switch (cfg.fusion) {
    case Fusion::kParallel:
      // The modality stacks do not reach the head in this wiring.
      for (const auto& block : blocks) std::tie(t, v) = cross_block_forward(t, v, block, mode);
      break;
    case Fusion::kSerial:
      t = run_stack(t0, model.text_stack, mode);
      v = run_stack(v0, model.vision_stack, mode);
      for (const auto& block : blocks) std::tie(t, v) = cross_block_forward(t, v, block, mode);
      break;
    case Fusion::kMixed: {
      for (std::size_t i = 0; i + 1 < blocks.size(); ++i) std::tie(t, v) = cross_block_forward(t, v, blocks[i], mode);
      Tensor ts = run_stack(t0, model.text_stack, mode);
      Tensor vs = run_stack(v0, model.vision_stack, mode);
      std::tie(t, v) = cross_block_forward(average(t, ts), average(v, vs), blocks.back(), mode);
      break;
    }
  }
  return concat_last(mean_axis1(t), mean_axis1(v));
}

Tensor head_forward(const ClassifierHead& head, const Tensor& pooled, const RunMode& mode) {
  Tensor hidden = tanh(linear_forward(head.dense_linear, pooled, mode));
  hidden = dropout(hidden, head.dropout_rate, mode);
  return sigmoid(linear_forward(head.dense_cls, hidden, mode));
}

Tensor forward(const FusionModel& model, const TokenBatch& text_ids, const Tensor& images, const RunMode& mode) {
  return head_forward(model.head, fused_features(model, text_ids, images, mode), mode);
}

ParameterCounts count_parameters(const FusionModel& model) {
  ParameterCounts c;
  for (const auto& p : model.named_parameters()) {
    if (p.is_adapter) continue;
    const std::size_t n = p.tensor.size();
    switch (p.group) {
      case ParamGroup::kEmbeddings: c.embeddings += n; break;
      case ParamGroup::kText: c.text += n; break;
      case ParamGroup::kVision: c.vision += n; break;
      case ParamGroup::kCross: c.cross += n; break;
      case ParamGroup::kHead: c.head += n; break;
    }
  }
  c.total = c.embeddings + c.text + c.vision + c.cross + c.head;
  return c;
}

ParameterCounts expected_parameter_counts(const ModelConfig& cfg) {
  const std::size_t d = cfg.d_model;
  const std::size_t hidden = cfg.resolved_hidden_dim();
  const std::size_t hh = cfg.resolved_head_hidden();
  const std::size_t p2 = cfg.patch_size * cfg.patch_size;
  const std::size_t per_layer = 4 * d * d + 3 * d * hidden + 2 * d;
  ParameterCounts c;
  c.embeddings = cfg.vocab_size * d + cfg.text_seq_len * d + d * p2 + cfg.patch_count() * d;
  c.text = cfg.n_levels * per_layer;
  c.vision = cfg.n_levels * per_layer;
  c.cross = cfg.n_levels * 2 * per_layer;
  c.head = 2 * d * hh + hh + hh * cfg.n_classes + cfg.n_classes;
  c.total = c.embeddings + c.text + c.vision + c.cross + c.head;
  return c;
}

void zero_cross_weights(FusionModel& model) {
  for (auto& nl : model.named_linears()) {
    if (nl.group != ParamGroup::kCross) continue;
    auto w = nl.layer->weight.mutable_data();
    std::fill(w.begin(), w.end(), 0.0);
  }
}

}  // namespace mmfx
