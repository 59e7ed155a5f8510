// Copyright 2026 The mmfx Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmfx/lora.hpp"

#include <map>
#include <sstream>
#include <stdexcept>

#include "mmfx/model.hpp"
#include "mmfx/nn.hpp"

namespace mmfx {

void LoraConfig::validate() const {
  std::vector<std::string> problems;
  if (rank == 0) problems.emplace_back("rank must be at least 1");
  if (!(alpha > 0.0)) problems.emplace_back("alpha must be positive");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) problems.emplace_back("dropout_rate must lie in [0, 1)");
  if (!(init_stddev > 0.0)) problems.emplace_back("init_stddev must be positive");
  for (const auto& t : targets) {
    if (!lora_target_names().count(t)) problems.push_back("unknown target module '" + t + "'");
  }
  if (!problems.empty()) {
    std::ostringstream os;
    os << "invalid LoRA config:";
    for (const auto& p : problems) os << "\n  - " << p;
    throw std::invalid_argument(os.str());
  }
}

LoraAdapter make_lora_adapter(Tensor base, bool base_transposed, const LoraConfig& cfg, Rng& rng) {
  if (base.rank() != 2) throw ShapeError("LoRA base must be a matrix, got " + to_string(base.shape()));
  const std::size_t d = base_transposed ? base.dim(1) : base.dim(0);
  const std::size_t k = base_transposed ? base.dim(0) : base.dim(1);
  LoraAdapter ad;
  base.set_requires_grad(false);
  base.clear_grad();
  ad.base = std::move(base);
  ad.base_transposed = base_transposed;
  ad.a = Tensor::randn({cfg.rank, k}, cfg.init_stddev, rng, true);
  ad.b = Tensor::zeros({d, cfg.rank}, true);
  ad.alpha = cfg.alpha;
  ad.rank = cfg.rank;
  ad.dropout_rate = cfg.dropout_rate;
  return ad;
}

Tensor lora_forward(const LoraAdapter& adapter, const Tensor& x, const RunMode& mode) {
  if (adapter.base_transposed) throw std::logic_error("lora_forward: embedding adapters are applied by embed_text");
  if (x.rank() < 1 || x.shape().back() != adapter.in_features()) {
    throw ShapeError("lora_forward: input " + to_string(x.shape()) + " does not match adapter width " +
                     std::to_string(adapter.in_features()));
  }
  Tensor base_out = linear(x, adapter.base);
  Tensor update = linear(linear(dropout(x, adapter.dropout_rate, mode), adapter.a), adapter.b);
  return add(base_out, scale(update, adapter.scale()));
}

Tensor merge_weights(const LoraAdapter& adapter) {
  const std::size_t d = adapter.out_features();
  const std::size_t k = adapter.in_features();
  RowMatrix merged = adapter.base_transposed ? RowMatrix(adapter.base.matrix().transpose()) : RowMatrix(adapter.base.matrix());
  merged.noalias() += adapter.scale() * (adapter.b.matrix() * adapter.a.matrix());
  return Tensor({d, k}, std::vector<double>(merged.data(), merged.data() + merged.size()));
}

double reduction_factor(std::size_t d, std::size_t k, std::size_t r) {
  if (d == 0 || k == 0 || r == 0) throw std::invalid_argument("reduction_factor: extents must be positive");
  if (r > std::min(d, k)) {
    throw std::invalid_argument("reduction_factor: rank " + std::to_string(r) + " exceeds min(d, k) = " +
                                std::to_string(std::min(d, k)));
  }
  // r(1/d + 1/k) written over a common denominator: a single rounding, so it
  // matches (adapter params) / (base params) computed from integer counts.
  return static_cast<double>(r * (d + k)) / static_cast<double>(d * k);
}

std::size_t wrap_model(FusionModel& model, const LoraConfig& cfg, Rng& rng) {
  cfg.validate();
  if (model.is_wrapped()) throw std::logic_error("wrap_model: model already carries LoRA adapters");

  for (auto& p : model.named_parameters()) {
    if (p.group != ParamGroup::kHead) {
      p.tensor.set_requires_grad(false);
      p.tensor.clear_grad();
    }
  }

  std::size_t attached = 0;
  for (auto& nl : model.named_linears()) {
    if (nl.group == ParamGroup::kHead || !cfg.targets.count(nl.role)) continue;
    nl.layer->adapter = make_lora_adapter(nl.layer->weight, false, cfg, rng);
    ++attached;
  }
  if (cfg.targets.count("embeddings")) {
    model.embedder.adapter = make_lora_adapter(model.embedder.token_table, true, cfg, rng);
    ++attached;
  }
  model.mark_wrapped();
  return attached;
}

TrainableReport trainable_param_report(const FusionModel& model) {
  TrainableReport report;
  std::map<ParamGroup, TrainableReport::Group> groups;
  for (const auto& p : model.named_parameters()) {
    auto& g = groups[p.group];
    g.name = std::string(to_string(p.group));
    const std::size_t n = p.tensor.size();
    if (p.tensor.requires_grad()) {
      g.trainable += n;
      report.trainable += n;
    } else {
      g.frozen += n;
      report.frozen += n;
    }
    if (p.is_adapter) report.adapter_params += n;
    if (p.group == ParamGroup::kHead && !p.is_adapter) report.head_params += n;
    report.total += n;
  }
  for (auto& [group, g] : groups) report.groups.push_back(g);

  auto describe = [&](const std::string& name, const LoraAdapter& ad) {
    WrappedMatrix w;
    w.name = name;
    w.d = ad.out_features();
    w.k = ad.in_features();
    w.rank = ad.rank;
    w.base_params = ad.base.size();
    w.adapter_params = ad.parameter_count();
    report.matrices.push_back(w);
  };
  for (const auto& [name, adapter] : model.adapters()) describe(name, *adapter);
  return report;
}

}  // namespace mmfx
