// Copyright 2026 The mmfx Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmfx/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace mmfx {

void TrainConfig::validate() const {
  std::vector<std::string> problems;
  if (epochs < 1) problems.emplace_back("epochs must be at least 1");
  if (batch_size < 1) problems.emplace_back("batch_size must be at least 1");
  if (!(learning_rate > 0.0)) problems.emplace_back("learning_rate must be positive");
  if (!(weight_decay >= 0.0)) problems.emplace_back("weight_decay must be non-negative");
  if (!(beta1 > 0.0 && beta1 < 1.0)) problems.emplace_back("beta1 must lie in (0, 1)");
  if (!(beta2 > 0.0 && beta2 < 1.0)) problems.emplace_back("beta2 must lie in (0, 1)");
  if (!(epsilon > 0.0)) problems.emplace_back("epsilon must be positive");
  if (!problems.empty()) {
    std::string msg = "invalid training config:";
    for (const auto& p : problems) msg += "\n  - " + p;
    throw std::invalid_argument(msg);
  }
}

void to_json(nlohmann::json& j, const TrainConfig& cfg) {
  j = nlohmann::json{{"epochs", cfg.epochs},         {"batch_size", cfg.batch_size}, {"learning_rate", cfg.learning_rate},
                     {"weight_decay", cfg.weight_decay}, {"beta1", cfg.beta1},         {"beta2", cfg.beta2},
                     {"epsilon", cfg.epsilon},       {"seed", cfg.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& cfg) {
  static const std::vector<std::string> known{"epochs", "batch_size", "learning_rate", "weight_decay",
                                              "beta1",  "beta2",      "epsilon",       "seed"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw std::invalid_argument("unknown training config field '" + key + "'");
    }
  }
  if (j.contains("epochs")) j.at("epochs").get_to(cfg.epochs);
  if (j.contains("batch_size")) j.at("batch_size").get_to(cfg.batch_size);
  if (j.contains("learning_rate")) j.at("learning_rate").get_to(cfg.learning_rate);
  if (j.contains("weight_decay")) j.at("weight_decay").get_to(cfg.weight_decay);
  if (j.contains("beta1")) j.at("beta1").get_to(cfg.beta1);
  if (j.contains("beta2")) j.at("beta2").get_to(cfg.beta2);
  if (j.contains("epsilon")) j.at("epsilon").get_to(cfg.epsilon);
  if (j.contains("seed")) j.at("seed").get_to(cfg.seed);
}

// ---------------------------------------------------------------------------
// Optimizer

void zero_grads(std::span<Tensor> params) {
  for (auto& p : params)
    if (p.requires_grad()) p.zero_grad();
}

void adam_step(std::span<Tensor> params, AdamState& state, const TrainConfig& cfg) {
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].size(), 0.0);
      state.v[i].assign(params[i].size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) {
    throw std::invalid_argument("adam_step: optimizer state tracks " + std::to_string(state.m.size()) +
                                " parameters, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].size() != params[i].size()) {
      throw ShapeError("adam_step: state for parameter " + std::to_string(i) + " does not match its shape " +
                       to_string(params[i].shape()));
    }
    if (params[i].requires_grad() && !params[i].has_grad()) {
      throw std::logic_error("adam_step: trainable parameter " + std::to_string(i) + " has no gradient");
    }
  }

  ++state.t;
  const double correction1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double correction2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p.requires_grad()) continue;
    auto theta = p.mutable_data();
    auto g = p.grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < theta.size(); ++k) {
      const double gk = g[k] + cfg.weight_decay * theta[k];
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
      const double m_hat = m[k] / correction1;
      const double v_hat = v[k] / correction2;
      theta[k] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
    p.zero_grad();
  }
}

// ---------------------------------------------------------------------------
// Loss and metrics

Tensor bce_loss(const Tensor& probs, const Tensor& labels) {
  if (probs.shape() != labels.shape()) {
    throw ShapeError("bce_loss: probabilities " + to_string(probs.shape()) + " and labels " +
                     to_string(labels.shape()) + " differ in shape");
  }
  const auto p = probs.data();
  const auto y = labels.data();
  const double n = static_cast<double>(p.size());
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double q = std::clamp(p[i], kProbabilityClamp, 1.0 - kProbabilityClamp);
    total -= y[i] * std::log(q) + (1.0 - y[i]) * std::log(1.0 - q);
  }
  return Tensor::from_op({1}, {total / n}, {probs}, [probs, labels, n](std::span<const double> upstream) mutable {
    const auto p = probs.data();
    const auto y = labels.data();
    auto grad = probs.mutable_grad();
    const double g = upstream[0] / n;
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (p[i] < kProbabilityClamp || p[i] > 1.0 - kProbabilityClamp) continue;
      grad[i] += g * (-y[i] / p[i] + (1.0 - y[i]) / (1.0 - p[i]));
    }
  });
}

std::optional<double> roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) {
    throw std::invalid_argument("roc_auc: " + std::to_string(scores.size()) + " scores but " +
                                std::to_string(labels.size()) + " labels");
  }
  std::size_t n_pos = 0;
  for (auto l : labels) {
    if (l > 1) throw std::invalid_argument("roc_auc: labels must be 0 or 1");
    n_pos += l;
  }
  const std::size_t n_neg = labels.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Rank sum of the positives with tied groups sharing their average rank.
  // Ranks are doubled so every value stays an exact integer.
  std::uint64_t doubled_rank_sum = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const std::uint64_t doubled_avg = (i + 1) + j;
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]]) doubled_rank_sum += doubled_avg;
    i = j;
  }
  const double u = static_cast<double>(doubled_rank_sum) / 2.0 - static_cast<double>(n_pos * (n_pos + 1)) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

std::optional<double> mean_defined(std::span<const std::optional<double>> values) {
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& v : values) {
    if (v) {
      total += *v;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return total / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Evaluation

std::size_t eval_thread_count(std::size_t requested) {
  std::size_t n = requested ? requested : std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("MMFX_THREADS")) {
    char* end = nullptr;
    const long cap = std::strtol(env, &end, 10);
    if (end != env && cap >= 1) n = std::min(n, static_cast<std::size_t>(cap));
  }
  return std::max<std::size_t>(n, 1);
}

EvalResult evaluate(const FusionModel& model, const Dataset& dataset, const Tokenizer& tokenizer,
                    const EvalOptions& options) {
  if (dataset.empty()) throw std::invalid_argument("evaluate: dataset is empty");
  const std::size_t n_classes = model.config.n_classes;
  Rng unused(0);
  const auto batches = batch_iter(dataset, options.batch_size, tokenizer, model.config.text_seq_len, false, unused);

  // Batch boundaries are fixed, so the per-batch results do not depend on
  // how batches are spread over threads.
  std::vector<std::vector<double>> batch_probs(batches.size());
  std::vector<double> batch_loss(batches.size());
  const std::size_t n_threads = std::min(eval_thread_count(options.threads), batches.size());
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n_threads);
  auto work = [&](std::size_t worker) {
    try {
      for (std::size_t b = next++; b < batches.size(); b = next++) {
        const Tensor probs = forward(model, batches[b].tokens, batches[b].images, RunMode::eval());
        const Tensor loss = bce_loss(probs.detach(), batches[b].labels);
        batch_probs[b].assign(probs.data().begin(), probs.data().end());
        batch_loss[b] = loss.item() * static_cast<double>(batches[b].ids.size());
      }
    } catch (...) {
      errors[worker] = std::current_exception();
    }
  };
  if (n_threads <= 1) {
    work(0);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < n_threads; ++w) pool.emplace_back(work, w);
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  EvalResult result;
  result.scores.reserve(dataset.size() * n_classes);
  double loss_total = 0.0;
  for (std::size_t b = 0; b < batches.size(); ++b) {
    result.scores.insert(result.scores.end(), batch_probs[b].begin(), batch_probs[b].end());
    loss_total += batch_loss[b];
  }
  result.loss = loss_total / static_cast<double>(dataset.size());

  std::vector<double> column(dataset.size());
  std::vector<std::uint8_t> truth(dataset.size());
  for (std::size_t c = 0; c < n_classes; ++c) {
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      column[i] = result.scores[i * n_classes + c];
      truth[i] = dataset.examples[i].labels.at(c);
    }
    result.auc.push_back(roc_auc(column, truth));
  }
  result.mean_auc = mean_defined(result.auc);
  return result;
}

// ---------------------------------------------------------------------------
// Training

TrainResult train_loop(FusionModel& model, const Dataset& train, const Dataset& validation, const Tokenizer& tokenizer,
                       const TrainConfig& cfg, const CheckpointFn& on_improve, const EvalOptions& eval) {
  TrainResult result;
  if (cfg.epochs == 0) return result;
  cfg.validate();
  if (train.empty()) throw std::invalid_argument("train_loop: training split is empty");
  if (validation.empty()) throw std::invalid_argument("train_loop: validation split is empty");

  Rng root(cfg.seed);
  Rng shuffle_rng = root.fork();
  Rng dropout_rng = root.fork();
  auto params = model.trainable_parameters();
  AdamState state;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto batches = batch_iter(train, cfg.batch_size, tokenizer, model.config.text_seq_len, true, shuffle_rng);
    double loss_total = 0.0;
    for (const auto& batch : batches) {
      zero_grads(params);
      const Tensor probs = forward(model, batch.tokens, batch.images, RunMode::train(dropout_rng));
      const Tensor loss = bce_loss(probs, batch.labels);
      loss.backward();
      adam_step(params, state, cfg);
      loss_total += loss.item() * static_cast<double>(batch.ids.size());
    }

    const EvalResult val = evaluate(model, validation, tokenizer, eval);
    MetricsRecord record;
    record.epoch = epoch;
    record.train_loss = loss_total / static_cast<double>(train.size());
    record.val_loss = val.loss;
    record.val_auc = val.auc;
    record.val_mean_auc = val.mean_auc;
    result.records.push_back(record);

    if (record.val_mean_auc && (!result.best_val_auc || *record.val_mean_auc > *result.best_val_auc)) {
      result.best_val_auc = record.val_mean_auc;
      result.best_epoch = epoch;
      if (on_improve) on_improve(model, record);
    }
  }
  // A validation split too small to define any AUC selects the last epoch.
  if (!result.best_epoch && !result.records.empty()) {
    result.best_epoch = result.records.back().epoch;
    if (on_improve) on_improve(model, result.records.back());
  }
  return result;
}

// ---------------------------------------------------------------------------
// Metrics file

namespace {

std::string format_real(double value) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", value);
  return buf;
}

}  // namespace

std::string metrics_csv_header(std::size_t n_classes) {
  std::string header = "epoch,train_loss,val_loss,val_mean_auc";
  for (std::size_t c = 0; c < n_classes; ++c) {
    header += ",auc_";
    header += c < kClassNames.size() ? std::string(kClassNames[c]) : std::to_string(c);
  }
  return header;
}

std::string metrics_csv(std::span<const MetricsRecord> records) {
  const std::size_t n_classes = records.empty() ? kClassNames.size() : records.front().val_auc.size();
  std::string out = metrics_csv_header(n_classes) + "\n";
  for (const auto& r : records) {
    out += std::to_string(r.epoch) + "," + format_real(r.train_loss) + "," + format_real(r.val_loss) + ",";
    if (r.val_mean_auc) out += format_real(*r.val_mean_auc);
    for (const auto& a : r.val_auc) {
      out += ",";
      if (a) out += format_real(*a);
    }
    out += "\n";
  }
  return out;
}

void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricsRecord> records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << metrics_csv(records);
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

// ---------------------------------------------------------------------------

std::string_view to_string(Ablation ablation) {
  switch (ablation) {
    case Ablation::kNone: return "none";
    case Ablation::kTextOnly: return "text_only";
    case Ablation::kVisionOnly: return "vision_only";
  }
  return "unknown";
}

void apply_ablation(FusionModel& model, Ablation ablation) {
  if (ablation == Ablation::kNone) return;
  zero_cross_weights(model);
  for (auto& p : model.named_parameters()) {
    if (p.group != ParamGroup::kCross) continue;
    if (p.is_adapter) std::fill(p.tensor.mutable_data().begin(), p.tensor.mutable_data().end(), 0.0);
    p.tensor.set_requires_grad(false);
    p.tensor.clear_grad();
  }
  model.input_mask.zero_text = ablation == Ablation::kVisionOnly;
  model.input_mask.zero_vision = ablation == Ablation::kTextOnly;
}

}  // namespace mmfx
