// Copyright 2026 The mmfx Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmfx/experiment.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace mmfx {

RunConfig::RunConfig() {
  model.d_model = 32;
  model.n_heads = 2;
  model.n_levels = 3;
  model.text_seq_len = 32;
  model.vocab_size = 128;
}

std::string RunConfig::run_tag() const {
  std::string tag(to_string(model.fusion));
  return use_lora ? tag + "_r" + std::to_string(lora.rank) : tag + "_full";
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  if (use_lora) lora.validate();
  if (data_dir.empty()) throw std::invalid_argument("invalid run config:\n  - data_dir is empty");
  if (out_dir.empty()) throw std::invalid_argument("invalid run config:\n  - out_dir is empty");
}

void to_json(nlohmann::json& j, const RunConfig& cfg) {
  j = nlohmann::json{{"model", cfg.model},
                     {"train", cfg.train},
                     {"lora", cfg.lora},
                     {"use_lora", cfg.use_lora},
                     {"data_dir", cfg.data_dir.string()},
                     {"out_dir", cfg.out_dir.string()}};
}

void from_json(const nlohmann::json& j, RunConfig& cfg) {
  if (!j.is_object()) throw std::invalid_argument("run config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key == "model") {
      auto merged = nlohmann::json(cfg.model);
      merged.update(value);
      cfg.model = merged.get<ModelConfig>();
    } else if (key == "train") {
      value.get_to(cfg.train);
    } else if (key == "lora") {
      value.get_to(cfg.lora);
    } else if (key == "use_lora") {
      value.get_to(cfg.use_lora);
    } else if (key == "data_dir") {
      cfg.data_dir = value.get<std::string>();
    } else if (key == "out_dir") {
      cfg.out_dir = value.get<std::string>();
    } else {
      throw std::invalid_argument("unknown run config field '" + key + "'");
    }
  }
}

RunData load_run_data(const std::filesystem::path& data_dir, std::size_t vocab_size) {
  RunData data;
  data.train = load_manifest(data_dir / "train.jsonl", Split::kTrain);
  data.validation = load_manifest(data_dir / "validation.jsonl", Split::kValidation);
  data.test = load_manifest(data_dir / "test.jsonl", Split::kTest);

  std::vector<std::string> corpus;
  const auto corpus_path = data_dir / "corpus.txt";
  if (std::filesystem::exists(corpus_path)) {
    std::ifstream in(corpus_path, std::ios::binary);
    for (std::string line; std::getline(in, line);) corpus.push_back(line);
  } else {
    corpus = data.train.reports();
  }
  if (corpus.empty()) throw DataError("no report text to build a vocabulary from in " + data_dir.string());
  data.tokenizer = build_vocab(corpus, vocab_size);
  return data;
}

void save_run_checkpoint(const std::filesystem::path& path, const FusionModel& model, const RunConfig& cfg,
                         const Tokenizer& tokenizer) {
  nlohmann::json extra;
  extra["train"] = cfg.train;
  extra["run_tag"] = cfg.run_tag();
  extra["vocabulary"] = tokenizer.vocabulary();
  save_model(path, model, cfg.use_lora ? std::optional<LoraConfig>(cfg.lora) : std::nullopt, extra);
}

LoadedRun load_run_checkpoint(const std::filesystem::path& path) {
  LoadedRun run{load_model(path), Tokenizer()};
  if (!run.loaded.config.contains("vocabulary")) {
    throw FormatError(path.string() + ": checkpoint config carries no vocabulary");
  }
  run.tokenizer = Tokenizer(run.loaded.config.at("vocabulary").get<std::vector<std::string>>());
  return run;
}

RunOutcome run_training(const RunConfig& cfg, const RunData& data, const RunOptions& options) {
  cfg.validate();
  if (data.tokenizer.size() > cfg.model.vocab_size) {
    throw std::invalid_argument("vocabulary of " + std::to_string(data.tokenizer.size()) +
                                " tokens exceeds model vocab_size " + std::to_string(cfg.model.vocab_size));
  }

  Rng rng(cfg.train.seed);
  FusionModel model = build_model(cfg.model, rng);
  if (cfg.use_lora) wrap_model(model, cfg.lora, rng);
  apply_ablation(model, options.ablation);

  RunOutcome outcome;
  if (options.write_outputs) {
    outcome.run_dir = cfg.out_dir / cfg.run_tag();
    std::filesystem::create_directories(outcome.run_dir);
    std::ofstream resolved(outcome.run_dir / "config.resolved", std::ios::binary | std::ios::trunc);
    resolved << nlohmann::json(cfg).dump(2) << '\n';
    if (!resolved) throw std::runtime_error("failed writing " + (outcome.run_dir / "config.resolved").string());
  }

  // The best parameters are snapshotted in memory and, when writing
  // outputs, also saved as best.mmfx. The snapshot goes through float like
  // the checkpoint does, so test metrics match a reload of best.mmfx.
  std::vector<std::vector<double>> best;
  auto on_improve = [&](const FusionModel& m, const MetricsRecord&) {
    const auto params = m.named_parameters();
    best.clear();
    for (const auto& p : params) {
      auto& snap = best.emplace_back();
      for (double v : p.tensor.data()) snap.push_back(static_cast<double>(static_cast<float>(v)));
    }
    if (options.write_outputs) save_run_checkpoint(outcome.run_dir / "best.mmfx", m, cfg, data.tokenizer);
  };
  outcome.train = train_loop(model, data.train, data.validation, data.tokenizer, cfg.train, on_improve, options.eval);
  if (options.write_outputs) write_metrics_csv(outcome.run_dir / "metrics.csv", outcome.train.records);

  if (!best.empty() && !data.test.empty()) {
    auto params = model.named_parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto dst = params[i].tensor.mutable_data();
      std::copy(best[i].begin(), best[i].end(), dst.begin());
    }
    outcome.test = evaluate(model, data.test, data.tokenizer, options.eval);
  }
  return outcome;
}

std::string auc_table_csv(const EvalResult& result) {
  std::string header;
  std::string values;
  auto cell = [](const std::optional<double>& v) {
    if (!v) return std::string("-");
    char buf[16];
    std::snprintf(buf, sizeof buf, "%.3f", *v);
    return std::string(buf);
  };
  for (std::size_t c = 0; c < result.auc.size(); ++c) {
    header += (c < kClassNames.size() ? std::string(kClassNames[c]) : std::to_string(c)) + ",";
    values += cell(result.auc[c]) + ",";
  }
  header += "mean";
  values += cell(result.mean_auc);
  return header + "\n" + values + "\n";
}

}  // namespace mmfx
