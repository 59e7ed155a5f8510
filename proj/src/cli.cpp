// Copyright 2026 The mmfx Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmfx/cli.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <stdexcept>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mmfx/experiment.hpp"
#include "mmfx/verify.hpp"

namespace mmfx::cli {
namespace {

namespace fs = std::filesystem;

// Anything thrown while assembling a config is the caller's fault.
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct GenDataArgs {
  fs::path out = "data";
  std::uint64_t seed = 0;
  std::optional<std::size_t> n;
  std::optional<std::size_t> n_train, n_val, n_test;
  std::optional<double> noise;
};

struct TrainArgs {
  std::optional<fs::path> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> arch;
  std::optional<std::size_t> lora_r;
  bool no_lora = false;
  std::optional<fs::path> out;
  std::optional<fs::path> data;
  std::optional<std::size_t> epochs;
};

struct EvalArgs {
  fs::path checkpoint;
  std::optional<fs::path> manifest;
  fs::path data = "data";
  std::optional<fs::path> out;
};

struct VerifyArgs {
  std::vector<std::string> suites;
  std::optional<fs::path> json;
};

std::string fmt(double v, const char* spec = "%.4f") {
  char buf[32];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::string fmt_opt(const std::optional<double>& v) { return v ? fmt(*v) : "-"; }

int gen_data(const GenDataArgs& a, std::ostream& out) {
  SyntheticSpec spec;
  spec.seed = a.seed;
  if (a.n) {
    // Scale validation and test with the default 400/12/48 proportions.
    spec.n_train = *a.n;
    spec.n_validation = static_cast<std::size_t>(std::lround(static_cast<double>(*a.n) * 12.0 / 400.0));
    spec.n_test = static_cast<std::size_t>(std::lround(static_cast<double>(*a.n) * 48.0 / 400.0));
  }
  if (a.n_train) spec.n_train = *a.n_train;
  if (a.n_val) spec.n_validation = *a.n_val;
  if (a.n_test) spec.n_test = *a.n_test;
  if (a.noise) spec.noise_rate = *a.noise;
  try {
    spec.validate();
    if (spec.noise_rate < 0.0 || spec.noise_rate > 1.0) throw std::invalid_argument("--noise must be in [0, 1]");
  } catch (const std::exception& e) {
    throw ValidationError(e.what());
  }
  write_synthetic(a.out, generate_synthetic(spec));
  out << "wrote " << spec.n_train << "/" << spec.n_validation << "/" << spec.n_test << " examples to "
      << a.out.string() << "\n";
  return kOk;
}

RunConfig resolve_config(const TrainArgs& a) {
  try {
    RunConfig cfg;
    if (a.config) {
      std::ifstream in(*a.config, std::ios::binary);
      if (!in) throw std::invalid_argument("cannot open config " + a.config->string());
      try {
        nlohmann::json::parse(in).get_to(cfg);
      } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(a.config->string() + ": " + e.what());
      }
    }
    if (a.seed) cfg.train.seed = *a.seed;
    if (a.arch) cfg.model.fusion = parse_fusion(*a.arch);
    if (a.lora_r && a.no_lora) throw std::invalid_argument("--lora-r and --no-lora are mutually exclusive");
    if (a.lora_r) {
      cfg.lora.rank = *a.lora_r;
      cfg.use_lora = true;
    }
    if (a.no_lora) cfg.use_lora = false;
    if (a.out) cfg.out_dir = *a.out;
    if (a.data) cfg.data_dir = *a.data;
    if (a.epochs) cfg.train.epochs = *a.epochs;
    cfg.validate();
    return cfg;
  } catch (const std::invalid_argument& e) {
    throw ValidationError(e.what());
  }
}

int train(const TrainArgs& a, std::ostream& out) {
  const RunConfig cfg = resolve_config(a);
  // Inputs are read in full before the run directory exists.
  const RunData data = load_run_data(cfg.data_dir, cfg.model.vocab_size);
  out << "run " << cfg.run_tag() << ": " << data.train.size() << " train, " << data.validation.size()
      << " validation, " << data.test.size() << " test\n";
  const RunOutcome outcome = run_training(cfg, data);
  for (const auto& rec : outcome.train.records) {
    out << "epoch " << rec.epoch + 1 << "/" << cfg.train.epochs << " train_loss=" << fmt(rec.train_loss)
        << " val_loss=" << fmt(rec.val_loss) << " val_mean_auc=" << fmt_opt(rec.val_mean_auc) << "\n";
  }
  if (outcome.train.best_epoch)
    out << "best epoch " << *outcome.train.best_epoch + 1 << " (val mean AUC " << fmt_opt(outcome.train.best_val_auc)
        << ")\n";
  if (outcome.test) {
    out << "test AUC\n";
    out << auc_table_csv(*outcome.test);
  }
  out << "outputs in " << outcome.run_dir.string() << "\n";
  return kOk;
}

int eval(const EvalArgs& a, std::ostream& out) {
  LoadedRun run = load_run_checkpoint(a.checkpoint);
  if (run.loaded.model.config.n_classes != kClassNames.size())
    throw ValidationError("checkpoint has " + std::to_string(run.loaded.model.config.n_classes) +
                          " classes, manifests carry " + std::to_string(kClassNames.size()));
  const fs::path manifest = a.manifest.value_or(a.data / "test.jsonl");
  const Dataset dataset = load_manifest(manifest, Split::kTest);
  const EvalResult result = evaluate(run.loaded.model, dataset, run.tokenizer);
  const std::string table = auc_table_csv(result);
  out << table;
  const fs::path dest = a.out.value_or(a.checkpoint.parent_path() / "eval_auc.csv");
  std::ofstream file(dest, std::ios::binary | std::ios::trunc);
  file << table;
  if (!file) throw std::runtime_error("failed writing " + dest.string());
  return kOk;
}

int verify(const VerifyArgs& a, std::ostream& out) {
  VerifyReport report;
  if (a.suites.empty()) {
    report = run_verify();
  } else {
    for (const auto& name : a.suites) report.suites.push_back(run_verify_suite(name));
  }
  const std::string doc = to_json(report).dump(2) + "\n";
  out << doc;
  if (a.json) {
    std::ofstream file(*a.json, std::ios::binary | std::ios::trunc);
    file << doc;
    if (!file) throw std::runtime_error("failed writing " + a.json->string());
  }
  return report.passed() ? kOk : kVerifyFailure;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multimodal fusion transformers with LoRA adapters", "mmfx"};
  app.require_subcommand(1);

  GenDataArgs gen_args;
  auto* gen = app.add_subcommand("gen-data", "Write a synthetic dataset (PGM images, manifests, corpus)");
  gen->add_option("--out", gen_args.out, "Output directory")->capture_default_str();
  gen->add_option("--seed", gen_args.seed, "Generator seed")->capture_default_str();
  gen->add_option("--n", gen_args.n, "Training examples; validation and test scale along");
  gen->add_option("--n-train", gen_args.n_train, "Training examples");
  gen->add_option("--n-val", gen_args.n_val, "Validation examples");
  gen->add_option("--n-test", gen_args.n_test, "Test examples");
  gen->add_option("--noise", gen_args.noise, "Evidence flip rate");

  TrainArgs train_args;
  auto* tr = app.add_subcommand("train", "Train one fusion model and evaluate it on the test split");
  tr->add_option("--config", train_args.config, "JSON run config")->check(CLI::ExistingFile);
  tr->add_option("--seed", train_args.seed, "Training seed");
  tr->add_option("--arch", train_args.arch, "Fusion variant")
      ->check(CLI::IsMember({"parallel", "serial", "mixed"}));
  tr->add_option("--lora-r", train_args.lora_r, "LoRA rank");
  tr->add_flag("--no-lora", train_args.no_lora, "Train every parameter instead of adapters");
  tr->add_option("--out", train_args.out, "Output root; the run goes to <out>/<run_tag>");
  tr->add_option("--data", train_args.data, "Dataset directory");
  tr->add_option("--epochs", train_args.epochs, "Training epochs");

  EvalArgs eval_args;
  auto* ev = app.add_subcommand("eval", "Per-class AUC table of a checkpoint on a manifest");
  ev->add_option("--checkpoint", eval_args.checkpoint, "Checkpoint written by train")->required();
  ev->add_option("--manifest", eval_args.manifest, "Manifest to score (default <data>/test.jsonl)");
  ev->add_option("--data", eval_args.data, "Dataset directory")->capture_default_str();
  ev->add_option("--out", eval_args.out, "CSV destination (default next to the checkpoint)");

  VerifyArgs verify_args;
  auto* ve = app.add_subcommand("verify", "Run the invariant suites");
  ve->add_option("--suite", verify_args.suites, "Run only these suites")->check(CLI::IsMember(verify_suite_names()));
  ve->add_option("--json", verify_args.json, "Also write the report here");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kValidationError;
  }

  try {
    if (*gen) return gen_data(gen_args, out);
    if (*tr) return train(train_args, out);
    if (*ev) return eval(eval_args, out);
    if (*ve) return verify(verify_args, out);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kValidationError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntimeFailure;
  }
  return kValidationError;
}

}  // namespace mmfx::cli
