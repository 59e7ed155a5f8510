// Copyright 2026 The mmfx Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance runner. Prints one PASS/FAIL line per criterion and exits
// nonzero when any selected criterion fails.
//
//   mmfx_acceptance          all ten
//   mmfx_acceptance 3 7      just those

#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mmfx/experiment.hpp"
#include "mmfx/goldens.hpp"
#include "mmfx/verify.hpp"

namespace fs = std::filesystem;
using namespace mmfx;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

class Scratch {
 public:
  explicit Scratch(const std::string& tag)
      : path_(fs::temp_directory_path() / ("mmfx-acceptance-" + std::to_string(::getpid()) + "-" + tag)) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~Scratch() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Outcome from_suite(const std::string& name, double time_limit = 0.0) {
  const auto t0 = std::chrono::steady_clock::now();
  const SuiteResult r = run_verify_suite(name);
  const double secs = seconds_since(t0);
  Outcome o{r.passed, r.detail + ", max error " + fmt("%.3g", r.max_error) + " (tolerance " +
                          fmt("%.3g", r.tolerance) + "), " + std::to_string(r.cases) + " cases, " + fmt("%.1f s", secs)};
  if (time_limit > 0.0 && secs >= time_limit) {
    o.passed = false;
    o.detail += ", over the " + fmt("%.0f s", time_limit) + " budget";
  }
  return o;
}

Outcome wiring() {
  Rng cfg_rng(77);
  std::size_t parallel_same = 0, serial_changed = 0;
  const int trials = 10;
  for (int trial = 0; trial < trials; ++trial) {
    ModelConfig cfg;
    cfg.n_heads = 1 + cfg_rng.below(2);
    cfg.d_model = cfg.n_heads * (2 + cfg_rng.below(4));
    cfg.n_levels = 1 + cfg_rng.below(3);
    cfg.vocab_size = 20;
    cfg.text_seq_len = 3 + cfg_rng.below(5);
    cfg.image_side = 8;
    cfg.patch_size = 4;
    const std::uint64_t seed = cfg_rng.next_u64();
    for (Fusion f : {Fusion::kParallel, Fusion::kSerial}) {
      cfg.fusion = f;
      Rng rng(seed);
      FusionModel m = build_model(cfg, rng);
      TokenBatch tokens{2, cfg.text_seq_len, {}};
      for (std::size_t i = 0; i < 2 * cfg.text_seq_len; ++i) tokens.ids.push_back(static_cast<std::int32_t>(rng.below(20)));
      std::vector<double> px(2 * cfg.image_side * cfg.image_side);
      for (double& p : px) p = rng.uniform();
      const Tensor images({2, cfg.image_side, cfg.image_side}, px);
      const Tensor before = forward(m, tokens, images, RunMode::eval());
      for (auto& nl : m.named_linears()) {
        if (nl.group != ParamGroup::kText) continue;
        for (double& v : nl.layer->weight.mutable_data()) v += 0.5 * rng.normal();
      }
      const Tensor after = forward(m, tokens, images, RunMode::eval());
      bool same = true;
      for (std::size_t i = 0; i < before.size(); ++i) same = same && before.data()[i] == after.data()[i];
      if (f == Fusion::kParallel && same) ++parallel_same;
      if (f == Fusion::kSerial && !same) ++serial_changed;
    }
  }
  return {parallel_same == trials && serial_changed == trials,
          "parallel unchanged " + std::to_string(parallel_same) + "/10, serial changed " +
              std::to_string(serial_changed) + "/10"};
}

Outcome end_to_end() {
  Scratch scratch("e2e");
  write_synthetic(scratch.path(), generate_synthetic(SyntheticSpec{}));
  RunConfig base;
  const RunData data = load_run_data(scratch.path(), base.model.vocab_size);
  RunOptions options;
  options.write_outputs = false;

  struct Arm {
    Fusion fusion;
    std::size_t rank;
  };
  bool ok = true;
  std::string detail;
  for (const Arm arm : {Arm{Fusion::kParallel, 2}, Arm{Fusion::kSerial, 4}, Arm{Fusion::kMixed, 2}}) {
    RunConfig cfg = base;
    cfg.model.fusion = arm.fusion;
    cfg.lora.rank = arm.rank;
    double auc[3] = {NAN, NAN, NAN};
    double slowest = 0.0;
    int i = 0;
    for (Ablation ab : {Ablation::kNone, Ablation::kTextOnly, Ablation::kVisionOnly}) {
      options.ablation = ab;
      const auto t0 = std::chrono::steady_clock::now();
      const RunOutcome run = run_training(cfg, data, options);
      slowest = std::max(slowest, seconds_since(t0));
      if (run.test && run.test->mean_auc) auc[i] = *run.test->mean_auc;
      ++i;
    }
    const bool reached = auc[0] >= 0.90;
    const bool beats = auc[0] - auc[1] >= 0.05 && auc[0] - auc[2] >= 0.05;
    const bool fast = slowest <= 15.0 * 60.0;
    ok = ok && reached && beats && fast;
    if (!detail.empty()) detail += "; ";
    detail += cfg.run_tag() + " " + fmt("%.3f", auc[0]) + " (text-only " + fmt("%.3f", auc[1]) + ", vision-only " +
              fmt("%.3f", auc[2]) + ", slowest run " + fmt("%.0f s", slowest) + ")";
  }
  return {ok, detail + "; needs >= 0.900 and a 0.05 margin over both ablations"};
}

Outcome determinism() {
  Scratch scratch("det");
  SyntheticSpec spec;
  spec.n_train = 60;
  spec.n_validation = 12;
  spec.n_test = 24;
  spec.seed = 5;
  write_synthetic(scratch.path() / "data", generate_synthetic(spec));
  RunConfig cfg;
  cfg.model.d_model = 8;
  cfg.model.n_levels = 2;
  cfg.train.epochs = 3;
  cfg.train.seed = 9;
  const RunData data = load_run_data(scratch.path() / "data", cfg.model.vocab_size);

  cfg.out_dir = scratch.path() / "a";
  const RunOutcome a = run_training(cfg, data);
  cfg.out_dir = scratch.path() / "b";
  const RunOutcome b = run_training(cfg, data);
  const bool same_csv = slurp(a.run_dir / "metrics.csv") == slurp(b.run_dir / "metrics.csv") &&
                        !slurp(a.run_dir / "metrics.csv").empty();

  const LoadedRun loaded = load_run_checkpoint(a.run_dir / "best.mmfx");
  const EvalResult again = evaluate(loaded.loaded.model, data.test, loaded.tokenizer, EvalOptions{});
  double worst = 0.0;
  bool same_defined = a.test.has_value() && again.auc.size() == a.test->auc.size();
  for (std::size_t c = 0; same_defined && c < again.auc.size(); ++c) {
    if (again.auc[c].has_value() != a.test->auc[c].has_value()) {
      same_defined = false;
    } else if (again.auc[c]) {
      worst = std::max(worst, std::abs(*again.auc[c] - *a.test->auc[c]));
    }
  }
  const bool persisted = same_defined && worst <= 1e-12;
  return {same_csv && persisted, std::string("metrics CSVs ") + (same_csv ? "byte-identical" : "differ") +
                                     ", reloaded checkpoint AUC max difference " + fmt("%.3g", worst)};
}

Outcome goldens() {
  const fs::path dir = fs::path(MMFX_FIXTURES_DIR);
  const std::string cmd = std::string(MMFX_PYTHON) + " " + (dir / "regenerate_goldens.py").string() + " --check --out " +
                          (dir / "goldens").string() + " > /dev/null";
  const bool zero_diff = std::system(cmd.c_str()) == 0;
  std::set<std::string> covered;
  bool replay = true;
  double worst = 0.0;
  for (const auto& r : check_goldens(dir / "goldens")) {
    covered.insert(r.covers);
    replay = replay && r.passed;
    worst = std::max(worst, r.max_error);
  }
  const std::set<std::string> needed{"attention",          "multi_head_attention", "feed_forward",
                                     "attention_residual", "layer",                "lora"};
  const bool covers = covered == needed;
  return {zero_diff && covers && replay, std::string("regeneration ") + (zero_diff ? "zero diffs" : "DIFFERS") + ", " +
                                             std::to_string(covered.size()) + "/6 building blocks covered, " +
                                             "library replay max error " + fmt("%.3g", worst)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient correctness", [] { return from_suite("gradcheck", 120.0); }},
      {"LoRA init transparency", [] { return from_suite("lora_init"); }},
      {"frozen-base integrity", [] { return from_suite("lora_frozen"); }},
      {"parameter parity", [] { return from_suite("param_parity"); }},
      {"reduction-factor identity", [] { return from_suite("reduction_factor"); }},
      {"AUC oracle equivalence", [] { return from_suite("auc_oracle"); }},
      {"fusion-wiring discrimination", wiring},
      {"end-to-end synthetic training", end_to_end},
      {"determinism and persistence", determinism},
      {"golden-fixture regeneration", goldens},
  };

  std::set<std::size_t> selected;
  for (int i = 1; i < argc; ++i) {
    const int n = std::atoi(argv[i]);
    if (n < 1 || n > static_cast<int>(criteria.size())) {
      std::cerr << "unknown criterion '" << argv[i] << "'\n";
      return 2;
    }
    selected.insert(static_cast<std::size_t>(n));
  }

  int failures = 0;
  for (std::size_t n = 1; n <= criteria.size(); ++n) {
    if (!selected.empty() && !selected.contains(n)) continue;
    Outcome o;
    try {
      o = criteria[n - 1].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    if (!o.passed) ++failures;
    std::cout << "criterion " << n << " " << (o.passed ? "PASS" : "FAIL") << "  " << criteria[n - 1].first << ": "
              << o.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
