// Copyright 2026 The mmfx Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmfx/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

namespace mmfx {

std::string_view to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kValidation: return "validation";
    case Split::kTest: return "test";
  }
  return "unknown";
}

bool Example::operator==(const Example& other) const {
  if (id != other.id || image_path != other.image_path || report != other.report || labels != other.labels) return false;
  if (image.defined() != other.image.defined()) return false;
  if (!image.defined()) return true;
  return image.shape() == other.image.shape() && std::equal(image.data().begin(), image.data().end(), other.image.data().begin());
}

std::vector<std::string> Dataset::reports() const {
  std::vector<std::string> out;
  out.reserve(examples.size());
  for (const auto& e : examples) out.push_back(e.report);
  return out;
}

void validate_labels(std::span<const std::uint8_t> labels, std::size_t n_classes) {
  if (labels.size() != n_classes) {
    throw DataError("label vector has " + std::to_string(labels.size()) + " entries, expected " + std::to_string(n_classes));
  }
  bool finding = false;
  for (std::size_t c = 0; c < labels.size(); ++c) {
    if (labels[c] > 1) throw DataError("label " + std::to_string(c) + " is not 0 or 1");
    if (c != kNoFinding && labels[c]) finding = true;
  }
  if (n_classes > kNoFinding && labels[kNoFinding] && finding) {
    throw DataError("No-Finding is set together with a finding");
  }
}

// ---------------------------------------------------------------------------
// PGM

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Reads one whitespace-delimited header token, skipping '#' comments.
std::string header_token(const std::string& bytes, std::size_t& pos) {
  while (pos < bytes.size()) {
    const char c = bytes[pos];
    if (c == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      ++pos;
    } else {
      break;
    }
  }
  const std::size_t start = pos;
  while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
  return bytes.substr(start, pos - start);
}

std::size_t parse_extent(const std::string& token, const std::filesystem::path& path) {
  if (token.empty() || !std::all_of(token.begin(), token.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    throw DataError(path.string() + ": malformed PGM header field '" + token + "'");
  }
  return std::stoul(token);
}

}  // namespace

Tensor load_pgm(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  std::size_t pos = 0;
  if (header_token(bytes, pos) != "P5") throw DataError(path.string() + ": not a binary PGM (magic must be P5)");
  const std::size_t width = parse_extent(header_token(bytes, pos), path);
  const std::size_t height = parse_extent(header_token(bytes, pos), path);
  const std::size_t maxval = parse_extent(header_token(bytes, pos), path);
  if (maxval != 255) throw DataError(path.string() + ": maxval must be 255, got " + std::to_string(maxval));
  if (width != height || width == 0) {
    throw DataError(path.string() + ": image must be square, got " + std::to_string(width) + "x" + std::to_string(height));
  }
  ++pos;  // single whitespace byte after maxval
  if (bytes.size() < pos + width * height) throw DataError(path.string() + ": truncated pixel data");
  std::vector<double> pixels(width * height);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    pixels[i] = static_cast<double>(static_cast<unsigned char>(bytes[pos + i])) / 255.0;
  }
  return Tensor({height, width}, std::move(pixels));
}

void save_pgm(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 2 || image.dim(0) != image.dim(1)) {
    throw DataError("save_pgm: image must be square, got " + to_string(image.shape()));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << "P5\n" << image.dim(1) << ' ' << image.dim(0) << "\n255\n";
  std::string pixels(image.size(), '\0');
  auto src = image.data();
  for (std::size_t i = 0; i < src.size(); ++i) {
    pixels[i] = static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(src[i], 0.0, 1.0) * 255.0)));
  }
  out.write(pixels.data(), static_cast<std::streamsize>(pixels.size()));
  if (!out) throw DataError("failed writing " + path.string());
}

// ---------------------------------------------------------------------------
// Manifest

Dataset load_manifest(const std::filesystem::path& path, Split split) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open manifest " + path.string());
  const auto root = path.parent_path();
  Dataset ds;
  ds.split = split;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no) + ": ";
    Example ex;
    try {
      const auto doc = nlohmann::json::parse(line);
      ex.id = doc.at("id").get<std::string>();
      ex.image_path = doc.at("image").get<std::string>();
      ex.report = doc.at("report").get<std::string>();
      for (const auto& v : doc.at("labels")) {
        const int label = v.get<int>();
        if (label != 0 && label != 1) throw DataError("labels must be 0 or 1");
        ex.labels.push_back(static_cast<std::uint8_t>(label));
      }
      validate_labels(ex.labels);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + "malformed manifest line: " + e.what());
    } catch (const DataError& e) {
      throw DataError(where + e.what());
    }
    if (!seen.insert(ex.id).second) throw DataError(where + "duplicate id '" + ex.id + "'");
    try {
      ex.image = load_pgm(root / ex.image_path);
    } catch (const DataError& e) {
      throw DataError(where + e.what());
    }
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

void write_manifest(const std::filesystem::path& path, const Dataset& dataset) {
  const auto root = path.parent_path();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write manifest " + path.string());
  for (const auto& ex : dataset.examples) {
    validate_labels(ex.labels);
    const auto image_file = root / ex.image_path;
    std::filesystem::create_directories(image_file.parent_path());
    save_pgm(image_file, ex.image);
    nlohmann::json doc;
    doc["id"] = ex.id;
    doc["image"] = ex.image_path;
    doc["report"] = ex.report;
    std::vector<int> labels(ex.labels.begin(), ex.labels.end());
    doc["labels"] = labels;
    out << doc.dump() << '\n';
  }
  if (!out) throw DataError("failed writing manifest " + path.string());
}

// ---------------------------------------------------------------------------
// Synthetic data

void SyntheticSpec::validate() const {
  std::vector<std::string> problems;
  std::vector<int> seen(kClassNames.size(), 0);
  for (const auto* subset : {&text_signal_classes, &vision_signal_classes, &both_signal_classes}) {
    for (auto c : *subset) {
      if (c >= kClassNames.size() || c == kNoFinding) {
        problems.push_back("class " + std::to_string(c) + " cannot carry planted evidence");
      } else {
        ++seen[c];
      }
    }
  }
  for (std::size_t c = 0; c < seen.size(); ++c) {
    if (c == kNoFinding) continue;
    if (seen[c] == 0) problems.push_back("class " + std::to_string(c) + " is in no signal subset");
    if (seen[c] > 1) problems.push_back("class " + std::to_string(c) + " is in more than one signal subset");
  }
  if (patch_size == 0 || side % patch_size != 0) problems.emplace_back("side must be a multiple of patch_size");
  if (!(positive_rate >= 0.0 && positive_rate <= 1.0)) problems.emplace_back("positive_rate must lie in [0, 1]");
  if (!(noise_rate >= 0.0 && noise_rate <= 1.0)) problems.emplace_back("noise_rate must lie in [0, 1]");
  if (!problems.empty()) {
    std::string msg = "invalid synthetic data settings:";
    for (const auto& p : problems) msg += "\n  - " + p;
    throw std::invalid_argument(msg);
  }
}

std::string_view SyntheticSpec::theme_word(std::size_t c) {
  static constexpr std::array<std::string_view, 14> words{
      "atelectasis", "cardiomegaly", "consolidation", "edema",     "cardiomediastinum", "fracture",     "lesion",
      "opacity",     "",             "effusion",      "thickening", "pneumonia",        "pneumothorax", "device"};
  return words.at(c);
}

namespace {

constexpr std::array<std::string_view, 8> kFillers{
    "heart size is normal",       "no acute bony abnormality", "mediastinal contours are stable",
    "no interval change",         "trachea is midline",        "limited portable exam",
    "osseous structures are intact", "comparison with prior film"};

// Fixed per-class texture: a p×p binary mask with roughly half the pixels set.
std::vector<std::uint8_t> class_texture(std::size_t c, std::size_t p) {
  Rng rng(0xC1A55E5ULL * (c + 1));
  std::vector<std::uint8_t> mask(p * p);
  for (auto& m : mask) m = rng.bernoulli(0.5) ? 1 : 0;
  return mask;
}

Example synthesize(const SyntheticSpec& spec, const std::string& id, Rng& rng) {
  Example ex;
  ex.id = id;
  ex.image_path = "images/" + id + ".pgm";
  ex.labels.assign(kClassNames.size(), 0);

  bool any = false;
  for (std::size_t c = 0; c < kClassNames.size(); ++c) {
    if (c == kNoFinding) continue;
    if (rng.bernoulli(spec.positive_rate)) {
      ex.labels[c] = 1;
      any = true;
    }
  }
  if (!any) ex.labels[kNoFinding] = 1;

  std::vector<bool> text_evidence(kClassNames.size(), false);
  std::vector<bool> vision_evidence(kClassNames.size(), false);
  for (std::size_t c = 0; c < kClassNames.size(); ++c) {
    if (c == kNoFinding) continue;
    const bool in_text = spec.text_signal_classes.count(c) || spec.both_signal_classes.count(c);
    const bool in_vision = spec.vision_signal_classes.count(c) || spec.both_signal_classes.count(c);
    if (in_text) text_evidence[c] = (ex.labels[c] != 0) != rng.bernoulli(spec.noise_rate);
    if (in_vision) vision_evidence[c] = (ex.labels[c] != 0) != rng.bernoulli(spec.noise_rate);
  }

  std::vector<std::string> sentences;
  for (std::size_t c = 0; c < kClassNames.size(); ++c) {
    if (text_evidence[c]) sentences.push_back("there is " + std::string(SyntheticSpec::theme_word(c)));
  }
  for (std::size_t i = 0; i < spec.filler_sentences; ++i) sentences.emplace_back(kFillers[rng.below(kFillers.size())]);
  if (spec.shuffle_sentences)
    for (std::size_t i = sentences.size(); i > 1; --i) std::swap(sentences[i - 1], sentences[rng.below(i)]);
  ex.report = "FINDINGS :";
  for (const auto& s : sentences) ex.report += " " + s + ".";

  const std::size_t side = spec.side;
  const std::size_t p = spec.patch_size;
  const std::size_t per_side = side / p;
  std::vector<double> pixels(side * side);
  for (auto& px : pixels) px = spec.background + rng.normal(0.0, spec.pixel_noise);
  for (std::size_t c = 0; c < kClassNames.size(); ++c) {
    if (!vision_evidence[c]) continue;
    const std::size_t patch = c % (per_side * per_side);
    const std::size_t row0 = (patch / per_side) * p;
    const std::size_t col0 = (patch % per_side) * p;
    const auto mask = class_texture(c, p);
    for (std::size_t r = 0; r < p; ++r)
      for (std::size_t q = 0; q < p; ++q)
        if (mask[r * p + q]) pixels[(row0 + r) * side + col0 + q] += spec.evidence_gain;
  }
  for (auto& px : pixels) px = std::round(std::clamp(px, 0.0, 1.0) * 255.0) / 255.0;
  ex.image = Tensor({side, side}, std::move(pixels));
  return ex;
}

Dataset synthesize_split(const SyntheticSpec& spec, Split split, std::size_t n, Rng& rng) {
  Dataset ds;
  ds.split = split;
  ds.examples.reserve(n);
  char id[64];
  for (std::size_t i = 0; i < n; ++i) {
    std::snprintf(id, sizeof id, "%s-%05zu", std::string(to_string(split)).c_str(), i);
    ds.examples.push_back(synthesize(spec, id, rng));
  }
  return ds;
}

}  // namespace

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  Rng train_rng = rng.fork();
  Rng val_rng = rng.fork();
  Rng test_rng = rng.fork();
  SyntheticData out;
  out.train = synthesize_split(spec, Split::kTrain, spec.n_train, train_rng);
  out.validation = synthesize_split(spec, Split::kValidation, spec.n_validation, val_rng);
  out.test = synthesize_split(spec, Split::kTest, spec.n_test, test_rng);
  out.corpus = out.train.reports();
  return out;
}

void write_synthetic(const std::filesystem::path& dir, const SyntheticData& data) {
  std::filesystem::create_directories(dir / "images");
  write_manifest(dir / "train.jsonl", data.train);
  write_manifest(dir / "validation.jsonl", data.validation);
  write_manifest(dir / "test.jsonl", data.test);
  std::ofstream corpus(dir / "corpus.txt", std::ios::binary | std::ios::trunc);
  if (!corpus) throw DataError("cannot write " + (dir / "corpus.txt").string());
  for (const auto& line : data.corpus) corpus << line << '\n';
  if (!corpus) throw DataError("failed writing " + (dir / "corpus.txt").string());
}

// ---------------------------------------------------------------------------

std::vector<Batch> batch_iter(const Dataset& dataset, std::size_t batch_size, const Tokenizer& tokenizer,
                              std::size_t seq_len, bool shuffle, Rng& rng) {
  if (batch_size == 0) throw std::invalid_argument("batch_iter: batch_size must be at least 1");
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (shuffle) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  }
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, order.size() - start);
    const auto& first = dataset.examples[order[start]];
    const std::size_t side = first.image.dim(0);
    const std::size_t n_classes = first.labels.size();
    Batch b;
    b.tokens.batch = n;
    b.tokens.seq_len = seq_len;
    b.tokens.ids.reserve(n * seq_len);
    std::vector<double> pixels;
    pixels.reserve(n * side * side);
    std::vector<double> labels;
    labels.reserve(n * n_classes);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& ex = dataset.examples[order[start + i]];
      if (ex.image.shape() != first.image.shape() || ex.labels.size() != n_classes) {
        throw DataError("batch_iter: example '" + ex.id + "' differs in image or label shape from '" + first.id + "'");
      }
      b.ids.push_back(ex.id);
      const auto ids = tokenizer.encode(ex.report, seq_len);
      b.tokens.ids.insert(b.tokens.ids.end(), ids.begin(), ids.end());
      pixels.insert(pixels.end(), ex.image.data().begin(), ex.image.data().end());
      labels.insert(labels.end(), ex.labels.begin(), ex.labels.end());
    }
    b.images = Tensor({n, side, side}, std::move(pixels));
    b.labels = Tensor({n, n_classes}, std::move(labels));
    batches.push_back(std::move(b));
  }
  return batches;
}

}  // namespace mmfx
