// Copyright 2026 The mmfx Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmfx/features.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <stdexcept>

namespace mmfx {

namespace {
const std::vector<std::string> kReservedTokens{"<pad>", "<unk>", "<cls>"};

bool is_word_byte(unsigned char c) { return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c >= 0x80; }
}  // namespace

Tokenizer::Tokenizer() : Tokenizer(std::vector<std::string>{}) {}

Tokenizer::Tokenizer(std::vector<std::string> tokens) : tokens_(kReservedTokens) {
  for (auto& t : tokens) {
    if (t.empty()) throw std::invalid_argument("tokenizer: empty token");
    if (index_.count(t) || std::find(kReservedTokens.begin(), kReservedTokens.end(), t) != kReservedTokens.end()) {
      throw std::invalid_argument("tokenizer: duplicate token '" + t + "'");
    }
    index_.emplace(t, static_cast<std::int32_t>(tokens_.size()));
    tokens_.push_back(std::move(t));
  }
}

std::vector<std::string> Tokenizer::split(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  for (char raw : text) {
    auto c = static_cast<unsigned char>(raw);
    if (c >= 'A' && c <= 'Z') c = static_cast<unsigned char>(c - 'A' + 'a');
    if (is_word_byte(c)) {
      current.push_back(static_cast<char>(c));
    } else if (!current.empty()) {
      words.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

std::int32_t Tokenizer::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnknown : it->second;
}

const std::string& Tokenizer::token(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw std::out_of_range("tokenizer: id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<std::int32_t> Tokenizer::encode(std::string_view text, std::size_t seq_len) const {
  if (seq_len == 0) throw std::invalid_argument("encode: seq_len must be at least 1");
  std::vector<std::int32_t> ids;
  ids.reserve(seq_len);
  ids.push_back(kClass);
  for (const auto& word : split(text)) {
    if (ids.size() == seq_len) break;
    ids.push_back(id(word));
  }
  ids.resize(seq_len, kPad);
  return ids;
}

std::string Tokenizer::decode(std::span<const std::int32_t> ids) const {
  std::string out;
  for (auto i : ids) {
    if (i == kPad || i == kClass) continue;
    if (!out.empty()) out.push_back(' ');
    out += token(i);
  }
  return out;
}

std::vector<std::string> Tokenizer::vocabulary() const {
  return {tokens_.begin() + kReserved, tokens_.end()};
}

void Tokenizer::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write vocabulary file " + path.string());
  for (std::size_t i = kReserved; i < tokens_.size(); ++i) out << tokens_[i] << '\n';
  if (!out) throw std::runtime_error("failed writing vocabulary file " + path.string());
}

Tokenizer Tokenizer::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read vocabulary file " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return Tokenizer(std::move(tokens));
}

Tokenizer build_vocab(std::span<const std::string> corpus, std::size_t max_vocab) {
  if (corpus.empty()) throw std::invalid_argument("build_vocab: empty corpus");
  if (max_vocab < static_cast<std::size_t>(Tokenizer::kReserved)) {
    throw std::invalid_argument("build_vocab: max_vocab must leave room for the 3 reserved ids");
  }
  std::map<std::string, std::size_t> counts;
  for (const auto& text : corpus)
    for (auto& word : Tokenizer::split(text)) ++counts[word];
  for (const auto& reserved : kReservedTokens) counts.erase(reserved);

  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  const std::size_t keep = std::min(ranked.size(), max_vocab - Tokenizer::kReserved);
  std::vector<std::string> tokens;
  tokens.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) tokens.push_back(std::move(ranked[i].first));
  return Tokenizer(std::move(tokens));
}

// ---------------------------------------------------------------------------

TextEmbedder make_text_embedder(std::size_t vocab, std::size_t max_len, std::size_t d_model, Rng& rng) {
  TextEmbedder e;
  e.token_table = Tensor::randn({vocab, d_model}, kInitStddev, rng, true);
  e.pos_table = Tensor::randn({max_len, d_model}, kInitStddev, rng, true);
  return e;
}

// The embedding adapter sees one-hot inputs, so no adapter dropout applies here.
Tensor embed_text(const TextEmbedder& embedder, const TokenBatch& tokens, const RunMode& /*mode*/) {
  if (tokens.ids.size() != tokens.batch * tokens.seq_len) throw ShapeError("embed_text: token batch is inconsistent");
  if (tokens.seq_len > embedder.max_len()) {
    throw ShapeError("embed_text: sequence length " + std::to_string(tokens.seq_len) + " exceeds positional table of " +
                     std::to_string(embedder.max_len()));
  }
  const Shape index_shape{tokens.batch, tokens.seq_len};
  Tensor rows = embedding(embedder.token_table, tokens.ids, index_shape);
  if (embedder.adapter) {
    // ΔWᵀ row for token i is scale · A[:, i]ᵀ · Bᵀ.
    const auto& ad = *embedder.adapter;
    Tensor a_rows = embedding(transpose(ad.a), tokens.ids, index_shape);
    rows = add(rows, scale(linear(a_rows, ad.b), ad.scale()));
  }
  std::vector<std::int32_t> positions(tokens.seq_len);
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<std::int32_t>(i);
  Tensor pos = embedding(embedder.pos_table, positions, {tokens.seq_len});
  return add(rows, pos);
}

Tensor embed_text(const TextEmbedder& embedder, std::span<const std::int32_t> ids, const RunMode& mode) {
  TokenBatch batch{1, ids.size(), {ids.begin(), ids.end()}};
  Tensor out = embed_text(embedder, batch, mode);
  return reshape(out, {ids.size(), embedder.model_dim()});
}

PatchProjector make_patch_projector(std::size_t image_side, std::size_t patch_size, std::size_t d_model, Rng& rng) {
  if (patch_size == 0 || image_side % patch_size != 0) {
    throw std::invalid_argument("patch projector: image side " + std::to_string(image_side) +
                                " is not divisible by patch size " + std::to_string(patch_size));
  }
  const std::size_t per_side = image_side / patch_size;
  PatchProjector p;
  p.patch_size = patch_size;
  p.proj = make_linear(d_model, patch_size * patch_size, false, rng);
  p.pos_table = Tensor::randn({per_side * per_side, d_model}, kInitStddev, rng, true);
  return p;
}

Tensor patchify(const Tensor& images, std::size_t patch_size) {
  if (images.rank() == 2) {
    Tensor out = patchify(reshape(images.detach(), {1, images.dim(0), images.dim(1)}), patch_size);
    return reshape(out, {out.dim(1), out.dim(2)});
  }
  if (images.rank() != 3 || images.dim(1) != images.dim(2)) {
    throw ShapeError("patchify: expected square images [b, side, side], got " + to_string(images.shape()));
  }
  const std::size_t b = images.dim(0), side = images.dim(1), p = patch_size;
  if (p == 0 || side % p != 0) {
    throw std::invalid_argument("patchify: side " + std::to_string(side) + " not divisible by patch size " +
                                std::to_string(p));
  }
  const std::size_t per_side = side / p;
  const std::size_t n = per_side * per_side;
  auto src = images.data();
  std::vector<double> out(b * n * p * p);
  std::size_t o = 0;
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t pr = 0; pr < per_side; ++pr)
      for (std::size_t pc = 0; pc < per_side; ++pc)
        for (std::size_t r = 0; r < p; ++r)
          for (std::size_t c = 0; c < p; ++c) out[o++] = src[(bi * side + pr * p + r) * side + pc * p + c];
  return Tensor({b, n, p * p}, std::move(out));
}

Tensor patchify_project(const PatchProjector& projector, const Tensor& images, const RunMode& mode) {
  Tensor patches = patchify(images, projector.patch_size);
  if (patches.dim(patches.rank() - 2) != projector.patch_count()) {
    throw ShapeError("patchify_project: image yields " + std::to_string(patches.dim(patches.rank() - 2)) +
                     " patches, projector expects " + std::to_string(projector.patch_count()));
  }
  return add(linear_forward(projector.proj, patches, mode), projector.pos_table);
}

}  // namespace mmfx
