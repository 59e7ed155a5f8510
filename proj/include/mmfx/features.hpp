// Copyright 2026 The mmfx Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mmfx/lora.hpp"
#include "mmfx/nn.hpp"
#include "mmfx/tensor.hpp"

namespace mmfx {

/// Word-level tokenizer built from a report corpus by frequency rank.
class Tokenizer {
 public:
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kUnknown = 1;
  static constexpr std::int32_t kClass = 2;
  static constexpr std::int32_t kReserved = 3;

  Tokenizer();
  /// `tokens` are the non-reserved entries in id order (id = index + 3).
  explicit Tokenizer(std::vector<std::string> tokens);

  /// Lowercases and splits on anything that is not an ASCII letter or
  /// digit; bytes >= 0x80 are kept so UTF-8 words survive intact.
  static std::vector<std::string> split(std::string_view text);

  std::int32_t id(std::string_view token) const;
  const std::string& token(std::int32_t id) const;
  std::size_t size() const { return tokens_.size(); }

  /// Class token, then the text's ids, truncated or padded to `seq_len`.
  std::vector<std::int32_t> encode(std::string_view text, std::size_t seq_len) const;
  /// Joins non-reserved tokens with single spaces.
  std::string decode(std::span<const std::int32_t> ids) const;

  /// Entries after the reserved ids, in id order.
  std::vector<std::string> vocabulary() const;

  void save(const std::filesystem::path& path) const;
  static Tokenizer load(const std::filesystem::path& path);

  bool operator==(const Tokenizer& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> index_;
};

/// Keeps the `max_vocab - 3` most frequent tokens; ties go to the
/// lexicographically smaller token.
Tokenizer build_vocab(std::span<const std::string> corpus, std::size_t max_vocab);

/// Row-major [batch, seq_len] token ids.
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  std::vector<std::int32_t> ids;
};

struct TextEmbedder {
  Tensor token_table;  // [vocab, d]
  Tensor pos_table;    // [max_len, d]
  std::optional<LoraAdapter> adapter;

  std::size_t vocab_size() const { return token_table.dim(0); }
  std::size_t max_len() const { return pos_table.dim(0); }
  std::size_t model_dim() const { return token_table.dim(1); }
};

TextEmbedder make_text_embedder(std::size_t vocab, std::size_t max_len, std::size_t d_model, Rng& rng);

/// Row i of each sequence is token_table[id_i] + pos_table[i]. The result
/// is [batch, seq_len, d].
Tensor embed_text(const TextEmbedder& embedder, const TokenBatch& tokens, const RunMode& mode = {});
/// Single sequence: [s, d].
Tensor embed_text(const TextEmbedder& embedder, std::span<const std::int32_t> ids, const RunMode& mode = {});

struct PatchProjector {
  std::size_t patch_size = 1;
  LinearLayer proj;  // weight [d, p²]
  Tensor pos_table;  // [n_patches, d]

  std::size_t model_dim() const { return proj.out_features(); }
  std::size_t patch_count() const { return pos_table.dim(0); }
};

PatchProjector make_patch_projector(std::size_t image_side, std::size_t patch_size, std::size_t d_model, Rng& rng);

/// [b, side, side] (or [side, side]) -> [b, n_patches, p²]; patches in
/// row-major order, each flattened row-major.
Tensor patchify(const Tensor& images, std::size_t patch_size);

/// [b, side, side] -> [b, n_patches, d]; [side, side] -> [n_patches, d].
Tensor patchify_project(const PatchProjector& projector, const Tensor& images, const RunMode& mode = {});

}  // namespace mmfx
