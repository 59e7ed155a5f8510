// Copyright 2026 The mmfx Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmfx/lora.hpp"
#include "mmfx/model.hpp"
#include "mmfx/tensor.hpp"

namespace mmfx {

// MMFX layout, all integers little-endian:
//   "MMFX" | u32 version | u32 config length | config bytes (UTF-8 JSON)
//   then until end of file, per tensor:
//   u16 name length | name bytes | u8 rank | u32 extent × rank | f32 × numel
inline constexpr char kMmfxMagic[4] = {'M', 'M', 'F', 'X'};
inline constexpr std::uint32_t kMmfxVersion = 1;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TensorTable {
  std::string config;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const;
};

std::string encode_mmfx(const TensorTable& table);
TensorTable decode_mmfx(const std::string& bytes);

void write_mmfx(const std::filesystem::path& path, const TensorTable& table);
TensorTable read_mmfx(const std::filesystem::path& path);

void to_json(nlohmann::json& j, const LoraConfig& cfg);
void from_json(const nlohmann::json& j, LoraConfig& cfg);

/// Config document: {"model": ..., "lora": ... or null, plus `extra` keys}.
/// Every named parameter (adapters included) goes into the tensor table.
void save_model(const std::filesystem::path& path, const FusionModel& model, const std::optional<LoraConfig>& lora,
                const nlohmann::json& extra = nlohmann::json::object());

struct LoadedModel {
  FusionModel model;
  std::optional<LoraConfig> lora;
  nlohmann::json config;
};

/// Rebuilds the architecture from the config document, wraps it when the
/// checkpoint carries adapters, and copies every stored tensor in. Names
/// and shapes must match the rebuilt model exactly.
LoadedModel load_model(const std::filesystem::path& path);
LoadedModel load_model(const TensorTable& table);

}  // namespace mmfx
