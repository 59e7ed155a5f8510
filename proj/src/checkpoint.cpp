// Copyright 2026 The mmfx Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmfx/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>
#include <sstream>

namespace mmfx {

static_assert(std::endian::native == std::endian::little, "MMFX I/O assumes a little-endian host");

namespace {

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string take(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }
  std::size_t position() const { return pos_; }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(std::string("MMFX: truncated file while reading ") + what + " at byte " + std::to_string(pos_) +
                        " (file is " + std::to_string(bytes_.size()) + " bytes)");
    }
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

const Tensor& TensorTable::at(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw std::out_of_range("tensor table has no entry '" + name + "'");
}

bool TensorTable::contains(const std::string& name) const {
  return std::any_of(tensors.begin(), tensors.end(), [&](const auto& e) { return e.first == name; });
}

std::string encode_mmfx(const TensorTable& table) {
  std::string out(kMmfxMagic, 4);
  put<std::uint32_t>(out, kMmfxVersion);
  if (table.config.size() > std::numeric_limits<std::uint32_t>::max()) throw FormatError("MMFX: config too large");
  put<std::uint32_t>(out, static_cast<std::uint32_t>(table.config.size()));
  out += table.config;
  for (const auto& [name, t] : table.tensors) {
    if (name.size() > std::numeric_limits<std::uint16_t>::max()) throw FormatError("MMFX: tensor name too long: " + name);
    if (t.rank() > std::numeric_limits<std::uint8_t>::max()) throw FormatError("MMFX: rank too large for " + name);
    put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out += name;
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
    for (auto extent : t.shape()) {
      if (extent > std::numeric_limits<std::uint32_t>::max()) throw FormatError("MMFX: extent too large for " + name);
      put<std::uint32_t>(out, static_cast<std::uint32_t>(extent));
    }
    for (double v : t.data()) put<float>(out, static_cast<float>(v));
  }
  return out;
}

TensorTable decode_mmfx(const std::string& bytes) {
  Reader in(bytes);
  if (in.take(4, "magic") != std::string(kMmfxMagic, 4)) throw FormatError("MMFX: bad magic bytes");
  const auto version = in.get<std::uint32_t>("version");
  if (version != kMmfxVersion) {
    throw FormatError("MMFX: unsupported version " + std::to_string(version) + " (expected " +
                      std::to_string(kMmfxVersion) + ")");
  }
  TensorTable table;
  const auto config_len = in.get<std::uint32_t>("config length");
  table.config = in.take(config_len, "config document");
  while (!in.done()) {
    const auto name_len = in.get<std::uint16_t>("tensor name length");
    std::string name = in.take(name_len, "tensor name");
    const auto rank = in.get<std::uint8_t>("tensor rank");
    if (rank == 0) throw FormatError("MMFX: tensor '" + name + "' has rank 0");
    Shape shape(rank);
    for (auto& extent : shape) {
      extent = in.get<std::uint32_t>("tensor extent");
      if (extent == 0) throw FormatError("MMFX: tensor '" + name + "' has a zero extent");
    }
    const std::size_t n = numel(shape);
    std::vector<double> data(n);
    for (auto& v : data) v = static_cast<double>(in.get<float>("tensor data"));
    table.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  return table;
}

void write_mmfx(const std::filesystem::path& path, const TensorTable& table) {
  const std::string bytes = encode_mmfx(table);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

TensorTable read_mmfx(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_mmfx(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------

void to_json(nlohmann::json& j, const LoraConfig& cfg) {
  j = nlohmann::json{{"rank", cfg.rank},
                     {"alpha", cfg.alpha},
                     {"dropout_rate", cfg.dropout_rate},
                     {"targets", std::vector<std::string>(cfg.targets.begin(), cfg.targets.end())},
                     {"init_stddev", cfg.init_stddev}};
}

void from_json(const nlohmann::json& j, LoraConfig& cfg) {
  static const std::vector<std::string> known{"rank", "alpha", "dropout_rate", "targets", "init_stddev"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw std::invalid_argument("unknown lora config field '" + key + "'");
    }
  }
  if (j.contains("rank")) j.at("rank").get_to(cfg.rank);
  if (j.contains("alpha")) j.at("alpha").get_to(cfg.alpha);
  if (j.contains("dropout_rate")) j.at("dropout_rate").get_to(cfg.dropout_rate);
  if (j.contains("init_stddev")) j.at("init_stddev").get_to(cfg.init_stddev);
  if (j.contains("targets")) {
    cfg.targets.clear();
    for (const auto& t : j.at("targets")) cfg.targets.insert(t.get<std::string>());
  }
}

void save_model(const std::filesystem::path& path, const FusionModel& model, const std::optional<LoraConfig>& lora,
                const nlohmann::json& extra) {
  nlohmann::json doc = extra.is_object() ? extra : nlohmann::json::object();
  doc["model"] = model.config;
  doc["lora"] = lora ? nlohmann::json(*lora) : nlohmann::json(nullptr);
  TensorTable table;
  table.config = doc.dump();
  for (const auto& p : model.named_parameters()) table.tensors.emplace_back(p.name, p.tensor);
  write_mmfx(path, table);
}

LoadedModel load_model(const TensorTable& table) {
  LoadedModel out;
  try {
    out.config = nlohmann::json::parse(table.config);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("MMFX: config document is not valid JSON: ") + e.what());
  }
  if (!out.config.contains("model")) throw FormatError("MMFX: config document lacks a \"model\" section");
  const auto cfg = out.config.at("model").get<ModelConfig>();
  Rng rng(0);
  out.model = build_model(cfg, rng);
  if (out.config.contains("lora") && !out.config.at("lora").is_null()) {
    out.lora = out.config.at("lora").get<LoraConfig>();
    wrap_model(out.model, *out.lora, rng);
  }

  std::map<std::string, const Tensor*> stored;
  for (const auto& [name, t] : table.tensors) {
    if (!stored.emplace(name, &t).second) throw FormatError("MMFX: duplicate tensor '" + name + "'");
  }
  auto params = out.model.named_parameters();
  if (params.size() != stored.size()) {
    throw FormatError("MMFX: checkpoint holds " + std::to_string(stored.size()) + " tensors, config implies " +
                      std::to_string(params.size()));
  }
  for (auto& p : params) {
    auto it = stored.find(p.name);
    if (it == stored.end()) throw FormatError("MMFX: checkpoint is missing tensor '" + p.name + "'");
    if (it->second->shape() != p.tensor.shape()) {
      throw FormatError("MMFX: tensor '" + p.name + "' has shape " + to_string(it->second->shape()) + ", config implies " +
                        to_string(p.tensor.shape()));
    }
    auto dst = p.tensor.mutable_data();
    auto src = it->second->data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
  return out;
}

LoadedModel load_model(const std::filesystem::path& path) {
  try {
    return load_model(read_mmfx(path));
  } catch (const FormatError& e) {
    const std::string what = e.what();
    if (what.rfind(path.string(), 0) == 0) throw;
    throw FormatError(path.string() + ": " + what);
  }
}

}  // namespace mmfx
