#pragma once

// Single-file weight archive:
//   "MMIANCKP" | u32 version | u64 header length | JSON header | f32 data
// Integers and floats are little-endian. The header echoes the model config
// and lists each tensor's name, shape, offset and count (in floats).

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"
#include "mmian/errors.hpp"
#include "mmian/model.hpp"

namespace mmian::model {

namespace fs = std::filesystem;

inline constexpr char kCheckpointMagic[8] = {'M', 'M', 'I', 'A', 'N', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

template <typename U>
U get_le(const unsigned char* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
  return v;
}

}  // namespace detail

inline void save_checkpoint(const WeightBundle& bundle, const fs::path& path) {
  nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, arr] : bundle.tensors) {
    tensors.push_back({{"name", name}, {"shape", arr.shape}, {"offset", offset}, {"count", arr.values.size()}});
    offset += arr.values.size();
  }
  const nlohmann::ordered_json header = {
      {"config", bundle.config}, {"provenance", to_string(bundle.provenance)}, {"tensors", tensors}};
  const std::string text = header.dump();

  std::string blob(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put_le<std::uint32_t>(blob, kCheckpointVersion);
  detail::put_le<std::uint64_t>(blob, text.size());
  blob += text;
  blob.reserve(blob.size() + offset * 4);
  for (const auto& [name, arr] : bundle.tensors)
    for (float v : arr.values) detail::put_le<std::uint32_t>(blob, std::bit_cast<std::uint32_t>(v));

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

inline WeightBundle load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  const std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto* bytes = reinterpret_cast<const unsigned char*>(blob.data());
  constexpr std::size_t kPrefix = sizeof(kCheckpointMagic) + 4 + 8;
  if (blob.size() < kPrefix || std::memcmp(blob.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw ValidationError(path.string() + " is not a checkpoint");
  }
  const auto version = detail::get_le<std::uint32_t>(bytes + 8);
  if (version != kCheckpointVersion) throw ValidationError("unsupported checkpoint version " + std::to_string(version));
  const auto header_len = detail::get_le<std::uint64_t>(bytes + 12);
  if (header_len > blob.size() - kPrefix) throw ValidationError("truncated checkpoint header");

  WeightBundle bundle;
  const std::size_t data_start = kPrefix + header_len;
  const std::size_t data_floats = (blob.size() - data_start) / 4;
  try {
    const auto header = nlohmann::ordered_json::parse(blob.substr(kPrefix, header_len));
    bundle.config = header.at("config");
    bundle.provenance = parse_provenance(header.at("provenance").get<std::string>());
    for (const auto& t : header.at("tensors")) {
      WeightArray arr;
      arr.shape = t.at("shape").get<std::vector<int>>();
      const auto offset = t.at("offset").get<std::uint64_t>();
      const auto count = t.at("count").get<std::uint64_t>();
      std::uint64_t expected = 1;
      for (int d : arr.shape) expected *= static_cast<std::uint64_t>(std::max(d, 0));
      const auto name = t.at("name").get<std::string>();
      if (expected != count) throw ShapeError("tensor '" + name + "' count does not match its shape");
      if (offset > data_floats || count > data_floats - offset) throw ValidationError("truncated tensor '" + name + "'");
      arr.values.resize(count);
      const unsigned char* p = bytes + data_start + offset * 4;
      for (std::size_t i = 0; i < count; ++i) arr.values[i] = std::bit_cast<float>(detail::get_le<std::uint32_t>(p + 4 * i));
      bundle.tensors.emplace(name, std::move(arr));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed checkpoint header: ") + e.what());
  }
  return bundle;
}

template <typename T>
void save_checkpoint(const Model<T>& model, const fs::path& path) {
  save_checkpoint(model.weights(), path);
}

/// Rebuilds the model from the echoed config and loads every tensor.
template <typename T = float>
Model<T> load_model(const fs::path& path) {
  const WeightBundle bundle = load_checkpoint(path);
  Model<T> model(ModelConfig::from_json(bundle.config));
  model.load_weights(bundle);
  return model;
}

}  // namespace mmian::model
