#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dpage/error.hpp"
#include "dpage/model.hpp"
#include "dpage/trainer.hpp"
#include "dpage/vocab.hpp"

namespace dpage {

// File layout:
//   8 bytes   magic "DPAGECK\0"
//   u32 LE    format version
//   u64 LE    header length in bytes
//   header    UTF-8 JSON (configs, vocabulary, tensor manifest)
//   payload   little-endian float32 values in manifest order
inline constexpr std::array<char, 8> kCheckpointMagic = {'D', 'P', 'A', 'G', 'E', 'C', 'K', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig model;
  TrainingConfig training;
  Vocabulary vocab;
  Seq2SeqModel weights;
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"vocab_size", c.vocab_size},   {"embed_dim", c.embed_dim},       {"hidden_dim", c.hidden_dim},
          {"num_layers", c.num_layers},   {"pattern_dim", c.pattern_dim},   {"num_patterns", c.num_patterns},
          {"seed", c.seed},               {"mode", to_string(c.mode)}};
}

inline nlohmann::json to_json(const TrainingConfig& c) {
  return {{"epochs", c.epochs}, {"batch_size", c.batch_size}, {"lr", c.lr},     {"lr_decay", c.lr_decay},
          {"decay_start", c.decay_start}, {"clip", c.clip},   {"seed", c.seed}, {"mode", to_string(c.mode)}};
}

namespace detail {

template <class T>
T json_field(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) throw DataFormatError(std::string("checkpoint header: missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw DataFormatError(std::string("checkpoint header: bad value for '") + key + "'");
  }
}

inline ModelMode json_mode(const nlohmann::json& j) {
  try {
    return parse_model_mode(json_field<std::string>(j, "mode"));
  } catch (const ConfigError& e) {
    throw DataFormatError(std::string("checkpoint header: ") + e.what());
  }
}

template <class T>
void put_le(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

template <class T>
T get_le(const unsigned char* p) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(p[i]) << (8 * i);
  return v;
}

}  // namespace detail

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.vocab_size = detail::json_field<std::size_t>(j, "vocab_size");
  c.embed_dim = detail::json_field<std::size_t>(j, "embed_dim");
  c.hidden_dim = detail::json_field<std::size_t>(j, "hidden_dim");
  c.num_layers = detail::json_field<std::size_t>(j, "num_layers");
  c.pattern_dim = detail::json_field<std::size_t>(j, "pattern_dim");
  c.num_patterns = detail::json_field<std::size_t>(j, "num_patterns");
  c.seed = detail::json_field<std::uint64_t>(j, "seed");
  c.mode = detail::json_mode(j);
  return c;
}

inline TrainingConfig training_config_from_json(const nlohmann::json& j) {
  TrainingConfig c;
  c.epochs = detail::json_field<std::size_t>(j, "epochs");
  c.batch_size = detail::json_field<std::size_t>(j, "batch_size");
  c.lr = detail::json_field<double>(j, "lr");
  c.lr_decay = detail::json_field<double>(j, "lr_decay");
  c.decay_start = detail::json_field<std::size_t>(j, "decay_start");
  c.clip = detail::json_field<double>(j, "clip");
  c.seed = detail::json_field<std::uint64_t>(j, "seed");
  c.mode = detail::json_mode(j);
  return c;
}

/// Rounds every parameter to the nearest float32 so the in-memory model is
/// exactly what a checkpoint stores.
inline void quantize_to_float32(Seq2SeqModel& model) {
  for (const auto& p : model.parameters())
    for (auto& v : p.node->value.values()) v = static_cast<double>(static_cast<float>(v));
}

inline std::string serialize_checkpoint(const Seq2SeqModel& model, const TrainingConfig& training,
                                        const Vocabulary& vocab) {
  if (vocab.size() != model.config().vocab_size)
    throw ContractError("checkpoint: vocabulary has " + std::to_string(vocab.size()) + " tokens, model expects " +
                        std::to_string(model.config().vocab_size));
  nlohmann::json header;
  header["format_version"] = kCheckpointVersion;
  header["model_config"] = to_json(model.config());
  header["training_config"] = to_json(training);
  header["vocabulary"] = vocab.tokens();
  nlohmann::json manifest = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& p : model.parameters()) {
    manifest.push_back({{"name", p.name}, {"shape", p.node->value.shape()}, {"offset", offset}});
    offset += p.node->value.size() * sizeof(float);
  }
  header["tensors"] = manifest;
  header["payload_bytes"] = offset;
  const std::string text = header.dump();

  std::string out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint64_t>(out, text.size());
  out += text;
  out.reserve(out.size() + offset);
  for (const auto& p : model.parameters())
    for (double v : p.node->value.values()) detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  return out;
}

inline Checkpoint deserialize_checkpoint(const std::string& bytes) {
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
  constexpr std::size_t prefix = 8 + 4 + 8;
  if (bytes.size() < prefix) throw DataFormatError("checkpoint: file too short (" + std::to_string(bytes.size()) + " bytes)");
  if (std::memcmp(bytes.data(), kCheckpointMagic.data(), kCheckpointMagic.size()) != 0)
    throw DataFormatError("checkpoint: bad magic");
  const auto version = detail::get_le<std::uint32_t>(raw + 8);
  if (version != kCheckpointVersion)
    throw DataFormatError("checkpoint: format version " + std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion));
  const auto header_len = detail::get_le<std::uint64_t>(raw + 12);
  if (header_len > bytes.size() - prefix) throw DataFormatError("checkpoint: header length exceeds file size");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + prefix, bytes.begin() + static_cast<std::ptrdiff_t>(prefix + header_len));
  } catch (const nlohmann::json::exception& e) {
    throw DataFormatError(std::string("checkpoint: header is not valid JSON: ") + e.what());
  }
  if (detail::json_field<std::uint32_t>(header, "format_version") != kCheckpointVersion)
    throw DataFormatError("checkpoint: header format version mismatch");
  const ModelConfig mc = model_config_from_json(detail::json_field<nlohmann::json>(header, "model_config"));
  const TrainingConfig tc = training_config_from_json(detail::json_field<nlohmann::json>(header, "training_config"));
  Vocabulary vocab(detail::json_field<Words>(header, "vocabulary"));
  try {
    mc.validate();
  } catch (const ConfigError& e) {
    throw DataFormatError(std::string("checkpoint: ") + e.what());
  }
  Seq2SeqModel model(mc);
  if (vocab.size() != mc.vocab_size) throw DataFormatError("checkpoint: vocabulary size does not match model config");

  const auto manifest = detail::json_field<nlohmann::json>(header, "tensors");
  const auto& params = model.parameters();
  if (!manifest.is_array() || manifest.size() != params.size())
    throw DataFormatError("checkpoint: manifest lists " + std::to_string(manifest.is_array() ? manifest.size() : 0) +
                          " tensors, model has " + std::to_string(params.size()));
  std::size_t expected = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto name = detail::json_field<std::string>(manifest[i], "name");
    const auto shape = detail::json_field<Shape>(manifest[i], "shape");
    const auto offset = detail::json_field<std::size_t>(manifest[i], "offset");
    if (name != params[i].name)
      throw DataFormatError("checkpoint: manifest entry " + std::to_string(i) + " is '" + name + "', expected '" +
                            params[i].name + "'");
    if (shape != params[i].node->value.shape())
      throw DataFormatError("checkpoint: tensor '" + name + "' has shape " + shape_str(shape) + ", expected " +
                            shape_str(params[i].node->value.shape()));
    if (offset != expected) throw DataFormatError("checkpoint: tensor '" + name + "' has a non-contiguous offset");
    expected += shape_size(shape) * sizeof(float);
  }
  const std::size_t payload = bytes.size() - prefix - header_len;
  if (detail::json_field<std::size_t>(header, "payload_bytes") != expected || payload != expected)
    throw DataFormatError("checkpoint: payload length mismatch: " + std::to_string(payload) + " bytes, expected " +
                          std::to_string(expected));
  const unsigned char* p = raw + prefix + header_len;
  for (const auto& param : params)
    for (auto& v : param.node->value.values()) {
      v = static_cast<double>(std::bit_cast<float>(detail::get_le<std::uint32_t>(p)));
      p += 4;
    }
  return {mc, tc, std::move(vocab), std::move(model)};
}

inline void save_checkpoint(const std::filesystem::path& path, const Seq2SeqModel& model,
                            const TrainingConfig& training, const Vocabulary& vocab) {
  const std::string bytes = serialize_checkpoint(model, training, vocab);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for checkpoint " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize_checkpoint(buf.str());
}

}  // namespace dpage
