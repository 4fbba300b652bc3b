#pragma once

// Checkpoint file layout (all integers little-endian):
//
//   bytes 0..5   magic "EGMAE1"
//   bytes 6..13  u64 header length L
//   next L bytes UTF-8 JSON header:
//                  { "format": 1, "provenance": str, "encoder": {...},
//                    "decoder": {...} | null, "class_names": [str],
//                    "payload_bytes": u64,
//                    "tensors": [{ "name", "shape", "offset", "nbytes", "crc32" }] }
//   remainder    payload: float32 values, tensors at their recorded offsets
//
// The header is written with sorted keys, so saving the same model twice
// produces identical bytes.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <zlib.h>

#include "egmae/errors.hpp"
#include "egmae/model.hpp"

namespace egmae {

inline void to_json(nlohmann::json& j, const EncoderConfig& c) {
  j = nlohmann::json{{"in_channels", c.in_channels}, {"stem_patch", c.stem_patch}, {"stage_dims", c.stage_dims},
                     {"stage_depths", c.stage_depths}, {"dw_kernel", c.dw_kernel}, {"expansion", c.expansion},
                     {"ln_eps", c.ln_eps}};
}

inline void from_json(const nlohmann::json& j, EncoderConfig& c) {
  const EncoderConfig d;
  c.in_channels = j.value("in_channels", d.in_channels);
  c.stem_patch = j.value("stem_patch", d.stem_patch);
  c.stage_dims = j.value("stage_dims", d.stage_dims);
  c.stage_depths = j.value("stage_depths", d.stage_depths);
  c.dw_kernel = j.value("dw_kernel", d.dw_kernel);
  c.expansion = j.value("expansion", d.expansion);
  c.ln_eps = j.value("ln_eps", d.ln_eps);
}

inline void to_json(nlohmann::json& j, const DecoderConfig& c) {
  j = nlohmann::json{
      {"dim", c.dim}, {"depth", c.depth}, {"refine_blocks", c.refine_blocks}, {"expansion", c.expansion}};
}

inline void from_json(const nlohmann::json& j, DecoderConfig& c) {
  const DecoderConfig d;
  c.dim = j.value("dim", d.dim);
  c.depth = j.value("depth", d.depth);
  c.refine_blocks = j.value("refine_blocks", d.refine_blocks);
  c.expansion = j.value("expansion", d.expansion);
}

inline std::uint32_t crc32_of(const void* data, std::size_t n) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  crc = ::crc32(crc, static_cast<const Bytef*>(data), static_cast<uInt>(n));
  return static_cast<std::uint32_t>(crc);
}

namespace detail {

inline constexpr char kMagic[6] = {'E', 'G', 'M', 'A', 'E', '1'};

inline void append_f32_le(std::string& out, float v) {
  auto bits = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
}

inline float read_f32_le(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return std::bit_cast<float>(bits);
}

}  // namespace detail

template <typename T>
std::string serialize_checkpoint(const Model<T>& model) {
  std::string payload;
  nlohmann::json index = nlohmann::json::array();
  for (const auto& [name, t] : model.params) {
    const std::size_t offset = payload.size();
    for (T v : t.data()) detail::append_f32_le(payload, static_cast<float>(v));
    const std::size_t nbytes = payload.size() - offset;
    index.push_back({{"name", name},
                     {"shape", t.shape()},
                     {"offset", offset},
                     {"nbytes", nbytes},
                     {"crc32", crc32_of(payload.data() + offset, nbytes)}});
  }
  nlohmann::json header{{"format", 1},
                        {"provenance", to_string(model.provenance)},
                        {"encoder", model.encoder},
                        {"decoder", model.decoder ? nlohmann::json(*model.decoder) : nlohmann::json(nullptr)},
                        {"class_names", model.class_names},
                        {"payload_bytes", payload.size()},
                        {"tensors", index}};
  const std::string h = header.dump();
  std::string out(detail::kMagic, sizeof(detail::kMagic));
  const std::uint64_t len = h.size();
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((len >> (8 * i)) & 0xffu));
  out += h;
  out += payload;
  return out;
}

template <typename T>
void save_checkpoint(const Model<T>& model, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(model);
  std::ofstream out(path, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.close();
  if (!out) throw IoError("failed to write checkpoint " + path.string());
}

struct LoadedCheckpoint {
  Model<float> model;
  /// Tensors whose payload bytes no longer match their stored CRC32.
  std::vector<std::string> checksum_failures;

  bool intact() const { return checksum_failures.empty(); }
};

inline LoadedCheckpoint parse_checkpoint(const std::string& bytes) {
  using Kind = CheckpointError::Kind;
  if (bytes.size() < sizeof(detail::kMagic) || std::memcmp(bytes.data(), detail::kMagic, sizeof(detail::kMagic)) != 0) {
    throw CheckpointError(Kind::BadMagic, "not a checkpoint: bad magic (expected EGMAE1)");
  }
  if (bytes.size() < 14) throw CheckpointError(Kind::Truncated, "truncated checkpoint: header length missing");
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[6 + i])) << (8 * i);
  if (bytes.size() - 14 < len) throw CheckpointError(Kind::Truncated, "truncated checkpoint: header cut short");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 14, bytes.begin() + 14 + static_cast<std::ptrdiff_t>(len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(Kind::IndexMismatch, std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  const std::size_t payload_start = 14 + len;
  const std::size_t payload_avail = bytes.size() - payload_start;

  LoadedCheckpoint out;
  Model<float>& m = out.model;
  std::size_t payload_bytes = 0;
  try {
    m.provenance = provenance_from_string(header.at("provenance").get<std::string>());
    m.encoder = header.at("encoder").get<EncoderConfig>();
    if (!header.at("decoder").is_null()) m.decoder = header.at("decoder").get<DecoderConfig>();
    m.class_names = header.at("class_names").get<std::vector<std::string>>();
    payload_bytes = header.at("payload_bytes").get<std::size_t>();
  } catch (const std::exception& e) {
    throw CheckpointError(Kind::IndexMismatch, std::string("checkpoint header incomplete: ") + e.what());
  }
  if (payload_avail < payload_bytes) {
    throw CheckpointError(Kind::Truncated, "truncated checkpoint: payload has " + std::to_string(payload_avail) +
                                               " of " + std::to_string(payload_bytes) + " bytes");
  }

  // The configs determine the expected parameter names and shapes.
  Model<float> skeleton;
  try {
    Rng rng(0);
    add_encoder_params(skeleton.params, m.encoder, rng);
    if (m.decoder) add_decoder_params(skeleton.params, m.encoder, *m.decoder, rng);
    if (!m.class_names.empty()) add_head_params(skeleton.params, m.encoder.out_dim(), m.class_names.size(), rng);
  } catch (const ConfigError& e) {
    throw CheckpointError(Kind::IndexMismatch, std::string("checkpoint config invalid: ") + e.what());
  }

  const nlohmann::json tensors = header.value("tensors", nlohmann::json());
  if (!tensors.is_array() || tensors.size() != skeleton.params.size()) {
    throw CheckpointError(Kind::IndexMismatch, "tensor index has " + std::to_string(tensors.size()) +
                                                   " entries, config implies " +
                                                   std::to_string(skeleton.params.size()));
  }
  const auto* base = reinterpret_cast<const unsigned char*>(bytes.data() + payload_start);
  std::size_t i = 0;
  try {
    for (const auto& [name, expected] : skeleton.params) {
      const auto& e = tensors[i++];
      if (!e.is_object() || !e.contains("name") || !e.contains("shape") || !e.contains("offset") ||
          !e.contains("nbytes") || !e.contains("crc32")) {
        throw CheckpointError(Kind::IndexMismatch, "tensor index entry " + std::to_string(i - 1) + " is incomplete");
      }
      const auto tname = e.at("name").get<std::string>();
      const auto shape = e.at("shape").get<Shape>();
      const auto offset = e.at("offset").get<std::size_t>();
      const auto nbytes = e.at("nbytes").get<std::size_t>();
      if (tname != name || shape != expected.shape()) {
        throw CheckpointError(Kind::IndexMismatch, "tensor index entry '" + tname + "' " + shape_str(shape) +
                                                       " does not match expected '" + name + "' " +
                                                       shape_str(expected.shape()));
      }
      if (nbytes != shape_numel(shape) * 4 || offset > payload_bytes || nbytes > payload_bytes - offset) {
        throw CheckpointError(Kind::IndexMismatch, "tensor '" + name + "' offset/size outside payload");
      }
      std::vector<float> values(shape_numel(shape));
      for (std::size_t k = 0; k < values.size(); ++k) values[k] = detail::read_f32_le(base + offset + 4 * k);
      if (crc32_of(base + offset, nbytes) != e.at("crc32").get<std::uint32_t>()) out.checksum_failures.push_back(name);
      m.params.add(name, Tensor<float>(shape, std::move(values), true));
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(Kind::IndexMismatch,
                          "tensor index entry " + std::to_string(i - 1) + " is malformed: " + e.what());
  }
  return out;
}

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointError::Kind::Io, "cannot open checkpoint " + path.string());
  const std::string bytes(std::istreambuf_iterator<char>(in), {});
  return parse_checkpoint(bytes);
}

/// Throws ConfigMismatch unless a checkpoint's encoder can be used by a run
/// configured with `expected`.
inline void require_compatible_encoder(const EncoderConfig& found, const EncoderConfig& expected) {
  if (!(found == expected)) {
    throw CheckpointError(CheckpointError::Kind::ConfigMismatch,
                          "checkpoint encoder config " + nlohmann::json(found).dump() +
                              " does not match run config " + nlohmann::json(expected).dump());
  }
}

}  // namespace egmae
