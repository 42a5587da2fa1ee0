#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "afp/model.hpp"

namespace afp {

/// Binary checkpoint layout (all little-endian):
///
///   "AFPT" | version u32 | record*
///   record := name_len u32 | name bytes | dtype u8 | rank u8 | dims u64[rank] | payload
///
/// dtype codes: 0 = f32, 1 = f64, 2 = i64. The first record is always
/// "config" (i64[6]: vocab, d_model, layers, heads, d_ff, max_seq_len); the
/// remaining records are the model tensors in ModelParams order.
inline constexpr char kCheckpointMagic[4] = {'A', 'F', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { f32 = 0, f64 = 1, i64 = 2 };

struct CheckpointRecord {
  std::string name;
  DType dtype = DType::f32;
  std::vector<std::uint64_t> dims;
  std::vector<std::uint8_t> payload;
};

std::vector<std::uint8_t> encode_checkpoint(const std::vector<CheckpointRecord>& records);
std::vector<CheckpointRecord> decode_checkpoint(const std::vector<std::uint8_t>& bytes);

template <class T>
std::vector<std::uint8_t> serialize_params(const ModelParams<T>& params);

using AnyParams = std::variant<ModelParams<float>, ModelParams<double>>;

AnyParams deserialize_params(const std::vector<std::uint8_t>& bytes);

template <class T>
void save_checkpoint(const std::filesystem::path& path, const ModelParams<T>& params);

AnyParams load_checkpoint(const std::filesystem::path& path);

/// Loads and converts to the requested element type if needed.
template <class T>
ModelParams<T> load_checkpoint_as(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

/// Hex FNV-1a digest, for reporting and comparing artifacts.
std::string digest_hex(const std::vector<std::uint8_t>& bytes);

}  // namespace afp
