#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vtc/autograd.hpp"
#include "vtc/text.hpp"

namespace vtc {

// ---- VTCF frame files -------------------------------------------------------
// "VTCF" | u32 version (=1) | u32 frames | u32 dim | frames*dim f32, all little-endian.

inline constexpr std::uint32_t kVtcfVersion = 1;

std::vector<std::uint8_t> encode_vtcf(const Matrix& frames);
/// Throws FormatError (with byte offset) on bad magic, version, truncation or a
/// dimension other than `expected_dim` when given.
Matrix decode_vtcf(std::span<const std::uint8_t> bytes,
                   std::optional<std::size_t> expected_dim = std::nullopt);

void write_vtcf(const std::filesystem::path& path, const VideoItem& video);
/// The video id is the file stem.
VideoItem load_frame_embeddings(const std::filesystem::path& path,
                                std::optional<std::size_t> expected_dim = std::nullopt);

// ---- JSONL ------------------------------------------------------------------

/// {"text_id": ..., "text": ..., "video_id": ...} per line.
std::vector<TextItem> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<TextItem>& items);

struct EmbeddingRecord {
  std::string id;
  Matrix vectors;
};

/// {"id": ..., "vectors": [[...], ...]} per line.
std::vector<EmbeddingRecord> read_embeddings_jsonl(const std::filesystem::path& path);
void write_embeddings_jsonl(const std::filesystem::path& path,
                            const std::vector<EmbeddingRecord>& records);

// ---- VTCP checkpoints -------------------------------------------------------
// "VTCP" | u32 version | u32 config length | config bytes | u64 config hash |
// u32 tensor count | per tensor: u32 id length | id | u32 rows | u32 cols | f32 payload.

inline constexpr std::uint32_t kVtcpVersion = 1;

struct CheckpointTensor {
  std::string id;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<float> values;
};

struct Checkpoint {
  std::uint32_t version = kVtcpVersion;
  std::string config;
  std::vector<CheckpointTensor> tensors;

  static Checkpoint from_parameters(const ParameterList& params, std::string config);
  /// Copies stored values into matching parameters. Throws LookupError for a missing
  /// id and DimensionError for a shape mismatch.
  void restore(const ParameterList& params) const;
  const CheckpointTensor* find(const std::string& id) const;
};

std::uint64_t config_hash(const std::string& config);
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace vtc
