#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "melweave/model.hpp"

namespace melweave {

// Checkpoint layout (all little-endian):
//   "SMEL" | u32 version | 9 x u32 config (d_model, n_layers, n_heads, d_ff,
//   n_mels, d_latent, vocab_size, max_positions, reduction) |
//   f32 parameters in Model parameter order | u32 CRC32
// The CRC covers every byte between the magic and the CRC itself.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_model(const Model& model);
// Throws BadMagic, VersionMismatch, TruncatedFile, ChecksumMismatch; with
// `expected` set, throws ConfigMismatch when the stored config differs.
Model deserialize_model(std::span<const std::uint8_t> bytes,
                        const std::optional<ModelConfig>& expected = std::nullopt);

void save_model(const std::filesystem::path& path, const Model& model);
Model load_model(const std::filesystem::path& path, const std::optional<ModelConfig>& expected = std::nullopt);

}  // namespace melweave
