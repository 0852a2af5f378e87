#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "melweave/model.hpp"

namespace melweave {

namespace binary {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v);
void put_f32(std::vector<std::uint8_t>& out, float v);

// Little-endian cursor over a byte span; throws TruncatedFile on overrun.
class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
    std::uint32_t u32();
    float f32();
    std::span<const std::uint8_t> take(std::size_t n);
    std::size_t offset() const { return offset_; }
    std::size_t remaining() const { return bytes_.size() - offset_; }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t offset_ = 0;
};

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace binary

// MELF mel file: "MELF" | u32 version | u32 n_mels | u32 frame_count |
// f32 frame_shift_ms | frame_count * n_mels f32, row-major, little-endian.
inline constexpr std::uint32_t kMelFileVersion = 1;

struct MelFile {
    std::uint32_t n_mels = 0;
    float frame_shift_ms = 12.5f;
    std::vector<MelFrame> frames;
};

std::vector<std::uint8_t> encode_mel(const MelFile& mel);
MelFile decode_mel(std::span<const std::uint8_t> bytes);
void write_mel(const std::filesystem::path& path, const MelFile& mel);
MelFile read_mel(const std::filesystem::path& path);

}  // namespace melweave
