#include "melweave/melio.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <zlib.h>

#include "melweave/error.hpp"

namespace melweave {

namespace binary {

static_assert(std::endian::native == std::endian::little, "little-endian host assumed");

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

std::span<const std::uint8_t> Reader::take(std::size_t n) {
    if (remaining() < n) {
        throw Error(ErrorCode::TruncatedFile, "need " + std::to_string(n) + " bytes at offset " +
                                                  std::to_string(offset_) + ", have " +
                                                  std::to_string(remaining()));
    }
    auto out = bytes_.subspan(offset_, n);
    offset_ += n;
    return out;
}

std::uint32_t Reader::u32() {
    const auto b = take(4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

float Reader::f32() { return std::bit_cast<float>(u32()); }

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
    uLong crc = ::crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed in chunks.
    std::size_t offset = 0;
    while (offset < bytes.size()) {
        const std::size_t chunk = std::min<std::size_t>(bytes.size() - offset, 1u << 30);
        crc = ::crc32(crc, bytes.data() + offset, static_cast<uInt>(chunk));
        offset += chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorCode::Io, "cannot open " + path.string());
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error(ErrorCode::Io, "cannot write " + path.string());
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw Error(ErrorCode::Io, "short write to " + path.string());
    }
}

}  // namespace binary

std::vector<std::uint8_t> encode_mel(const MelFile& mel) {
    std::vector<std::uint8_t> out = {'M', 'E', 'L', 'F'};
    binary::put_u32(out, kMelFileVersion);
    binary::put_u32(out, mel.n_mels);
    binary::put_u32(out, static_cast<std::uint32_t>(mel.frames.size()));
    binary::put_f32(out, mel.frame_shift_ms);
    out.reserve(out.size() + mel.frames.size() * mel.n_mels * 4);
    for (const MelFrame& frame : mel.frames) {
        if (frame.size() != mel.n_mels) {
            throw Error(ErrorCode::ShapeError, "frame width differs from n_mels");
        }
        for (Eigen::Index b = 0; b < frame.values.size(); ++b) {
            binary::put_f32(out, static_cast<float>(frame.values(b)));
        }
    }
    return out;
}

MelFile decode_mel(std::span<const std::uint8_t> bytes) {
    binary::Reader reader(bytes);
    const auto magic = reader.take(4);
    if (std::memcmp(magic.data(), "MELF", 4) != 0) {
        throw Error(ErrorCode::BadMagic, "not a MELF file");
    }
    const std::uint32_t version = reader.u32();
    if (version != kMelFileVersion) {
        throw Error(ErrorCode::VersionMismatch, "MELF version " + std::to_string(version));
    }
    MelFile mel;
    mel.n_mels = reader.u32();
    const std::uint32_t count = reader.u32();
    mel.frame_shift_ms = reader.f32();
    mel.frames.reserve(count);
    for (std::uint32_t t = 0; t < count; ++t) {
        Vector v(mel.n_mels);
        for (std::uint32_t b = 0; b < mel.n_mels; ++b) v(b) = reader.f32();
        mel.frames.emplace_back(std::move(v));
    }
    return mel;
}

void write_mel(const std::filesystem::path& path, const MelFile& mel) { binary::write_file(path, encode_mel(mel)); }

MelFile read_mel(const std::filesystem::path& path) { return decode_mel(binary::read_file(path)); }

}  // namespace melweave
