#include "melweave/checkpoint.hpp"

#include <cstring>

#include "melweave/error.hpp"
#include "melweave/melio.hpp"

namespace melweave {

namespace {

std::vector<std::uint32_t> config_fields(const ModelConfig& c) {
    return {c.d_model, c.n_layers, c.n_heads, c.d_ff, c.n_mels, c.d_latent, c.vocab_size, c.max_positions,
            c.reduction};
}

}  // namespace

std::vector<std::uint8_t> serialize_model(const Model& model) {
    std::vector<std::uint8_t> out = {'S', 'M', 'E', 'L'};
    out.reserve(4 + 4 + 36 + model.parameter_count() * 4 + 4);
    binary::put_u32(out, kCheckpointVersion);
    for (std::uint32_t field : config_fields(model.config())) binary::put_u32(out, field);
    for (const Param& param : model.params()) {
        // Row-major storage makes data() the documented element order.
        for (Eigen::Index i = 0; i < param.value.size(); ++i) {
            binary::put_f32(out, static_cast<float>(param.value.data()[i]));
        }
    }
    const std::uint32_t crc = binary::crc32(std::span(out).subspan(4));
    binary::put_u32(out, crc);
    return out;
}

Model deserialize_model(std::span<const std::uint8_t> bytes, const std::optional<ModelConfig>& expected) {
    binary::Reader reader(bytes);
    const auto magic = reader.take(4);
    if (std::memcmp(magic.data(), "SMEL", 4) != 0) {
        throw Error(ErrorCode::BadMagic, "not a model checkpoint");
    }
    const std::uint32_t version = reader.u32();
    if (version != kCheckpointVersion) {
        throw Error(ErrorCode::VersionMismatch, "checkpoint version " + std::to_string(version) +
                                                    ", expected " + std::to_string(kCheckpointVersion));
    }
    ModelConfig cfg;
    cfg.d_model = reader.u32();
    cfg.n_layers = reader.u32();
    cfg.n_heads = reader.u32();
    cfg.d_ff = reader.u32();
    cfg.n_mels = reader.u32();
    cfg.d_latent = reader.u32();
    cfg.vocab_size = reader.u32();
    cfg.max_positions = reader.u32();
    cfg.reduction = reader.u32();
    if (expected && !(*expected == cfg)) {
        throw Error(ErrorCode::ConfigMismatch, "checkpoint config differs from the requested model config");
    }
    Model model(cfg);
    const std::size_t blob = model.parameter_count() * 4;
    if (reader.remaining() < blob + 4) {
        throw Error(ErrorCode::TruncatedFile, "checkpoint holds " + std::to_string(reader.remaining()) +
                                                  " bytes after the header, need " + std::to_string(blob + 4));
    }
    const std::size_t payload_end = reader.offset() + blob;
    const std::uint32_t actual_crc = binary::crc32(bytes.subspan(4, payload_end - 4));
    for (Param& param : model.params()) {
        for (Eigen::Index i = 0; i < param.value.size(); ++i) {
            param.value.data()[i] = static_cast<double>(reader.f32());
        }
    }
    const std::uint32_t stored_crc = reader.u32();
    if (stored_crc != actual_crc) {
        throw Error(ErrorCode::ChecksumMismatch, "checkpoint CRC32 mismatch");
    }
    if (reader.remaining() != 0) {
        throw Error(ErrorCode::ChecksumMismatch, "trailing bytes after checkpoint CRC");
    }
    return model;
}

void save_model(const std::filesystem::path& path, const Model& model) {
    binary::write_file(path, serialize_model(model));
}

Model load_model(const std::filesystem::path& path, const std::optional<ModelConfig>& expected) {
    return deserialize_model(binary::read_file(path), expected);
}

}  // namespace melweave
