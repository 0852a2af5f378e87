#include "melweave/error.hpp"

namespace melweave {

std::string_view error_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::TextOverrun: return "TextOverrun";
        case ErrorCode::InvalidReduction: return "InvalidReduction";
        case ErrorCode::InvalidConfig: return "InvalidConfig";
        case ErrorCode::UnknownToken: return "UnknownToken";
        case ErrorCode::ShapeError: return "ShapeError";
        case ErrorCode::MaxLengthExceeded: return "MaxLengthExceeded";
        case ErrorCode::InvalidSampleCount: return "InvalidSampleCount";
        case ErrorCode::EmptyMask: return "EmptyMask";
        case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
        case ErrorCode::AlreadyPrimed: return "AlreadyPrimed";
        case ErrorCode::StreamClosed: return "StreamClosed";
        case ErrorCode::TraceIncomplete: return "TraceIncomplete";
        case ErrorCode::NoOutput: return "NoOutput";
        case ErrorCode::VersionMismatch: return "VersionMismatch";
        case ErrorCode::TruncatedFile: return "TruncatedFile";
        case ErrorCode::ChecksumMismatch: return "ChecksumMismatch";
        case ErrorCode::ConfigMismatch: return "ConfigMismatch";
        case ErrorCode::BadMagic: return "BadMagic";
        case ErrorCode::Io: return "Io";
    }
    return "Unknown";
}

}  // namespace melweave
