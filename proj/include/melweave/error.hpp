#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace melweave {

enum class ErrorCode {
    TextOverrun,
    InvalidReduction,
    InvalidConfig,
    UnknownToken,
    ShapeError,
    MaxLengthExceeded,
    InvalidSampleCount,
    EmptyMask,
    NonFiniteLoss,
    AlreadyPrimed,
    StreamClosed,
    TraceIncomplete,
    NoOutput,
    VersionMismatch,
    TruncatedFile,
    ChecksumMismatch,
    ConfigMismatch,
    BadMagic,
    Io,
};

std::string_view error_name(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(error_name(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace melweave
