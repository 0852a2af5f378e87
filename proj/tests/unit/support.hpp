#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>

#include "melweave/error.hpp"
#include "melweave/model.hpp"

namespace melweave::test {

// Error code thrown by f, nullopt when it returns normally.
inline std::optional<ErrorCode> code_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    return std::nullopt;
}

inline std::filesystem::path temp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("melweave_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline Matrix& param(Model& model, const std::string& name) {
    for (Param& p : model.params()) {
        if (p.name == name) return p.value;
    }
    throw Error(ErrorCode::InvalidConfig, "no parameter " + name);
}

}  // namespace melweave::test
