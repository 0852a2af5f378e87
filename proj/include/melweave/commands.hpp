#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "melweave/config.hpp"
#include "melweave/error.hpp"

namespace melweave {

struct GlobalOptions {
    std::optional<std::filesystem::path> config;
    std::optional<std::uint64_t> seed;
    std::filesystem::path out_dir = ".";
    bool quick = false;
};

struct SynthOptions {
    std::optional<std::filesystem::path> checkpoint;
    std::string tokens;  // comma separated ids
    std::optional<std::filesystem::path> token_file;
    double d_llm_ms = 0.0;
    // none | continuation | cross-sentence
    std::string prompt_mode = "none";
    std::string prompt_id;  // corpus utterance id
    std::uint32_t prompt_tokens = 2;  // continuation: tokens whose frames are given
    std::filesystem::path output = "synth.melf";
    std::optional<int> sample_times;
    std::optional<double> sigma;
};

struct BenchOptions {
    std::optional<std::filesystem::path> checkpoint;
    std::string scenario = "both";  // fpl-a | fpl-l | both
    std::string sweep;              // empty: no sweep
    std::string values;
    std::optional<int> trials;
    std::string clock;  // virtual | wall, empty: config
    std::string tokens = "1,2,3,4,5,6,7,8";
    bool forced_length = false;
};

struct CheckCommandOptions {
    std::optional<std::filesystem::path> checkpoint;
};

// 0 ok, 1 usage, 2 validation, 3 runtime failure.
int exit_code_for(ErrorCode code);

// Loads the config (or the defaults), applies --seed and validates.
EngineConfig resolve_config(const GlobalOptions& global);
std::filesystem::path resolve_path(const GlobalOptions& global, const std::string& path);

int cmd_gen_data(const GlobalOptions& global, std::ostream& out, std::ostream& err);
int cmd_train(const GlobalOptions& global, std::ostream& out, std::ostream& err);
int cmd_synth(const GlobalOptions& global, const SynthOptions& options, std::ostream& out, std::ostream& err);
int cmd_bench(const GlobalOptions& global, const BenchOptions& options, std::ostream& out, std::ostream& err);
int cmd_check(const GlobalOptions& global, const CheckCommandOptions& options, std::ostream& out, std::ostream& err);

}  // namespace melweave
