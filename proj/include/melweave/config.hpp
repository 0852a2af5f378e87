#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "melweave/bench.hpp"
#include "melweave/loss.hpp"
#include "melweave/model.hpp"
#include "melweave/runtime.hpp"
#include "melweave/schedule.hpp"
#include "melweave/synthdata.hpp"

namespace melweave {

struct TrainingConfig {
    double learning_rate = 1e-3;
    std::uint32_t warmup_steps = 500;
    double grad_clip = 1.0;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint32_t batch_size = 8;
    std::uint32_t max_steps = 5000;
    std::uint32_t eval_interval = 250;
    // Validation utterances used for the periodic free-running evaluation.
    std::uint32_t eval_utterances = 40;
    std::uint32_t workers = 1;
    std::uint64_t seed = 7;
};

struct RuntimeSection {
    double stop_threshold = 0.5;
    std::optional<std::uint32_t> min_frames;  // defaults to schedule.m
    std::uint32_t max_frames = 2048;
    int sample_times = 1;
    std::optional<double> sigma_override;
    bool use_mean = false;
    std::uint64_t seed = 11;
};

struct PathsConfig {
    std::string corpus_dir = "corpus";
    std::string checkpoint = "model.smel";
    std::string out_dir = "out";
};

struct EngineConfig {
    ModelConfig model;
    ScheduleConfig schedule;
    LossOptions loss;
    RuntimeSection runtime;
    TrainingConfig training;
    CorpusSpec corpus;
    LatencySpec latency;
    PathsConfig paths;

    // Cross-field checks: m mod r, model/schedule reduction, vocabulary and
    // n_mels agreement with the corpus, sequence length within max_positions.
    void validate() const;
    RuntimeConfig runtime_config() const;
};

// Defaults: d_model 64, 2 layers, 1:4 interleaving, loss weights 2/0.05/1/0.5.
EngineConfig default_config();

nlohmann::json config_to_json(const EngineConfig& cfg);
// Unknown keys are rejected; missing keys take the defaults.
EngineConfig config_from_json(const nlohmann::json& j);
EngineConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const EngineConfig& cfg);

// CRC32 of the canonical JSON form, as 8 hex digits.
std::string config_hash(const EngineConfig& cfg);

}  // namespace melweave
