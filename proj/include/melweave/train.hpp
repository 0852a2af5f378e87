#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "melweave/config.hpp"
#include "melweave/loss.hpp"
#include "melweave/model.hpp"
#include "melweave/rng.hpp"
#include "melweave/runtime.hpp"
#include "melweave/schedule.hpp"
#include "melweave/synthdata.hpp"

namespace melweave {

// Teacher-forcing layout of one utterance.
struct Example {
    StepSequence seq;
    Matrix frames;  // T x n_mels
    // Frame rows of the prediction matrix: (position, slot within the group).
    std::vector<std::pair<int, int>> pred_blocks;
    Matrix target;                          // pred rows x n_mels, zero padded
    std::vector<std::uint8_t> frame_mask;   // real frames
    std::vector<std::uint8_t> step_mask;    // positions predicting frames
    std::vector<std::uint8_t> stop_labels;  // last position only
};

Example make_example(std::span<const std::uint32_t> tokens, const Matrix& frames, const ScheduleConfig& schedule);

// Standard normal noise for every position of the example.
Matrix example_noise(const Example& ex, std::uint32_t d_latent, Rng& rng);

// Full objective for one example. When `grads` is non-null the parameter
// gradients of breakdown.total are added to it.
LossBreakdown example_loss(const Model& model, const Example& ex, const Matrix& noise, const LossOptions& options,
                           GradStore* grads);

struct ValidationMetrics {
    double reg = 0.0;    // mean over utterances of l1 + l2, mean latent path
    double total = 0.0;
    double stop_accuracy = 0.0;           // over all positions
    double stop_balanced_accuracy = 0.0;  // mean of per-class accuracies
    std::size_t examples = 0;
};

ValidationMetrics validate(const Model& model, std::span<const Example> set, const LossOptions& options);

class Adam {
public:
    Adam(const Model& model, const TrainingConfig& cfg);
    // One update with learning rate `lr` on already-clipped gradients.
    void step(Model& model, const GradStore& grads, double lr);
    std::uint64_t steps() const { return t_; }

private:
    TrainingConfig cfg_;
    std::vector<Matrix> m_, v_;
    std::uint64_t t_ = 0;
};

// Linear warmup to the base rate, then constant.
double learning_rate_at(const TrainingConfig& cfg, std::uint32_t step);

struct EvalRecord {
    std::uint32_t step = 0;
    ValidationMetrics val;
    double frame_mse = 0.0;
    double template_accuracy = 0.0;
};

struct TrainOptions {
    TrainingConfig training;
    LossOptions loss;
    ScheduleConfig schedule;
    RuntimeConfig runtime;  // free-running evaluation
    std::ostream* log = nullptr;
    std::optional<std::filesystem::path> checkpoint;  // best model by validation reg
    std::optional<std::filesystem::path> snapshot_dir;
    std::string config_hash;
};

struct TrainResult {
    double initial_val_reg = 0.0;
    EvalRecord best;
    EvalRecord last;
    std::vector<EvalRecord> history;
    double seconds = 0.0;
};

// Throws NonFiniteLoss (after writing nan_snapshot.json when a snapshot
// directory is set) if the objective diverges.
TrainResult train_model(Model& model, const Corpus& corpus, const TrainOptions& options);

}  // namespace melweave
