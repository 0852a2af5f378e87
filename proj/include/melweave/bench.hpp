#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "melweave/model.hpp"
#include "melweave/runtime.hpp"
#include "melweave/synthdata.hpp"

namespace melweave {

enum class Scenario : std::uint8_t { FplA, FplL };

struct LatencySpec {
    double d_llm_ms = 25.0;
    double frame_shift_ms = 12.5;
    int trials = 30;
    int warmup = 5;
    Scenario scenario = Scenario::FplA;
    ClockConfig clock;

    void validate() const;
};

struct Summary {
    double median = 0.0;
    double p95 = 0.0;
    double mean = 0.0;
};

// Median and nearest-rank p95 of a nonempty sample.
Summary summarize(std::vector<double> values);

struct LatencyReport {
    Summary fpl_ms;
    double rtf = 0.0;  // median over trials
    std::uint32_t steps_text = 0;
    std::uint32_t steps_frame = 0;
    std::uint32_t frame_count = 0;
    Summary step_time_us;  // per decode step, over all trials
    nlohmann::json config;
};

// Token k becomes available at (k + 1) * d_llm_ms (an upstream model needs
// d_llm to produce each token); EndOfText arrives with the last token.
std::vector<StreamEvent> simulate_llm_source(std::span<const std::uint32_t> tokens, double d_llm_ms);

std::vector<StreamEvent> scenario_events(std::span<const std::uint32_t> tokens, const LatencySpec& spec);

// First-packet latency of one trace: timestamp of the first emitted frame,
// measured from request start. Throws NoOutput when nothing was emitted.
double first_packet_ms(const SynthesisOutput& out);
// Sum of per-step compute over frames * frame_shift_ms.
double real_time_factor(const SynthesisOutput& out, double frame_shift_ms);

// Pure function of the traces.
LatencyReport score_traces(std::span<const SynthesisOutput> traces, const LatencySpec& spec);

LatencyReport run_bench(const Model& model, const RuntimeConfig& cfg, const LatencySpec& spec,
                        std::span<const std::uint32_t> tokens);

nlohmann::json report_to_json(const LatencyReport& report);

enum class SweepAxis : std::uint8_t { InterleaveRatio, ReductionFactor, SampleTimes };

SweepAxis parse_axis(const std::string& name);
const char* axis_name(SweepAxis axis);

struct SweepContext {
    const Model* model = nullptr;
    RuntimeConfig runtime;
    LatencySpec latency;
    std::vector<std::uint32_t> bench_tokens;
    // Reconstruction metrics over these utterances (may be empty).
    std::vector<Utterance> eval_set;
    const TemplateBank* bank = nullptr;
    // Generate exactly the reference length instead of stopping on the
    // stop head.
    bool forced_length = false;
    // Model for a reduction factor differing from the base model's.
    std::function<Model(std::uint32_t r)> model_for_reduction;
};

struct SweepRow {
    std::string value;
    bool ok = false;
    std::string error;
    LatencyReport report;
    double frame_mse_median = 0.0;
    double frame_mse_mean = 0.0;
    double template_accuracy = 0.0;
    std::size_t evaluated = 0;
};

// Values: "n:m" for interleave_ratio, integers otherwise. A failing value
// yields a row with ok = false and the sweep continues.
std::vector<SweepRow> ablation_sweep(SweepAxis axis, std::span<const std::string> values, const SweepContext& ctx);

struct EvalMetrics {
    double frame_mse_median = 0.0;
    double frame_mse_mean = 0.0;
    double template_accuracy = 0.0;
    std::size_t evaluated = 0;
};

// Synthesizes every utterance's token sequence with immediate text and
// scores it against the reference. Empty outputs count as zero accuracy and
// are left out of the MSE statistics.
EvalMetrics evaluate_reconstruction(const Model& model, const RuntimeConfig& cfg, std::span<const Utterance> set,
                                    const TemplateBank& bank, bool forced_length);

void write_report_jsonl(std::ostream& out, const LatencyReport& report, const std::string& label);
void write_sweep_jsonl(std::ostream& out, SweepAxis axis, std::span<const SweepRow> rows);
void write_sweep_csv(std::ostream& out, SweepAxis axis, std::span<const SweepRow> rows);

}  // namespace melweave
