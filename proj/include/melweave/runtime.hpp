#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <vector>

#include "melweave/model.hpp"
#include "melweave/schedule.hpp"

namespace melweave {

struct StreamEvent {
    enum class Kind : std::uint8_t { TextArrived, EndOfText };
    Kind kind = Kind::TextArrived;
    std::uint32_t token = 0;
    double arrival_ms = 0.0;

    static StreamEvent text(std::uint32_t token, double at) { return {Kind::TextArrived, token, at}; }
    static StreamEvent end(double at) { return {Kind::EndOfText, 0, at}; }
};

// Conditioning prefix fed through the decoder before generation.
struct Prompt {
    std::vector<std::uint32_t> tokens;
    Matrix frames;  // T x n_mels, may be empty
};

struct RuntimeConfig {
    ScheduleConfig schedule;
    double stop_threshold = 0.5;
    std::uint32_t min_frames = 4;
    std::uint32_t max_frames = 2048;
    int sample_times = 1;
    // Replaces exp(0.5 * log_var) when sampling; 0 gives the mean path.
    std::optional<double> sigma_override;
    // Use the latent mean directly, skipping the sampler.
    bool use_mean = false;
    // Token pushed when the text stream ends (the corpus end marker).
    std::optional<std::uint32_t> end_token;
    std::optional<Prompt> prompt;
    std::uint64_t seed = 0;

    void validate() const;
};

enum class StopReason : std::uint8_t { StopToken, MaxLength };

struct StepResult {
    enum class Kind : std::uint8_t { NeedText, Consumed, Emitted, Stopped };
    Kind kind = Kind::NeedText;
    std::vector<MelFrame> frames;  // Emitted only
    double stop_prob = 0.0;
    StopReason reason = StopReason::StopToken;
    // Work done by the step, for clock accounting.
    bool decoded = false;
    bool head_evaluated = false;
    bool begin_of_speech = false;
    double emit_compute_ms = 0.0;   // until the frames were ready
    double total_compute_ms = 0.0;  // whole step
};

// One synthesis stream. Owns its decoder state; the model is shared and
// read-only.
class Stream {
public:
    Stream(const Model& model, RuntimeConfig cfg);

    // Feeds the prompt through the decoder without emitting frames.
    void prime(const Prompt& prompt);
    void push_text(std::uint32_t token);
    void end_text();
    StepResult step();

    bool stopped() const { return stopped_; }
    bool text_ended() const { return text_ended_; }
    std::size_t buffered_text() const { return buffer_.size(); }
    std::uint32_t emitted_frames() const { return emitted_; }
    std::uint32_t consumed_text() const { return consumed_; }
    const DecoderState& state() const { return state_; }

private:
    enum class InputKind : std::uint8_t { None, Text, Mel, BeginOfSpeech };

    bool text_exhausted() const { return text_ended_ && buffer_.empty(); }
    void decode(const Vector& input, InputKind kind);

    const Model& model_;
    RuntimeConfig cfg_;
    DecoderState state_;
    std::deque<std::uint32_t> buffer_;
    bool text_ended_ = false;
    bool started_ = false;
    bool stopped_ = false;
    bool at_cap_ = false;

    std::optional<Vector> pending_;  // hidden of the newest position
    InputKind pending_kind_ = InputKind::None;
    bool in_text_group_ = true;
    bool tail_ = false;
    std::uint32_t group_text_ = 0;
    std::uint32_t group_frames_ = 0;
    std::uint32_t emitted_ = 0;
    std::uint32_t consumed_ = 0;
};

struct TraceEntry {
    enum class Kind : std::uint8_t { Wait, Text, BeginOfSpeech, Emit, Stop };
    Kind kind = Kind::Wait;
    std::uint32_t position = 0;  // decoder position after the step
    double time_ms = 0.0;        // clock after the step
    double compute_ms = 0.0;     // compute charged to the step
    std::uint32_t frames = 0;
};

struct ClockConfig {
    enum class Mode : std::uint8_t { Virtual, Wall };
    // Overlapped: text arrives on its own timeline and waiting moves the
    // clock to the arrival. Serialized: the upstream producer shares the
    // device, so each wait adds the gap between consecutive arrivals.
    enum class Arrival : std::uint8_t { Overlapped, Serialized };
    Mode mode = Mode::Virtual;
    Arrival arrival = Arrival::Overlapped;
    double step_cost_ms = 5.0;  // virtual cost of one decode step
    double emit_cost_ms = 0.0;  // virtual cost of latent head + post-net
};

struct SynthesisOutput {
    std::vector<MelFrame> frames;
    std::vector<double> timestamps_ms;  // one per frame
    StopReason stop_reason = StopReason::StopToken;
    std::vector<TraceEntry> trace;
    std::uint32_t steps_text = 0;   // text and begin-of-speech decode steps
    std::uint32_t steps_frame = 0;  // frame-emitting steps
};

// Throws TraceIncomplete when the trace has no EndOfText, InvalidConfig when
// arrivals decrease or events follow EndOfText.
void validate_events(std::span<const StreamEvent> events);

SynthesisOutput synthesize(std::span<const StreamEvent> events, const RuntimeConfig& cfg, const Model& model,
                           const ClockConfig& clock = {});

// Every token available at t = 0, then EndOfText.
std::vector<StreamEvent> immediate_events(std::span<const std::uint32_t> tokens);

// Learned begin-of-speech input used when the first frame has no
// predecessor position.
Vector first_frame_input(const Model& model);

const char* stop_reason_name(StopReason reason);
const char* trace_kind_name(TraceEntry::Kind kind);

}  // namespace melweave
