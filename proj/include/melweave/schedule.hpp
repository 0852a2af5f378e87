#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace melweave {

// Interleaving pattern: n text tokens, then m mel frames, repeated while
// text remains; r frames are produced per decoding step.
struct ScheduleConfig {
    std::uint32_t n = 1;
    std::uint32_t m = 4;
    std::uint32_t r = 1;

    // Throws InvalidConfig for zero fields, InvalidReduction when r does not divide m.
    void validate() const;

    bool operator==(const ScheduleConfig&) const = default;
};

struct SequenceElement {
    enum class Kind : std::uint8_t { Text, MelRef, Fill };

    Kind kind = Kind::Fill;
    // Token id for Text, frame index for MelRef, unused for Fill.
    std::uint32_t value = 0;

    static SequenceElement text(std::uint32_t token) { return {Kind::Text, token}; }
    static SequenceElement mel(std::uint32_t frame) { return {Kind::MelRef, frame}; }
    static SequenceElement fill() { return {Kind::Fill, 0}; }

    bool is_text() const { return kind == Kind::Text; }
    bool is_mel() const { return kind == Kind::MelRef; }

    bool operator==(const SequenceElement&) const = default;
};

struct InterleavedSeq {
    std::vector<SequenceElement> elements;
    std::uint32_t text_length = 0;  // L
    std::uint32_t mel_length = 0;   // T
};

struct Target {
    enum class Kind : std::uint8_t { PredictFrame, Ignore };

    Kind kind = Kind::Ignore;
    std::uint32_t frame = 0;

    bool predicts() const { return kind == Kind::PredictFrame; }
};

struct TrainingTargets {
    std::vector<Target> targets;
    std::vector<std::uint8_t> stop_labels;
    std::vector<std::uint8_t> loss_mask;
};

// Constructive interleaving: [n tokens, m frames] groups while both remain,
// the last text group may be short, then all remaining frames.
// Throws TextOverrun when frames run out while text remains.
InterleavedSeq build_interleaved(std::span<const std::uint32_t> tokens, std::uint32_t mel_length,
                                 const ScheduleConfig& cfg);

// Index of MelRef(t) in build_interleaved's output:
//   t' = t + min((floor(t/m) + 1) * n, L)
std::uint64_t position_of_frame(std::uint64_t t, std::uint64_t text_length, const ScheduleConfig& cfg);

// The printed variant t' = t + floor(t/m)*n (or t + L once text is exhausted).
// It places y_0 ahead of x_0, so it disagrees with the constructive layout;
// kept for comparison only.
std::uint64_t position_of_frame_printed(std::uint64_t t, std::uint64_t text_length,
                                        const ScheduleConfig& cfg);

// Position p predicts elements[p+1] when that is a mel frame; positions
// followed by text are fills. The last position carries the stop label.
TrainingTargets build_training_targets(const InterleavedSeq& seq);

struct PlanStep {
    enum class Kind : std::uint8_t { ConsumeText, EmitFrames };

    Kind kind = Kind::ConsumeText;
    // ConsumeText: tokens in the segment. EmitFrames: always r.
    std::uint32_t count = 0;
    // EmitFrames only: real (non-padding) frames in this step.
    std::uint32_t valid = 0;

    bool operator==(const PlanStep&) const = default;
};

// Step plan for L tokens and T frames (T absent: unbounded, the plan stops
// after the last text segment's mel group and the caller keeps emitting).
std::vector<PlanStep> plan_steps(std::uint32_t text_length, std::optional<std::uint32_t> mel_length,
                                 const ScheduleConfig& cfg);

// Decoder-level sequence used for teacher forcing: one element per decoding
// step. A frame element covers frames [first, first + r), of which `valid`
// are real; the rest are zero padding.
struct StepElement {
    enum class Kind : std::uint8_t { Text, Frames, BeginOfSpeech };

    Kind kind = Kind::Text;
    std::uint32_t token = 0;
    std::uint32_t first = 0;
    std::uint32_t valid = 0;

    bool operator==(const StepElement&) const = default;
};

struct StepSequence {
    std::vector<StepElement> elements;
    std::uint32_t text_length = 0;
    std::uint32_t mel_length = 0;
    std::uint32_t reduction = 1;
};

// Expands plan_steps into decoder inputs. When there is no text, a
// begin-of-speech element is prepended so that the first frame has a
// predecessor position.
StepSequence build_step_sequence(std::span<const std::uint32_t> tokens, std::uint32_t mel_length,
                                 const ScheduleConfig& cfg);

}  // namespace melweave
