#include "melweave/schedule.hpp"

#include <algorithm>
#include <string>

#include "melweave/error.hpp"

namespace melweave {

void ScheduleConfig::validate() const {
    if (n == 0 || m == 0 || r == 0) {
        throw Error(ErrorCode::InvalidConfig, "schedule n, m, r must all be >= 1");
    }
    if (m % r != 0) {
        throw Error(ErrorCode::InvalidReduction,
                    "reduction factor r=" + std::to_string(r) + " does not divide m=" + std::to_string(m));
    }
}

InterleavedSeq build_interleaved(std::span<const std::uint32_t> tokens, std::uint32_t mel_length,
                                 const ScheduleConfig& cfg) {
    if (cfg.n == 0 || cfg.m == 0) {
        throw Error(ErrorCode::InvalidConfig, "schedule n and m must be >= 1");
    }
    InterleavedSeq seq;
    seq.text_length = static_cast<std::uint32_t>(tokens.size());
    seq.mel_length = mel_length;
    seq.elements.reserve(tokens.size() + mel_length);

    std::size_t next_text = 0;
    std::uint32_t next_frame = 0;
    while (next_text < tokens.size() && next_frame < mel_length) {
        const std::size_t text_end = std::min(tokens.size(), next_text + cfg.n);
        for (; next_text < text_end; ++next_text) {
            seq.elements.push_back(SequenceElement::text(tokens[next_text]));
        }
        const std::uint32_t mel_end = std::min<std::uint32_t>(mel_length, next_frame + cfg.m);
        for (; next_frame < mel_end; ++next_frame) {
            seq.elements.push_back(SequenceElement::mel(next_frame));
        }
    }
    if (next_text < tokens.size()) {
        throw Error(ErrorCode::TextOverrun, std::to_string(tokens.size() - next_text) +
                                                " text tokens left after all " +
                                                std::to_string(mel_length) + " frames were placed");
    }
    for (; next_frame < mel_length; ++next_frame) {
        seq.elements.push_back(SequenceElement::mel(next_frame));
    }
    return seq;
}

std::uint64_t position_of_frame(std::uint64_t t, std::uint64_t text_length, const ScheduleConfig& cfg) {
    const std::uint64_t text_before = std::min((t / cfg.m + 1) * cfg.n, text_length);
    return t + text_before;
}

std::uint64_t position_of_frame_printed(std::uint64_t t, std::uint64_t text_length,
                                        const ScheduleConfig& cfg) {
    const std::uint64_t text_before = (t / cfg.m) * cfg.n;
    return text_before < text_length ? t + text_before : t + text_length;
}

TrainingTargets build_training_targets(const InterleavedSeq& seq) {
    const std::size_t size = seq.elements.size();
    TrainingTargets out;
    out.targets.resize(size);
    out.stop_labels.assign(size, 0);
    out.loss_mask.assign(size, 0);
    for (std::size_t p = 0; p + 1 < size; ++p) {
        const SequenceElement& next = seq.elements[p + 1];
        if (next.is_mel()) {
            out.targets[p] = {Target::Kind::PredictFrame, next.value};
            out.loss_mask[p] = 1;
        }
    }
    if (size > 0) {
        out.stop_labels[size - 1] = 1;
    }
    return out;
}

std::vector<PlanStep> plan_steps(std::uint32_t text_length, std::optional<std::uint32_t> mel_length,
                                 const ScheduleConfig& cfg) {
    cfg.validate();
    const std::uint32_t steps_per_group = cfg.m / cfg.r;
    std::vector<PlanStep> plan;

    auto emit = [&](std::uint32_t valid) {
        plan.push_back({PlanStep::Kind::EmitFrames, cfg.r, valid});
    };

    std::uint32_t text_left = text_length;
    std::uint64_t frames_left = mel_length ? *mel_length : UINT64_MAX;
    while (text_left > 0 && frames_left > 0) {
        const std::uint32_t take = std::min(text_left, cfg.n);
        plan.push_back({PlanStep::Kind::ConsumeText, take, 0});
        text_left -= take;
        for (std::uint32_t s = 0; s < steps_per_group && frames_left > 0; ++s) {
            const auto valid = static_cast<std::uint32_t>(std::min<std::uint64_t>(cfg.r, frames_left));
            emit(valid);
            frames_left -= valid;
        }
    }
    if (text_left > 0) {
        throw Error(ErrorCode::TextOverrun, std::to_string(text_left) + " text tokens left");
    }
    if (mel_length) {
        while (frames_left > 0) {
            const auto valid = static_cast<std::uint32_t>(std::min<std::uint64_t>(cfg.r, frames_left));
            emit(valid);
            frames_left -= valid;
        }
    }
    return plan;
}

StepSequence build_step_sequence(std::span<const std::uint32_t> tokens, std::uint32_t mel_length,
                                 const ScheduleConfig& cfg) {
    StepSequence seq;
    seq.text_length = static_cast<std::uint32_t>(tokens.size());
    seq.mel_length = mel_length;
    seq.reduction = cfg.r;
    const auto plan = plan_steps(seq.text_length, mel_length, cfg);
    if (tokens.empty()) {
        seq.elements.push_back({StepElement::Kind::BeginOfSpeech, 0, 0, 0});
    }
    std::size_t next_text = 0;
    std::uint32_t next_frame = 0;
    for (const PlanStep& step : plan) {
        if (step.kind == PlanStep::Kind::ConsumeText) {
            for (std::uint32_t i = 0; i < step.count; ++i) {
                seq.elements.push_back({StepElement::Kind::Text, tokens[next_text++], 0, 0});
            }
        } else {
            seq.elements.push_back({StepElement::Kind::Frames, 0, next_frame, step.valid});
            next_frame += step.valid;
        }
    }
    return seq;
}

}  // namespace melweave
