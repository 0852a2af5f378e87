#include "melweave/runtime.hpp"

#include <chrono>

#include "melweave/error.hpp"

namespace melweave {

namespace {

using SteadyClock = std::chrono::steady_clock;

double ms_since(SteadyClock::time_point start) {
    return std::chrono::duration<double, std::milli>(SteadyClock::now() - start).count();
}

}  // namespace

void RuntimeConfig::validate() const {
    schedule.validate();
    if (!(stop_threshold > 0.0 && stop_threshold < 1.0)) {
        throw Error(ErrorCode::InvalidConfig, "stop_threshold must lie in (0, 1)");
    }
    if (min_frames > max_frames) {
        throw Error(ErrorCode::InvalidConfig, "min_frames must not exceed max_frames");
    }
    if (max_frames == 0) {
        throw Error(ErrorCode::InvalidConfig, "max_frames must be >= 1");
    }
    if (sample_times < 1) {
        throw Error(ErrorCode::InvalidSampleCount, "sample_times must be >= 1");
    }
    if (sigma_override && !(*sigma_override >= 0.0)) {
        throw Error(ErrorCode::InvalidConfig, "sigma_override must be >= 0");
    }
}

Stream::Stream(const Model& model, RuntimeConfig cfg)
    : model_(model), cfg_(std::move(cfg)), state_(model.new_state(cfg_.seed)) {
    cfg_.validate();
    if (cfg_.schedule.r != model.config().reduction) {
        throw Error(ErrorCode::ConfigMismatch, "runtime reduction " + std::to_string(cfg_.schedule.r) +
                                                   " differs from model reduction " +
                                                   std::to_string(model.config().reduction));
    }
    if (cfg_.end_token && *cfg_.end_token >= model.config().vocab_size) {
        throw Error(ErrorCode::UnknownToken, "end token outside vocabulary");
    }
}

void Stream::decode(const Vector& input, InputKind kind) {
    pending_ = model_.decode_step(state_, input);
    pending_kind_ = kind;
}

void Stream::prime(const Prompt& prompt) {
    if (started_) {
        throw Error(ErrorCode::AlreadyPrimed, "stream already primed or started");
    }
    started_ = true;
    const std::uint32_t n_mels = model_.config().n_mels;
    const auto frame_count = static_cast<std::uint32_t>(prompt.frames.rows());
    if (frame_count > 0 && prompt.frames.cols() != static_cast<Eigen::Index>(n_mels)) {
        throw Error(ErrorCode::ShapeError, "prompt frames must have n_mels columns");
    }
    if (prompt.tokens.empty() && frame_count == 0) return;
    const StepSequence seq = build_step_sequence(prompt.tokens, frame_count, cfg_.schedule);
    if (seq.elements.size() > model_.config().max_positions) {
        throw Error(ErrorCode::MaxLengthExceeded,
                    "prompt needs " + std::to_string(seq.elements.size()) + " positions, max_positions is " +
                        std::to_string(model_.config().max_positions));
    }
    const std::uint32_t r = cfg_.schedule.r;
    for (const StepElement& el : seq.elements) {
        switch (el.kind) {
            case StepElement::Kind::Text:
                decode(model_.embed_text(el.token), InputKind::Text);
                break;
            case StepElement::Kind::BeginOfSpeech:
                decode(model_.begin_of_speech(), InputKind::BeginOfSpeech);
                break;
            case StepElement::Kind::Frames: {
                Vector group = Vector::Zero(static_cast<Eigen::Index>(r * n_mels));
                for (std::uint32_t j = 0; j < el.valid; ++j) {
                    group.segment(static_cast<Eigen::Index>(j * n_mels), n_mels) =
                        prompt.frames.row(el.first + j).transpose();
                }
                decode(model_.prenet_flat(group), InputKind::Mel);
                break;
            }
        }
    }
}

void Stream::push_text(std::uint32_t token) {
    if (text_ended_ || stopped_) {
        throw Error(ErrorCode::StreamClosed, "text pushed after end of text");
    }
    if (token >= model_.config().vocab_size) {
        throw Error(ErrorCode::UnknownToken, "token " + std::to_string(token) + " outside vocabulary");
    }
    buffer_.push_back(token);
}

void Stream::end_text() {
    if (text_ended_ || stopped_) {
        throw Error(ErrorCode::StreamClosed, "text already ended");
    }
    if (cfg_.end_token) buffer_.push_back(*cfg_.end_token);
    text_ended_ = true;
}

StepResult Stream::step() {
    if (stopped_) {
        throw Error(ErrorCode::StreamClosed, "stream has stopped");
    }
    started_ = true;
    StepResult result;
    const auto start = SteadyClock::now();
    auto stop = [&](StopReason reason) {
        stopped_ = true;
        result.kind = StepResult::Kind::Stopped;
        result.reason = reason;
        return result;
    };
    if (at_cap_) return stop(StopReason::MaxLength);

    if (in_text_group_) {
        if (group_text_ < cfg_.schedule.n && !buffer_.empty()) {
            const std::uint32_t token = buffer_.front();
            buffer_.pop_front();
            if (state_.position >= model_.config().max_positions) return stop(StopReason::MaxLength);
            decode(model_.embed_text(token), InputKind::Text);
            ++consumed_;
            if (++group_text_ == cfg_.schedule.n) {
                in_text_group_ = false;
                group_frames_ = 0;
            }
            result.kind = StepResult::Kind::Consumed;
            result.decoded = true;
            result.total_compute_ms = ms_since(start);
            return result;
        }
        if (!text_ended_) {
            result.kind = StepResult::Kind::NeedText;
            return result;
        }
        // Text exhausted: the current (possibly short) group closes and all
        // remaining frames follow.
        in_text_group_ = false;
        tail_ = true;
        if (!pending_) {
            if (state_.position >= model_.config().max_positions) return stop(StopReason::MaxLength);
            decode(model_.begin_of_speech(), InputKind::BeginOfSpeech);
            result.kind = StepResult::Kind::Consumed;
            result.decoded = true;
            result.begin_of_speech = true;
            result.total_compute_ms = ms_since(start);
            return result;
        }
    }

    const Vector& hidden = *pending_;
    result.head_evaluated = true;
    result.stop_prob = model_.stop_head(hidden);
    const bool eligible = text_exhausted() && pending_kind_ == InputKind::Mel && emitted_ >= cfg_.min_frames;
    if (eligible && result.stop_prob >= cfg_.stop_threshold) return stop(StopReason::StopToken);
    if (emitted_ >= cfg_.max_frames) return stop(StopReason::MaxLength);

    const LatentParams latent = model_.latent_head(hidden);
    const Vector z = cfg_.use_mean ? latent.mu
                                   : sample_latent(latent, state_.rng, cfg_.sample_times, cfg_.sigma_override);
    std::vector<MelFrame> frames = model_.postnet(z);
    result.emit_compute_ms = ms_since(start);

    const std::uint32_t r = cfg_.schedule.r;
    const std::uint32_t count = std::min(r, cfg_.max_frames - emitted_);
    emitted_ += count;
    group_frames_ += r;
    if (!tail_ && group_frames_ >= cfg_.schedule.m) {
        in_text_group_ = true;
        group_text_ = 0;
    }
    if (emitted_ >= cfg_.max_frames || state_.position >= model_.config().max_positions) {
        at_cap_ = true;
        pending_.reset();
    } else {
        decode(model_.prenet(frames), InputKind::Mel);
        result.decoded = true;
    }
    frames.resize(count);
    result.frames = std::move(frames);
    result.kind = StepResult::Kind::Emitted;
    result.total_compute_ms = ms_since(start);
    return result;
}

void validate_events(std::span<const StreamEvent> events) {
    double last = 0.0;
    for (std::size_t i = 0; i < events.size(); ++i) {
        if (!(events[i].arrival_ms >= last)) {
            throw Error(ErrorCode::InvalidConfig, "event arrival times must be nondecreasing and >= 0");
        }
        last = events[i].arrival_ms;
        if (events[i].kind == StreamEvent::Kind::EndOfText && i + 1 != events.size()) {
            throw Error(ErrorCode::InvalidConfig, "events after EndOfText");
        }
    }
    if (events.empty() || events.back().kind != StreamEvent::Kind::EndOfText) {
        throw Error(ErrorCode::TraceIncomplete, "event trace has no EndOfText");
    }
}

SynthesisOutput synthesize(std::span<const StreamEvent> events, const RuntimeConfig& cfg, const Model& model,
                           const ClockConfig& clock_cfg) {
    validate_events(events);
    Stream stream(model, cfg);
    if (cfg.prompt) stream.prime(*cfg.prompt);

    const bool virtual_clock = clock_cfg.mode == ClockConfig::Mode::Virtual;
    const bool serialized = clock_cfg.arrival == ClockConfig::Arrival::Serialized;
    SynthesisOutput out;
    double clock = 0.0;
    double delivered_until = 0.0;  // latest arrival handed to the stream
    std::size_t next = 0;

    auto deliver = [&](const StreamEvent& ev) {
        if (ev.kind == StreamEvent::Kind::TextArrived) {
            stream.push_text(ev.token);
        } else {
            stream.end_text();
        }
        delivered_until = ev.arrival_ms;
        ++next;
    };

    for (;;) {
        const double horizon = serialized ? delivered_until : clock;
        while (next < events.size() && events[next].arrival_ms <= horizon) deliver(events[next]);

        StepResult res = stream.step();
        TraceEntry entry;
        switch (res.kind) {
            case StepResult::Kind::NeedText: {
                const StreamEvent& ev = events[next];
                const double waited = serialized ? ev.arrival_ms - delivered_until : ev.arrival_ms - clock;
                clock += std::max(0.0, waited);
                deliver(ev);
                entry.kind = TraceEntry::Kind::Wait;
                break;
            }
            case StepResult::Kind::Consumed: {
                const double cost = virtual_clock ? clock_cfg.step_cost_ms : res.total_compute_ms;
                clock += cost;
                entry.kind = res.begin_of_speech ? TraceEntry::Kind::BeginOfSpeech : TraceEntry::Kind::Text;
                entry.compute_ms = cost;
                ++out.steps_text;
                break;
            }
            case StepResult::Kind::Emitted: {
                const double emit = virtual_clock ? clock_cfg.emit_cost_ms : res.emit_compute_ms;
                const double cost =
                    virtual_clock ? emit + (res.decoded ? clock_cfg.step_cost_ms : 0.0) : res.total_compute_ms;
                const double stamp = clock + emit;
                clock += cost;
                for (MelFrame& f : res.frames) {
                    out.frames.push_back(std::move(f));
                    out.timestamps_ms.push_back(stamp);
                }
                entry.kind = TraceEntry::Kind::Emit;
                entry.compute_ms = cost;
                entry.frames = static_cast<std::uint32_t>(res.frames.size());
                ++out.steps_frame;
                break;
            }
            case StepResult::Kind::Stopped: {
                const double cost = virtual_clock ? (res.head_evaluated ? clock_cfg.emit_cost_ms : 0.0)
                                                  : res.total_compute_ms;
                clock += cost;
                entry.kind = TraceEntry::Kind::Stop;
                entry.compute_ms = cost;
                out.stop_reason = res.reason;
                break;
            }
        }
        entry.position = stream.state().position;
        entry.time_ms = clock;
        out.trace.push_back(entry);
        if (res.kind == StepResult::Kind::Stopped) break;
    }
    return out;
}

std::vector<StreamEvent> immediate_events(std::span<const std::uint32_t> tokens) {
    std::vector<StreamEvent> events;
    events.reserve(tokens.size() + 1);
    for (std::uint32_t t : tokens) events.push_back(StreamEvent::text(t, 0.0));
    events.push_back(StreamEvent::end(0.0));
    return events;
}

Vector first_frame_input(const Model& model) { return model.begin_of_speech(); }

const char* stop_reason_name(StopReason reason) {
    return reason == StopReason::StopToken ? "stop_token" : "max_length";
}

const char* trace_kind_name(TraceEntry::Kind kind) {
    switch (kind) {
        case TraceEntry::Kind::Wait: return "wait";
        case TraceEntry::Kind::Text: return "text";
        case TraceEntry::Kind::BeginOfSpeech: return "begin";
        case TraceEntry::Kind::Emit: return "emit";
        case TraceEntry::Kind::Stop: return "stop";
    }
    return "?";
}

}  // namespace melweave
