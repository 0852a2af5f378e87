#include "melweave/bench.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "melweave/error.hpp"

namespace melweave {

void LatencySpec::validate() const {
    if (!(d_llm_ms >= 0.0)) throw Error(ErrorCode::InvalidConfig, "d_llm_ms must be >= 0");
    if (!(frame_shift_ms > 0.0)) throw Error(ErrorCode::InvalidConfig, "frame_shift_ms must be > 0");
    if (trials < 1) throw Error(ErrorCode::InvalidConfig, "trials must be >= 1");
    if (warmup < 0) throw Error(ErrorCode::InvalidConfig, "warmup must be >= 0");
    if (!(clock.step_cost_ms >= 0.0) || !(clock.emit_cost_ms >= 0.0)) {
        throw Error(ErrorCode::InvalidConfig, "virtual step costs must be >= 0");
    }
}

Summary summarize(std::vector<double> values) {
    if (values.empty()) throw Error(ErrorCode::NoOutput, "no samples to summarize");
    std::sort(values.begin(), values.end());
    Summary s;
    const std::size_t n = values.size();
    s.median = n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
    const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n)));
    s.p95 = values[std::max<std::size_t>(rank, 1) - 1];
    s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(n);
    return s;
}

std::vector<StreamEvent> simulate_llm_source(std::span<const std::uint32_t> tokens, double d_llm_ms) {
    std::vector<StreamEvent> events;
    events.reserve(tokens.size() + 1);
    for (std::size_t k = 0; k < tokens.size(); ++k) {
        events.push_back(StreamEvent::text(tokens[k], static_cast<double>(k + 1) * d_llm_ms));
    }
    events.push_back(StreamEvent::end(static_cast<double>(tokens.size()) * d_llm_ms));
    return events;
}

std::vector<StreamEvent> scenario_events(std::span<const std::uint32_t> tokens, const LatencySpec& spec) {
    return spec.scenario == Scenario::FplA ? immediate_events(tokens) : simulate_llm_source(tokens, spec.d_llm_ms);
}

double first_packet_ms(const SynthesisOutput& out) {
    if (out.timestamps_ms.empty()) throw Error(ErrorCode::NoOutput, "synthesis emitted no frames");
    return out.timestamps_ms.front();
}

double real_time_factor(const SynthesisOutput& out, double frame_shift_ms) {
    if (out.frames.empty()) throw Error(ErrorCode::NoOutput, "synthesis emitted no frames");
    double compute = 0.0;
    for (const TraceEntry& e : out.trace) compute += e.compute_ms;
    return compute / (static_cast<double>(out.frames.size()) * frame_shift_ms);
}

LatencyReport score_traces(std::span<const SynthesisOutput> traces, const LatencySpec& spec) {
    if (traces.empty()) throw Error(ErrorCode::NoOutput, "no traces to score");
    std::vector<double> fpl, rtf, step_us;
    for (const SynthesisOutput& out : traces) {
        fpl.push_back(first_packet_ms(out));
        rtf.push_back(real_time_factor(out, spec.frame_shift_ms));
        for (const TraceEntry& e : out.trace) {
            if (e.kind == TraceEntry::Kind::Text || e.kind == TraceEntry::Kind::BeginOfSpeech ||
                e.kind == TraceEntry::Kind::Emit) {
                step_us.push_back(e.compute_ms * 1000.0);
            }
        }
    }
    LatencyReport report;
    report.fpl_ms = summarize(fpl);
    report.rtf = summarize(rtf).median;
    report.step_time_us = summarize(step_us);
    report.steps_text = traces.front().steps_text;
    report.steps_frame = traces.front().steps_frame;
    report.frame_count = static_cast<std::uint32_t>(traces.front().frames.size());
    report.config = {{"scenario", spec.scenario == Scenario::FplA ? "fpl-a" : "fpl-l"},
                     {"d_llm_ms", spec.d_llm_ms},
                     {"frame_shift_ms", spec.frame_shift_ms},
                     {"trials", static_cast<int>(traces.size())},
                     {"clock", spec.clock.mode == ClockConfig::Mode::Virtual ? "virtual" : "wall"},
                     {"arrival", spec.clock.arrival == ClockConfig::Arrival::Serialized ? "serialized" : "overlapped"},
                     {"step_cost_ms", spec.clock.step_cost_ms},
                     {"emit_cost_ms", spec.clock.emit_cost_ms}};
    return report;
}

LatencyReport run_bench(const Model& model, const RuntimeConfig& cfg, const LatencySpec& spec,
                        std::span<const std::uint32_t> tokens) {
    spec.validate();
    const std::vector<StreamEvent> events = scenario_events(tokens, spec);
    const bool wall = spec.clock.mode == ClockConfig::Mode::Wall;
    if (wall) {
        for (int i = 0; i < spec.warmup; ++i) (void)synthesize(events, cfg, model, spec.clock);
    }
    std::vector<SynthesisOutput> traces;
    traces.reserve(static_cast<std::size_t>(spec.trials));
    for (int i = 0; i < spec.trials; ++i) traces.push_back(synthesize(events, cfg, model, spec.clock));
    LatencyReport report = score_traces(traces, spec);
    report.config["n"] = cfg.schedule.n;
    report.config["m"] = cfg.schedule.m;
    report.config["r"] = cfg.schedule.r;
    report.config["sample_times"] = cfg.sample_times;
    report.config["text_length"] = tokens.size();
    return report;
}

nlohmann::json report_to_json(const LatencyReport& r) {
    auto summary = [](const Summary& s) { return nlohmann::json{{"median", s.median}, {"p95", s.p95}, {"mean", s.mean}}; };
    return {{"fpl_ms", summary(r.fpl_ms)},
            {"rtf", r.rtf},
            {"steps_text", r.steps_text},
            {"steps_frame", r.steps_frame},
            {"frame_count", r.frame_count},
            {"step_time_us", summary(r.step_time_us)},
            {"config", r.config}};
}

SweepAxis parse_axis(const std::string& name) {
    if (name == "interleave_ratio" || name == "ratio") return SweepAxis::InterleaveRatio;
    if (name == "reduction_factor" || name == "reduction") return SweepAxis::ReductionFactor;
    if (name == "sample_times" || name == "k") return SweepAxis::SampleTimes;
    throw Error(ErrorCode::InvalidConfig, "unknown sweep axis: " + name);
}

const char* axis_name(SweepAxis axis) {
    switch (axis) {
        case SweepAxis::InterleaveRatio: return "interleave_ratio";
        case SweepAxis::ReductionFactor: return "reduction_factor";
        case SweepAxis::SampleTimes: return "sample_times";
    }
    return "?";
}

namespace {

std::uint32_t parse_positive(const std::string& text) {
    std::size_t used = 0;
    long long v = -1;
    try {
        v = std::stoll(text, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != text.size() || v < 1 || v > std::numeric_limits<std::uint32_t>::max()) {
        throw Error(ErrorCode::InvalidConfig, "expected a positive integer, got '" + text + "'");
    }
    return static_cast<std::uint32_t>(v);
}

}  // namespace

EvalMetrics evaluate_reconstruction(const Model& model, const RuntimeConfig& cfg, std::span<const Utterance> set,
                                    const TemplateBank& bank, bool forced_length) {
    EvalMetrics metrics;
    std::vector<double> mse;
    double accuracy = 0.0;
    for (std::size_t i = 0; i < set.size(); ++i) {
        const Utterance& utt = set[i];
        std::vector<std::uint32_t> tokens = utt.tokens;
        if (cfg.end_token && !tokens.empty() && tokens.back() == *cfg.end_token) tokens.pop_back();
        RuntimeConfig run = cfg;
        run.seed = derive_seed(cfg.seed, i);
        if (forced_length) {
            run.min_frames = run.max_frames = static_cast<std::uint32_t>(utt.mel.rows());
        }
        const SynthesisOutput out = synthesize(immediate_events(tokens), run, model);
        ++metrics.evaluated;
        if (out.frames.empty()) continue;
        const ReconstructionScore score = score_reconstruction(out.frames, utt, bank);
        mse.push_back(score.frame_mse);
        accuracy += score.template_accuracy;
    }
    if (!mse.empty()) {
        const Summary s = summarize(mse);
        metrics.frame_mse_median = s.median;
        metrics.frame_mse_mean = s.mean;
    } else {
        metrics.frame_mse_median = metrics.frame_mse_mean = std::numeric_limits<double>::quiet_NaN();
    }
    metrics.template_accuracy = metrics.evaluated ? accuracy / static_cast<double>(metrics.evaluated) : 0.0;
    return metrics;
}

std::vector<SweepRow> ablation_sweep(SweepAxis axis, std::span<const std::string> values, const SweepContext& ctx) {
    if (ctx.model == nullptr) throw Error(ErrorCode::InvalidConfig, "sweep needs a model");
    std::vector<SweepRow> rows;
    for (const std::string& value : values) {
        SweepRow row;
        row.value = value;
        try {
            RuntimeConfig cfg = ctx.runtime;
            std::optional<Model> owned;
            const Model* model = ctx.model;
            switch (axis) {
                case SweepAxis::InterleaveRatio: {
                    const auto colon = value.find(':');
                    if (colon == std::string::npos) {
                        throw Error(ErrorCode::InvalidConfig, "ratio must look like n:m, got '" + value + "'");
                    }
                    cfg.schedule.n = parse_positive(value.substr(0, colon));
                    cfg.schedule.m = parse_positive(value.substr(colon + 1));
                    break;
                }
                case SweepAxis::ReductionFactor: {
                    cfg.schedule.r = parse_positive(value);
                    cfg.schedule.validate();
                    if (cfg.schedule.r != model->config().reduction) {
                        if (!ctx.model_for_reduction) {
                            throw Error(ErrorCode::ConfigMismatch, "no model for reduction " + value);
                        }
                        owned.emplace(ctx.model_for_reduction(cfg.schedule.r));
                        model = &*owned;
                    }
                    break;
                }
                case SweepAxis::SampleTimes:
                    cfg.sample_times = static_cast<int>(parse_positive(value));
                    break;
            }
            cfg.validate();
            row.report = run_bench(*model, cfg, ctx.latency, ctx.bench_tokens);
            if (ctx.bank != nullptr && !ctx.eval_set.empty()) {
                const EvalMetrics m = evaluate_reconstruction(*model, cfg, ctx.eval_set, *ctx.bank, ctx.forced_length);
                row.frame_mse_median = m.frame_mse_median;
                row.frame_mse_mean = m.frame_mse_mean;
                row.template_accuracy = m.template_accuracy;
                row.evaluated = m.evaluated;
            }
            row.ok = true;
        } catch (const Error& e) {
            row.ok = false;
            row.error = e.what();
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_report_jsonl(std::ostream& out, const LatencyReport& report, const std::string& label) {
    nlohmann::json j = report_to_json(report);
    j["label"] = label;
    out << j.dump() << "\n";
}

void write_sweep_jsonl(std::ostream& out, SweepAxis axis, std::span<const SweepRow> rows) {
    for (const SweepRow& row : rows) {
        nlohmann::json j = {{"axis", axis_name(axis)}, {"value", row.value}, {"ok", row.ok}};
        if (row.ok) {
            j["report"] = report_to_json(row.report);
            j["frame_mse_median"] = row.frame_mse_median;
            j["frame_mse_mean"] = row.frame_mse_mean;
            j["template_accuracy"] = row.template_accuracy;
            j["evaluated"] = row.evaluated;
        } else {
            j["error"] = row.error;
        }
        out << j.dump() << "\n";
    }
}

void write_sweep_csv(std::ostream& out, SweepAxis axis, std::span<const SweepRow> rows) {
    out << axis_name(axis) << ",ok,fpl_ms_median,fpl_ms_p95,rtf,steps_text,steps_frame,frame_mse_median,"
                              "template_accuracy,error\n";
    for (const SweepRow& row : rows) {
        out << '"' << row.value << "\"," << (row.ok ? 1 : 0) << ',';
        if (row.ok) {
            out << row.report.fpl_ms.median << ',' << row.report.fpl_ms.p95 << ',' << row.report.rtf << ','
                << row.report.steps_text << ',' << row.report.steps_frame << ',' << row.frame_mse_median << ','
                << row.template_accuracy << ",\n";
        } else {
            std::string err = row.error;
            std::replace(err.begin(), err.end(), '"', '\'');
            out << ",,,,,,,\"" << err << "\"\n";
        }
    }
}

}  // namespace melweave
