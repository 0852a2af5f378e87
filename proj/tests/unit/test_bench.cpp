#include <doctest.h>

#include <algorithm>
#include <sstream>

#include "melweave/bench.hpp"
#include "support.hpp"

using namespace melweave;
using melweave::test::code_of;
using melweave::test::param;

namespace {

ModelConfig tiny(std::uint32_t r = 1) {
    ModelConfig cfg;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.d_ff = 32;
    cfg.n_mels = 8;
    cfg.d_latent = 4;
    cfg.vocab_size = 16;
    cfg.max_positions = 256;
    cfg.reduction = r;
    return cfg;
}

Model never_stopping(std::uint32_t r, std::uint64_t seed) {
    Model model = Model::initialized(tiny(r), seed);
    param(model, "stop.w").setZero();
    param(model, "stop.b").setConstant(-10.0);
    return model;
}

RuntimeConfig runtime(std::uint32_t n, std::uint32_t m, std::uint32_t r) {
    RuntimeConfig rc;
    rc.schedule = {n, m, r};
    rc.max_frames = 48;
    rc.seed = 3;
    return rc;
}

LatencySpec latency(Scenario scenario) {
    LatencySpec spec;
    spec.trials = 3;
    spec.scenario = scenario;
    spec.clock.arrival = ClockConfig::Arrival::Serialized;
    return spec;
}

const std::vector<std::uint32_t> kTokens = {1, 2, 3, 4, 5, 6, 7, 8};

}  // namespace

TEST_SUITE("bench") {

TEST_CASE("summary statistics") {
    std::vector<double> v;
    for (int i = 20; i >= 1; --i) v.push_back(i);
    const Summary s = summarize(v);
    CHECK(s.median == 10.5);
    CHECK(s.p95 == 19.0);
    CHECK(s.mean == 10.5);
    CHECK(summarize({7.0}).p95 == 7.0);
    CHECK(code_of([] { summarize({}); }) == ErrorCode::NoOutput);
}

TEST_CASE("simulated upstream arrivals") {
    const auto events = simulate_llm_source(kTokens, 25.0);
    REQUIRE(events.size() == 9);
    for (std::size_t k = 0; k < 8; ++k) {
        CHECK(events[k].kind == StreamEvent::Kind::TextArrived);
        CHECK(events[k].token == kTokens[k]);
        CHECK(events[k].arrival_ms == 25.0 * static_cast<double>(k + 1));
    }
    CHECK(events.back().kind == StreamEvent::Kind::EndOfText);
    CHECK(events.back().arrival_ms == 200.0);
    validate_events(events);
}

TEST_CASE("first packet latency scales with n") {
    const Model model = never_stopping(1, 1);
    const LatencyReport one = run_bench(model, runtime(1, 4, 1), latency(Scenario::FplA), kTokens);
    const LatencyReport three = run_bench(model, runtime(3, 4, 1), latency(Scenario::FplA), kTokens);
    CHECK(one.fpl_ms.median == 5.0);
    CHECK(three.fpl_ms.median / one.fpl_ms.median == 3.0);
    for (std::uint32_t n : {1u, 2u, 3u, 4u}) {
        const LatencyReport a = run_bench(model, runtime(n, 4, 1), latency(Scenario::FplA), kTokens);
        const LatencyReport l = run_bench(model, runtime(n, 4, 1), latency(Scenario::FplL), kTokens);
        CHECK(l.fpl_ms.median - a.fpl_ms.median == 25.0 * n);
    }
    const LatencyReport l1 = run_bench(model, runtime(1, 4, 1), latency(Scenario::FplL), kTokens);
    CHECK(l1.fpl_ms.median == 30.0);
}

TEST_CASE("real time factor matches the trace") {
    const Model model = never_stopping(1, 2);
    const SynthesisOutput out = synthesize(immediate_events(kTokens), runtime(2, 4, 1), model);
    double compute = 0.0;
    std::size_t decodes = 0;
    for (const TraceEntry& e : out.trace) {
        compute += e.compute_ms;
        if (e.kind == TraceEntry::Kind::Text) ++decodes;
        if (e.kind == TraceEntry::Kind::Emit && e.compute_ms > 0) ++decodes;
    }
    CHECK(real_time_factor(out, 12.5) == compute / (static_cast<double>(out.frames.size()) * 12.5));
    CHECK(compute == 5.0 * static_cast<double>(decodes));
    CHECK(first_packet_ms(out) == 10.0);

    SynthesisOutput empty;
    CHECK(code_of([&] { first_packet_ms(empty); }) == ErrorCode::NoOutput);
    CHECK(code_of([&] { real_time_factor(empty, 12.5); }) == ErrorCode::NoOutput);
}

TEST_CASE("scoring is a pure function of the traces") {
    const Model model = Model::initialized(tiny(), 3);
    std::vector<SynthesisOutput> traces;
    for (std::uint64_t s = 0; s < 4; ++s) {
        RuntimeConfig rc = runtime(1, 4, 1);
        rc.seed = s;
        traces.push_back(synthesize(simulate_llm_source(kTokens, 25.0), rc, model));
    }
    const LatencySpec spec = latency(Scenario::FplL);
    CHECK(report_to_json(score_traces(traces, spec)).dump() == report_to_json(score_traces(traces, spec)).dump());
    CHECK(code_of([&] { score_traces(std::span<const SynthesisOutput>{}, spec); }) == ErrorCode::NoOutput);
}

TEST_CASE("interleave ratio sweep") {
    const Model model = never_stopping(1, 4);
    SweepContext ctx;
    ctx.model = &model;
    ctx.runtime = runtime(1, 4, 1);
    ctx.latency = latency(Scenario::FplA);
    ctx.bench_tokens = kTokens;
    const std::vector<std::string> values = {"1:4", "2:4", "3:4", "4:4"};
    const auto rows = ablation_sweep(SweepAxis::InterleaveRatio, values, ctx);
    REQUIRE(rows.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(rows[i].ok);
        CHECK(rows[i].report.fpl_ms.median == 5.0 * static_cast<double>(i + 1));
        CHECK(rows[i].report.config["n"] == i + 1);
    }
    std::ostringstream csv, jsonl;
    write_sweep_csv(csv, SweepAxis::InterleaveRatio, rows);
    write_sweep_jsonl(jsonl, SweepAxis::InterleaveRatio, rows);
    const std::string csv_text = csv.str(), jsonl_text = jsonl.str();
    CHECK(std::count(csv_text.begin(), csv_text.end(), '\n') == 5);
    CHECK(std::count(jsonl_text.begin(), jsonl_text.end(), '\n') == 4);
}

TEST_CASE("reduction sweep keeps going past a bad value") {
    const Model model = never_stopping(1, 5);
    SweepContext ctx;
    ctx.model = &model;
    ctx.runtime = runtime(1, 4, 1);
    ctx.latency = latency(Scenario::FplA);
    ctx.bench_tokens = kTokens;
    ctx.model_for_reduction = [](std::uint32_t r) { return never_stopping(r, 100 + r); };
    const std::vector<std::string> values = {"1", "3", "2", "4", "x"};
    const auto rows = ablation_sweep(SweepAxis::ReductionFactor, values, ctx);
    REQUIRE(rows.size() == 5);
    CHECK(rows[0].ok);
    CHECK_FALSE(rows[1].ok);
    CHECK(rows[1].error.find("InvalidReduction") == 0);
    CHECK(rows[2].ok);
    CHECK(rows[3].ok);
    CHECK_FALSE(rows[4].ok);
    CHECK(rows[0].report.rtf > rows[2].report.rtf);
    CHECK(rows[2].report.rtf > rows[3].report.rtf);
    CHECK(rows[0].report.steps_frame == 48);
    CHECK(rows[2].report.steps_frame == 24);
    CHECK(rows[3].report.steps_frame == 12);
    std::ostringstream csv;
    write_sweep_csv(csv, SweepAxis::ReductionFactor, rows);
    CHECK(csv.str().find("InvalidReduction") != std::string::npos);

    SweepContext bare = ctx;
    bare.model_for_reduction = nullptr;
    const std::vector<std::string> two = {"2"};
    CHECK(ablation_sweep(SweepAxis::ReductionFactor, two, bare).front().error.find("ConfigMismatch") == 0);
}

TEST_CASE("sample count sweep and axis names") {
    const Model model = never_stopping(1, 6);
    SweepContext ctx;
    ctx.model = &model;
    ctx.runtime = runtime(1, 4, 1);
    ctx.latency = latency(Scenario::FplA);
    ctx.bench_tokens = kTokens;
    const std::vector<std::string> values = {"1", "0", "8"};
    const auto rows = ablation_sweep(SweepAxis::SampleTimes, values, ctx);
    CHECK(rows[0].ok);
    CHECK_FALSE(rows[1].ok);
    CHECK(rows[2].ok);
    CHECK(parse_axis("interleave_ratio") == SweepAxis::InterleaveRatio);
    CHECK(parse_axis("reduction_factor") == SweepAxis::ReductionFactor);
    CHECK(parse_axis("sample_times") == SweepAxis::SampleTimes);
    CHECK(code_of([] { parse_axis("nope"); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("reconstruction evaluation with forced length") {
    CorpusSpec spec;
    spec.n_utterances = 40;
    const Corpus corpus = generate_corpus(spec);
    const TemplateBank bank(corpus);
    const Model model = Model::initialized(tiny(), 7);
    RuntimeConfig rc = runtime(1, 4, 1);
    rc.end_token = spec.end_token_id();
    rc.max_frames = 2048;
    const EvalMetrics m = evaluate_reconstruction(model, rc, corpus.validation, bank, true);
    CHECK(m.evaluated == corpus.validation.size());
    CHECK(m.frame_mse_mean > 0.0);
    CHECK(m.template_accuracy >= 0.0);
    CHECK(m.template_accuracy <= 1.0);
    const EvalMetrics again = evaluate_reconstruction(model, rc, corpus.validation, bank, true);
    CHECK(again.frame_mse_mean == m.frame_mse_mean);
}

}
