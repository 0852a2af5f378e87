#include "melweave/commands.hpp"

#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "melweave/bench.hpp"
#include "melweave/checkpoint.hpp"
#include "melweave/melio.hpp"
#include "melweave/runtime.hpp"
#include "melweave/selfcheck.hpp"
#include "melweave/synthdata.hpp"
#include "melweave/train.hpp"

namespace melweave {

using json = nlohmann::json;

int exit_code_for(ErrorCode code) {
    switch (code) {
        case ErrorCode::InvalidConfig:
        case ErrorCode::InvalidReduction:
        case ErrorCode::ConfigMismatch:
        case ErrorCode::UnknownToken:
        case ErrorCode::InvalidSampleCount:
        case ErrorCode::TextOverrun:
        case ErrorCode::MaxLengthExceeded:
            return 2;
        default:
            return 3;
    }
}

EngineConfig resolve_config(const GlobalOptions& global) {
    EngineConfig cfg = global.config ? load_config(*global.config) : default_config();
    if (global.seed) {
        cfg.corpus.seed = *global.seed;
        cfg.training.seed = *global.seed;
        cfg.runtime.seed = *global.seed;
    }
    cfg.validate();
    return cfg;
}

std::filesystem::path resolve_path(const GlobalOptions& global, const std::string& path) {
    const std::filesystem::path p(path);
    return p.is_absolute() ? p : global.out_dir / p;
}

namespace {

std::vector<std::uint32_t> parse_tokens(const std::string& text) {
    std::vector<std::uint32_t> tokens;
    std::string item;
    std::stringstream ss(text);
    while (std::getline(ss, item, ',')) {
        const auto first = item.find_first_not_of(" \t\r\n");
        if (first == std::string::npos) continue;
        item = item.substr(first, item.find_last_not_of(" \t\r\n") - first + 1);
        std::size_t used = 0;
        unsigned long v = 0;
        try {
            v = std::stoul(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != item.size()) throw Error(ErrorCode::InvalidConfig, "bad token id '" + item + "'");
        tokens.push_back(static_cast<std::uint32_t>(v));
    }
    return tokens;
}

std::vector<std::uint32_t> read_token_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot read token file " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    std::string text = buf.str();
    for (char& c : text) {
        if (c == ' ' || c == '\n' || c == '\t' || c == '\r') c = ',';
    }
    return parse_tokens(text);
}

void check_vocab(std::span<const std::uint32_t> tokens, const ModelConfig& cfg) {
    for (std::uint32_t t : tokens) {
        if (t >= cfg.vocab_size) {
            throw Error(ErrorCode::UnknownToken,
                        "token " + std::to_string(t) + " outside vocabulary of " + std::to_string(cfg.vocab_size));
        }
    }
}

const Utterance& find_utterance(const Corpus& corpus, const std::string& id) {
    for (const auto* split : {&corpus.train, &corpus.validation}) {
        for (const Utterance& u : *split) {
            if (u.id == id) return u;
        }
    }
    throw Error(ErrorCode::InvalidConfig, "no utterance '" + id + "' in corpus");
}

// Token list and frames of an utterance without its end marker.
Prompt utterance_prefix(const Utterance& u, const CorpusSpec& spec, std::size_t token_count) {
    std::vector<std::uint32_t> tokens = u.tokens;
    if (spec.end_token && !tokens.empty() && tokens.back() == spec.end_token_id()) tokens.pop_back();
    token_count = std::min(token_count, tokens.size());
    Prompt p;
    p.tokens.assign(tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(token_count));
    p.frames = u.mel.topRows(static_cast<Eigen::Index>(token_count * spec.frames_per_token));
    return p;
}

Model load_or_init(const std::optional<std::filesystem::path>& checkpoint, const EngineConfig& cfg,
                   std::ostream& err) {
    if (checkpoint) return load_model(*checkpoint, cfg.model);
    err << "no checkpoint given; using a randomly initialized model (latency does not depend on weights)\n";
    return Model::initialized(cfg.model, cfg.training.seed);
}

template <typename F>
int guarded(std::ostream& err, F&& body) {
    try {
        return body();
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return exit_code_for(e.code());
    } catch (const json::exception& e) {
        err << "error: malformed data: " << e.what() << "\n";
        return 3;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return 3;
    }
}

}  // namespace

int cmd_gen_data(const GlobalOptions& global, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const EngineConfig cfg = resolve_config(global);
        const std::filesystem::path dir = resolve_path(global, cfg.paths.corpus_dir);
        const Corpus corpus = generate_corpus(cfg.corpus);
        write_corpus(dir, corpus);
        std::size_t frames = 0;
        for (const auto* split : {&corpus.train, &corpus.validation}) {
            for (const Utterance& u : *split) frames += static_cast<std::size_t>(u.mel.rows());
        }
        out << json{{"corpus_dir", dir.string()},
                    {"utterances", corpus.train.size() + corpus.validation.size()},
                    {"train", corpus.train.size()},
                    {"validation", corpus.validation.size()},
                    {"frames", frames},
                    {"speakers", corpus.spec.speaker_count},
                    {"config_hash", config_hash(cfg)}}
                   .dump()
            << "\n";
        return 0;
    });
}

int cmd_train(const GlobalOptions& global, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        EngineConfig cfg = resolve_config(global);
        if (global.quick) cfg.training.max_steps = std::min<std::uint32_t>(cfg.training.max_steps, 100);
        const std::filesystem::path corpus_dir = resolve_path(global, cfg.paths.corpus_dir);
        const Corpus corpus = read_corpus(corpus_dir);
        if (!(corpus.spec == cfg.corpus)) {
            throw Error(ErrorCode::ConfigMismatch, "corpus in " + corpus_dir.string() + " was generated from a different spec");
        }
        std::filesystem::create_directories(global.out_dir);
        Model model = Model::initialized(cfg.model, cfg.training.seed);
        std::ofstream log(global.out_dir / "train_log.jsonl", std::ios::trunc);
        TrainOptions opt;
        opt.training = cfg.training;
        opt.loss = cfg.loss;
        opt.schedule = cfg.schedule;
        opt.runtime = cfg.runtime_config();
        opt.log = &log;
        opt.checkpoint = resolve_path(global, cfg.paths.checkpoint);
        opt.snapshot_dir = global.out_dir;
        opt.config_hash = config_hash(cfg);
        const TrainResult res = train_model(model, corpus, opt);
        const json summary = {{"config_hash", opt.config_hash},
                              {"steps", cfg.training.max_steps},
                              {"initial_val_reg", res.initial_val_reg},
                              {"best_step", res.best.step},
                              {"best_val_reg", res.best.val.reg},
                              {"final_val_reg", res.last.val.reg},
                              {"stop_accuracy", res.last.val.stop_accuracy},
                              {"stop_balanced_accuracy", res.last.val.stop_balanced_accuracy},
                              {"template_accuracy", res.last.template_accuracy},
                              {"checkpoint", opt.checkpoint->string()},
                              {"wall_seconds", res.seconds}};
        std::ofstream(global.out_dir / "train_summary.json", std::ios::trunc) << summary.dump(2) << "\n";
        out << summary.dump() << "\n";
        return 0;
    });
}

int cmd_synth(const GlobalOptions& global, const SynthOptions& options, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const EngineConfig cfg = resolve_config(global);
        const std::filesystem::path ckpt = options.checkpoint ? *options.checkpoint : resolve_path(global, cfg.paths.checkpoint);
        const Model model = load_model(ckpt, cfg.model);
        std::vector<std::uint32_t> tokens =
            options.token_file ? read_token_file(*options.token_file) : parse_tokens(options.tokens);
        check_vocab(tokens, cfg.model);
        if (options.d_llm_ms < 0) throw Error(ErrorCode::InvalidConfig, "--d-llm must be >= 0");

        RuntimeConfig rc = cfg.runtime_config();
        if (options.sample_times) rc.sample_times = *options.sample_times;
        if (options.sigma) rc.sigma_override = *options.sigma;
        if (options.prompt_mode != "none") {
            const Corpus corpus = read_corpus(resolve_path(global, cfg.paths.corpus_dir));
            const Utterance& ref = find_utterance(corpus, options.prompt_id);
            if (options.prompt_mode == "continuation") {
                // Transcript head plus its frames; the rest of the transcript
                // is synthesized unless tokens were given explicitly.
                const Prompt prompt = utterance_prefix(ref, cfg.corpus, options.prompt_tokens);
                if (tokens.empty()) {
                    const Prompt whole = utterance_prefix(ref, cfg.corpus, ref.tokens.size());
                    tokens.assign(whole.tokens.begin() + static_cast<std::ptrdiff_t>(prompt.tokens.size()),
                                  whole.tokens.end());
                }
                rc.prompt = prompt;
            } else if (options.prompt_mode == "cross-sentence") {
                rc.prompt = utterance_prefix(ref, cfg.corpus, ref.tokens.size());
            } else {
                throw Error(ErrorCode::InvalidConfig, "--prompt-mode must be none, continuation or cross-sentence");
            }
        }
        const std::vector<StreamEvent> events =
            options.d_llm_ms > 0 ? simulate_llm_source(tokens, options.d_llm_ms) : immediate_events(tokens);
        ClockConfig clock = cfg.latency.clock;
        clock.arrival = ClockConfig::Arrival::Serialized;
        const SynthesisOutput res = synthesize(events, rc, model, clock);

        const std::filesystem::path mel_path = resolve_path(global, options.output.string());
        if (mel_path.has_parent_path()) std::filesystem::create_directories(mel_path.parent_path());
        MelFile mel;
        mel.n_mels = cfg.model.n_mels;
        mel.frame_shift_ms = static_cast<float>(cfg.corpus.frame_shift_ms);
        mel.frames = res.frames;
        write_mel(mel_path, mel);

        const std::string hash = config_hash(cfg);
        std::filesystem::path meta_path = mel_path;
        meta_path += ".jsonl";
        std::ofstream meta(meta_path, std::ios::trunc);
        const json header = {{"type", "synthesis"},
                             {"stop_reason", stop_reason_name(res.stop_reason)},
                             {"frames", res.frames.size()},
                             {"steps_text", res.steps_text},
                             {"steps_frame", res.steps_frame},
                             {"tokens", tokens},
                             {"prompt_mode", options.prompt_mode},
                             {"d_llm_ms", options.d_llm_ms},
                             {"seed", rc.seed},
                             {"config_hash", hash}};
        meta << header.dump() << "\n";
        for (std::size_t i = 0; i < res.timestamps_ms.size(); ++i) {
            meta << json{{"type", "frame"}, {"index", i}, {"timestamp_ms", res.timestamps_ms[i]}}.dump() << "\n";
        }
        if (!meta) throw Error(ErrorCode::Io, "cannot write " + meta_path.string());
        out << json{{"output", mel_path.string()},
                    {"frames", res.frames.size()},
                    {"stop_reason", stop_reason_name(res.stop_reason)},
                    {"first_packet_ms", res.timestamps_ms.empty() ? 0.0 : res.timestamps_ms.front()},
                    {"config_hash", hash}}
                   .dump()
            << "\n";
        return 0;
    });
}

int cmd_bench(const GlobalOptions& global, const BenchOptions& options, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const EngineConfig cfg = resolve_config(global);
        const Model model = load_or_init(options.checkpoint, cfg, err);
        const std::vector<std::uint32_t> tokens = parse_tokens(options.tokens);
        check_vocab(tokens, cfg.model);
        LatencySpec spec = cfg.latency;
        if (options.trials) spec.trials = *options.trials;
        if (global.quick) spec.trials = std::min(spec.trials, 3);
        if (options.clock == "wall") {
            spec.clock.mode = ClockConfig::Mode::Wall;
        } else if (options.clock == "virtual") {
            spec.clock.mode = ClockConfig::Mode::Virtual;
        } else if (!options.clock.empty()) {
            throw Error(ErrorCode::InvalidConfig, "--clock must be virtual or wall");
        }
        spec.clock.arrival = ClockConfig::Arrival::Serialized;
        const RuntimeConfig rc = cfg.runtime_config();
        const std::string hash = config_hash(cfg);
        std::filesystem::create_directories(global.out_dir);

        std::vector<Scenario> scenarios;
        if (options.scenario == "fpl-a" || options.scenario == "both") scenarios.push_back(Scenario::FplA);
        if (options.scenario == "fpl-l" || options.scenario == "both") scenarios.push_back(Scenario::FplL);
        if (scenarios.empty()) throw Error(ErrorCode::InvalidConfig, "--scenario must be fpl-a, fpl-l or both");

        std::ofstream jsonl(global.out_dir / "bench.jsonl", std::ios::trunc);
        for (Scenario s : scenarios) {
            spec.scenario = s;
            LatencyReport report = run_bench(model, rc, spec, tokens);
            report.config["config_hash"] = hash;
            const std::string label = s == Scenario::FplA ? "fpl-a" : "fpl-l";
            write_report_jsonl(jsonl, report, label);
            write_report_jsonl(out, report, label);
        }

        if (!options.sweep.empty()) {
            const SweepAxis axis = parse_axis(options.sweep);
            std::vector<std::string> values;
            std::stringstream ss(options.values);
            for (std::string v; std::getline(ss, v, ',');) {
                if (!v.empty()) values.push_back(v);
            }
            if (values.empty()) throw Error(ErrorCode::InvalidConfig, "--values is empty");
            SweepContext ctx;
            ctx.model = &model;
            ctx.runtime = rc;
            ctx.latency = spec;
            ctx.latency.scenario = Scenario::FplA;
            ctx.bench_tokens = tokens;
            ctx.forced_length = options.forced_length;
            ctx.model_for_reduction = [&](std::uint32_t r) {
                if (options.checkpoint && model.config().reduction == 1) return widen_reduction(model, r);
                ModelConfig mc = cfg.model;
                mc.reduction = r;
                return Model::initialized(mc, cfg.training.seed);
            };
            std::optional<Corpus> corpus;
            std::optional<TemplateBank> bank;
            const std::filesystem::path corpus_dir = resolve_path(global, cfg.paths.corpus_dir);
            if (std::filesystem::exists(corpus_dir / "corpus.json")) {
                corpus = read_corpus(corpus_dir);
                bank.emplace(*corpus);
                const std::size_t n = std::min<std::size_t>(global.quick ? 10 : cfg.training.eval_utterances,
                                                            corpus->validation.size());
                ctx.eval_set.assign(corpus->validation.begin(), corpus->validation.begin() + static_cast<std::ptrdiff_t>(n));
                ctx.bank = &*bank;
            } else {
                err << "no corpus at " << corpus_dir.string() << "; sweep rows carry latency only\n";
            }
            const std::vector<SweepRow> rows = ablation_sweep(axis, values, ctx);
            std::ofstream csv(global.out_dir / "sweep.csv", std::ios::trunc);
            write_sweep_csv(csv, axis, rows);
            std::ofstream sweep_jsonl(global.out_dir / "sweep.jsonl", std::ios::trunc);
            write_sweep_jsonl(sweep_jsonl, axis, rows);
            write_sweep_jsonl(out, axis, rows);
        }
        return 0;
    });
}

int cmd_check(const GlobalOptions& global, const CheckCommandOptions& options, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const EngineConfig cfg = resolve_config(global);
        CheckOptions co;
        co.quick = global.quick;
        co.model = cfg.model;
        co.seed = global.seed.value_or(1);
        std::vector<CheckItem> items = run_checks(co);
        if (options.checkpoint) {
            CheckItem item;
            item.name = "checkpoint_file";
            try {
                const Model m = load_model(*options.checkpoint, cfg.model);
                item.passed = true;
                item.detail = std::to_string(m.parameter_count()) + " parameters, checksum ok";
            } catch (const Error& e) {
                item.passed = false;
                item.detail = e.what();
            }
            items.push_back(item);
        }
        bool all = true;
        for (const CheckItem& item : items) {
            all &= item.passed;
            out << (item.passed ? "PASS " : "FAIL ") << std::left << std::setw(22) << item.name << " "
                << item.detail << " (" << std::fixed << std::setprecision(2) << item.seconds << " s)\n";
            out.unsetf(std::ios::floatfield);
        }
        out << (all ? "all checks passed" : "some checks FAILED") << "\n";
        return all ? 0 : 3;
    });
}

}  // namespace melweave
