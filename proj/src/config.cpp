#include "melweave/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "melweave/error.hpp"
#include "melweave/melio.hpp"

namespace melweave {

using nlohmann::json;

void EngineConfig::validate() const {
    model.validate();
    schedule.validate();
    corpus.validate();
    latency.validate();
    if (model.reduction != schedule.r) {
        throw Error(ErrorCode::ConfigMismatch, "model.reduction must equal schedule.r");
    }
    if (model.vocab_size != corpus.vocab_size) {
        throw Error(ErrorCode::ConfigMismatch, "model.vocab_size must equal corpus.vocab_size");
    }
    if (model.n_mels != corpus.n_mels) {
        throw Error(ErrorCode::ConfigMismatch, "model.n_mels must equal corpus.n_mels");
    }
    const std::uint64_t tokens = corpus.max_tokens + (corpus.end_token ? 1 : 0);
    const std::uint64_t frames = tokens * corpus.frames_per_token;
    const std::uint64_t positions = tokens + (frames + schedule.r - 1) / schedule.r;
    if (positions > model.max_positions) {
        throw Error(ErrorCode::InvalidConfig, "longest utterance needs " + std::to_string(positions) +
                                                  " positions, model.max_positions is " +
                                                  std::to_string(model.max_positions));
    }
    if (training.batch_size == 0 || training.max_steps == 0 || training.eval_interval == 0 ||
        training.workers == 0) {
        throw Error(ErrorCode::InvalidConfig, "training batch_size, max_steps, eval_interval, workers must be >= 1");
    }
    if (!(training.learning_rate > 0) || !(training.grad_clip > 0) || !(training.adam_eps > 0) ||
        !(training.adam_beta1 >= 0 && training.adam_beta1 < 1) || !(training.adam_beta2 >= 0 && training.adam_beta2 < 1)) {
        throw Error(ErrorCode::InvalidConfig, "invalid optimizer settings");
    }
    const LossWeights& w = loss.weights;
    if (!(w.alpha >= 0) || !(w.lambda >= 0) || !(w.beta >= 0) || !(w.gamma >= 0) || !(loss.stop_pos_weight > 0)) {
        throw Error(ErrorCode::InvalidConfig, "loss weights must be >= 0 and stop_pos_weight > 0");
    }
    if (std::abs(latency.frame_shift_ms - corpus.frame_shift_ms) > 1e-12) {
        throw Error(ErrorCode::ConfigMismatch, "latency.frame_shift_ms must equal corpus.frame_shift_ms");
    }
    runtime_config().validate();
}

RuntimeConfig EngineConfig::runtime_config() const {
    RuntimeConfig rc;
    rc.schedule = schedule;
    rc.stop_threshold = runtime.stop_threshold;
    rc.min_frames = runtime.min_frames.value_or(schedule.m);
    rc.max_frames = runtime.max_frames;
    rc.sample_times = runtime.sample_times;
    rc.sigma_override = runtime.sigma_override;
    rc.use_mean = runtime.use_mean;
    if (corpus.end_token) rc.end_token = corpus.end_token_id();
    rc.seed = runtime.seed;
    return rc;
}

EngineConfig default_config() { return EngineConfig{}; }

json config_to_json(const EngineConfig& c) {
    json j;
    j["model"] = {{"d_model", c.model.d_model},     {"n_layers", c.model.n_layers},
                  {"n_heads", c.model.n_heads},     {"d_ff", c.model.d_ff},
                  {"n_mels", c.model.n_mels},       {"d_latent", c.model.d_latent},
                  {"vocab_size", c.model.vocab_size}, {"max_positions", c.model.max_positions},
                  {"reduction", c.model.reduction}};
    j["schedule"] = {{"n", c.schedule.n}, {"m", c.schedule.m}, {"r", c.schedule.r}};
    j["loss"] = {{"alpha", c.loss.weights.alpha},
                 {"lambda", c.loss.weights.lambda},
                 {"beta", c.loss.weights.beta},
                 {"gamma", c.loss.weights.gamma},
                 {"flux", c.loss.flux == FluxVariant::DeltaMatch ? "delta_match" : "negative_self_delta"},
                 {"stop_pos_weight", c.loss.stop_pos_weight}};
    j["runtime"] = {{"stop_threshold", c.runtime.stop_threshold},
                    {"min_frames", c.runtime.min_frames ? json(*c.runtime.min_frames) : json(nullptr)},
                    {"max_frames", c.runtime.max_frames},
                    {"sample_times", c.runtime.sample_times},
                    {"sigma_override", c.runtime.sigma_override ? json(*c.runtime.sigma_override) : json(nullptr)},
                    {"use_mean", c.runtime.use_mean},
                    {"seed", c.runtime.seed}};
    const TrainingConfig& t = c.training;
    j["training"] = {{"learning_rate", t.learning_rate}, {"warmup_steps", t.warmup_steps},
                     {"grad_clip", t.grad_clip},         {"adam_beta1", t.adam_beta1},
                     {"adam_beta2", t.adam_beta2},       {"adam_eps", t.adam_eps},
                     {"batch_size", t.batch_size},       {"max_steps", t.max_steps},
                     {"eval_interval", t.eval_interval}, {"eval_utterances", t.eval_utterances},
                     {"workers", t.workers},             {"seed", t.seed}};
    const CorpusSpec& s = c.corpus;
    j["corpus"] = {{"vocab_size", s.vocab_size},   {"n_mels", s.n_mels},
                   {"frames_per_token", s.frames_per_token}, {"n_utterances", s.n_utterances},
                   {"min_tokens", s.min_tokens},   {"max_tokens", s.max_tokens},
                   {"speaker_count", s.speaker_count}, {"noise_std", s.noise_std},
                   {"seed", s.seed},               {"end_token", s.end_token},
                   {"min_gain", s.min_gain},       {"max_gain", s.max_gain},
                   {"frame_shift_ms", s.frame_shift_ms}};
    j["latency"] = {{"d_llm_ms", c.latency.d_llm_ms},
                    {"frame_shift_ms", c.latency.frame_shift_ms},
                    {"trials", c.latency.trials},
                    {"warmup", c.latency.warmup},
                    {"clock", c.latency.clock.mode == ClockConfig::Mode::Virtual ? "virtual" : "wall"},
                    {"step_cost_ms", c.latency.clock.step_cost_ms},
                    {"emit_cost_ms", c.latency.clock.emit_cost_ms}};
    j["paths"] = {{"corpus_dir", c.paths.corpus_dir}, {"checkpoint", c.paths.checkpoint}, {"out_dir", c.paths.out_dir}};
    return j;
}

namespace {

// Reads known keys from a section; unknown keys are an error.
class Section {
public:
    Section(const json& root, const char* name) : name_(name) {
        if (!root.contains(name)) return;
        node_ = &root.at(name);
        if (!node_->is_object()) throw Error(ErrorCode::InvalidConfig, std::string(name) + " must be an object");
    }

    template <typename T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        if (node_ == nullptr || !node_->contains(key)) return;
        try {
            out = node_->at(key).get<T>();
        } catch (const json::exception& e) {
            throw Error(ErrorCode::InvalidConfig, name_ + "." + key + ": " + e.what());
        }
    }

    template <typename T>
    void get_optional(const char* key, std::optional<T>& out) {
        seen_.insert(key);
        if (node_ == nullptr || !node_->contains(key)) return;
        if (node_->at(key).is_null()) {
            out.reset();
            return;
        }
        T v{};
        get(key, v);
        out = v;
    }

    void finish() const {
        if (node_ == nullptr) return;
        for (const auto& [key, _] : node_->items()) {
            if (!seen_.count(key)) throw Error(ErrorCode::InvalidConfig, "unknown key " + name_ + "." + key);
        }
    }

private:
    std::string name_;
    const json* node_ = nullptr;
    std::set<std::string> seen_;
};

}  // namespace

EngineConfig config_from_json(const json& j) {
    if (!j.is_object()) throw Error(ErrorCode::InvalidConfig, "config must be a JSON object");
    static const std::set<std::string> kSections = {"model",  "schedule", "loss",    "runtime",
                                                    "training", "corpus", "latency", "paths"};
    for (const auto& [key, _] : j.items()) {
        if (!kSections.count(key)) throw Error(ErrorCode::InvalidConfig, "unknown config section " + key);
    }
    EngineConfig c = default_config();

    Section model(j, "model");
    model.get("d_model", c.model.d_model);
    model.get("n_layers", c.model.n_layers);
    model.get("n_heads", c.model.n_heads);
    model.get("d_ff", c.model.d_ff);
    model.get("n_mels", c.model.n_mels);
    model.get("d_latent", c.model.d_latent);
    model.get("vocab_size", c.model.vocab_size);
    model.get("max_positions", c.model.max_positions);
    model.get("reduction", c.model.reduction);
    model.finish();

    Section schedule(j, "schedule");
    schedule.get("n", c.schedule.n);
    schedule.get("m", c.schedule.m);
    schedule.get("r", c.schedule.r);
    schedule.finish();

    Section loss(j, "loss");
    loss.get("alpha", c.loss.weights.alpha);
    loss.get("lambda", c.loss.weights.lambda);
    loss.get("beta", c.loss.weights.beta);
    loss.get("gamma", c.loss.weights.gamma);
    std::string flux = "delta_match";
    loss.get("flux", flux);
    if (flux == "delta_match") {
        c.loss.flux = FluxVariant::DeltaMatch;
    } else if (flux == "negative_self_delta") {
        c.loss.flux = FluxVariant::NegativeSelfDelta;
    } else {
        throw Error(ErrorCode::InvalidConfig, "loss.flux must be delta_match or negative_self_delta");
    }
    loss.get("stop_pos_weight", c.loss.stop_pos_weight);
    loss.finish();

    Section runtime(j, "runtime");
    runtime.get("stop_threshold", c.runtime.stop_threshold);
    runtime.get_optional("min_frames", c.runtime.min_frames);
    runtime.get("max_frames", c.runtime.max_frames);
    runtime.get("sample_times", c.runtime.sample_times);
    runtime.get_optional("sigma_override", c.runtime.sigma_override);
    runtime.get("use_mean", c.runtime.use_mean);
    runtime.get("seed", c.runtime.seed);
    runtime.finish();

    Section training(j, "training");
    TrainingConfig& t = c.training;
    training.get("learning_rate", t.learning_rate);
    training.get("warmup_steps", t.warmup_steps);
    training.get("grad_clip", t.grad_clip);
    training.get("adam_beta1", t.adam_beta1);
    training.get("adam_beta2", t.adam_beta2);
    training.get("adam_eps", t.adam_eps);
    training.get("batch_size", t.batch_size);
    training.get("max_steps", t.max_steps);
    training.get("eval_interval", t.eval_interval);
    training.get("eval_utterances", t.eval_utterances);
    training.get("workers", t.workers);
    training.get("seed", t.seed);
    training.finish();

    Section corpus(j, "corpus");
    CorpusSpec& s = c.corpus;
    corpus.get("vocab_size", s.vocab_size);
    corpus.get("n_mels", s.n_mels);
    corpus.get("frames_per_token", s.frames_per_token);
    corpus.get("n_utterances", s.n_utterances);
    corpus.get("min_tokens", s.min_tokens);
    corpus.get("max_tokens", s.max_tokens);
    corpus.get("speaker_count", s.speaker_count);
    corpus.get("noise_std", s.noise_std);
    corpus.get("seed", s.seed);
    corpus.get("end_token", s.end_token);
    corpus.get("min_gain", s.min_gain);
    corpus.get("max_gain", s.max_gain);
    corpus.get("frame_shift_ms", s.frame_shift_ms);
    corpus.finish();

    Section latency(j, "latency");
    latency.get("d_llm_ms", c.latency.d_llm_ms);
    latency.get("frame_shift_ms", c.latency.frame_shift_ms);
    latency.get("trials", c.latency.trials);
    latency.get("warmup", c.latency.warmup);
    std::string clock = "virtual";
    latency.get("clock", clock);
    if (clock == "virtual") {
        c.latency.clock.mode = ClockConfig::Mode::Virtual;
    } else if (clock == "wall") {
        c.latency.clock.mode = ClockConfig::Mode::Wall;
    } else {
        throw Error(ErrorCode::InvalidConfig, "latency.clock must be virtual or wall");
    }
    latency.get("step_cost_ms", c.latency.clock.step_cost_ms);
    latency.get("emit_cost_ms", c.latency.clock.emit_cost_ms);
    latency.finish();

    Section paths(j, "paths");
    paths.get("corpus_dir", c.paths.corpus_dir);
    paths.get("checkpoint", c.paths.checkpoint);
    paths.get("out_dir", c.paths.out_dir);
    paths.finish();
    return c;
}

EngineConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot read config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::InvalidConfig, path.string() + ": " + e.what());
    }
    return config_from_json(j);
}

void save_config(const std::filesystem::path& path, const EngineConfig& cfg) {
    std::ofstream out(path, std::ios::trunc);
    out << config_to_json(cfg).dump(2) << "\n";
    if (!out) throw Error(ErrorCode::Io, "cannot write config " + path.string());
}

std::string config_hash(const EngineConfig& cfg) {
    const std::string canonical = config_to_json(cfg).dump();
    const auto* bytes = reinterpret_cast<const std::uint8_t*>(canonical.data());
    char buf[9];
    std::snprintf(buf, sizeof(buf), "%08x", binary::crc32({bytes, canonical.size()}));
    return buf;
}

}  // namespace melweave
