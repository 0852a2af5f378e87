#include <doctest.h>

#include <fstream>

#include "melweave/config.hpp"
#include "support.hpp"

using namespace melweave;
using melweave::test::code_of;
using melweave::test::temp_dir;

TEST_SUITE("config") {

TEST_CASE("defaults") {
    const EngineConfig c = default_config();
    CHECK(c.model.d_model == 64);
    CHECK(c.model.n_layers == 2);
    CHECK(c.schedule == ScheduleConfig{1, 4, 1});
    CHECK(c.loss.weights == LossWeights{2.0, 0.05, 1.0, 0.5});
    CHECK(c.loss.flux == FluxVariant::DeltaMatch);
    CHECK(c.latency.d_llm_ms == 25.0);
    CHECK(c.latency.frame_shift_ms == 12.5);
    c.validate();
    const RuntimeConfig rc = c.runtime_config();
    CHECK(rc.min_frames == 4);
    CHECK(rc.end_token == 15u);
    CHECK(rc.schedule == c.schedule);
}

TEST_CASE("json round trip") {
    EngineConfig c = default_config();
    c.schedule = {2, 6, 3};
    c.model.reduction = 3;
    c.loss.flux = FluxVariant::NegativeSelfDelta;
    c.runtime.sigma_override = 0.25;
    c.runtime.min_frames = 9;
    c.latency.clock.mode = ClockConfig::Mode::Wall;
    c.training.workers = 3;
    c.paths.checkpoint = "m.smel";
    const EngineConfig back = config_from_json(config_to_json(c));
    CHECK(config_to_json(back) == config_to_json(c));
    CHECK(config_hash(back) == config_hash(c));
    CHECK(back.runtime.sigma_override == 0.25);
    CHECK(back.runtime.min_frames == 9u);

    const auto dir = temp_dir("config");
    save_config(dir / "c.json", c);
    CHECK(config_hash(load_config(dir / "c.json")) == config_hash(c));
}

TEST_CASE("missing keys take defaults") {
    const EngineConfig c = config_from_json(nlohmann::json::parse(R"({"schedule": {"n": 3}})"));
    CHECK(c.schedule == ScheduleConfig{3, 4, 1});
    CHECK(c.model == default_config().model);
    CHECK(config_from_json(nlohmann::json::object()).model == default_config().model);
}

TEST_CASE("unknown keys and bad values are rejected") {
    auto parse = [](const char* text) { return config_from_json(nlohmann::json::parse(text)); };
    CHECK(code_of([&] { parse(R"({"model": {"d_modle": 32}})"); }) == ErrorCode::InvalidConfig);
    CHECK(code_of([&] { parse(R"({"modle": {}})"); }) == ErrorCode::InvalidConfig);
    CHECK(code_of([&] { parse(R"({"model": {"d_model": "big"}})"); }) == ErrorCode::InvalidConfig);
    CHECK(code_of([&] { parse(R"({"loss": {"flux": "other"}})"); }) == ErrorCode::InvalidConfig);
    CHECK(code_of([&] { parse(R"({"latency": {"clock": "sundial"}})"); }) == ErrorCode::InvalidConfig);
    CHECK(code_of([&] { parse(R"([1, 2])"); }) == ErrorCode::InvalidConfig);

    const auto dir = temp_dir("config_bad");
    std::ofstream(dir / "bad.json") << "{ not json";
    CHECK(code_of([&] { load_config(dir / "bad.json"); }) == ErrorCode::InvalidConfig);
    CHECK(code_of([&] { load_config(dir / "missing.json"); }) == ErrorCode::Io);
}

TEST_CASE("cross-field validation") {
    EngineConfig c = default_config();
    c.schedule = {1, 4, 3};
    c.model.reduction = 3;
    CHECK(code_of([&] { c.validate(); }) == ErrorCode::InvalidReduction);

    c = default_config();
    c.schedule.r = 2;
    CHECK(code_of([&] { c.validate(); }) == ErrorCode::ConfigMismatch);

    c = default_config();
    c.model.vocab_size = 20;
    CHECK(code_of([&] { c.validate(); }) == ErrorCode::ConfigMismatch);

    c = default_config();
    c.corpus.n_mels = 16;
    CHECK(code_of([&] { c.validate(); }) == ErrorCode::ConfigMismatch);

    c = default_config();
    c.model.max_positions = 32;
    CHECK(code_of([&] { c.validate(); }) == ErrorCode::InvalidConfig);

    c = default_config();
    c.training.batch_size = 0;
    CHECK(code_of([&] { c.validate(); }) == ErrorCode::InvalidConfig);

    c = default_config();
    c.loss.weights.gamma = -1;
    CHECK(code_of([&] { c.validate(); }) == ErrorCode::InvalidConfig);

    c = default_config();
    c.runtime.sample_times = 0;
    CHECK(code_of([&] { c.validate(); }) == ErrorCode::InvalidSampleCount);

    c = default_config();
    c.latency.frame_shift_ms = 10;
    CHECK(code_of([&] { c.validate(); }) == ErrorCode::ConfigMismatch);
}

TEST_CASE("hash") {
    const EngineConfig a = default_config();
    const std::string h = config_hash(a);
    CHECK(h.size() == 8);
    CHECK(h.find_first_not_of("0123456789abcdef") == std::string::npos);
    CHECK(config_hash(default_config()) == h);
    EngineConfig b = a;
    b.training.seed = 8;
    CHECK(config_hash(b) != h);
}

}
