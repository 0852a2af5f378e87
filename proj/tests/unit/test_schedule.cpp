#include <doctest.h>

#include <algorithm>
#include <vector>

#include "melweave/error.hpp"
#include "melweave/rng.hpp"
#include "melweave/schedule.hpp"

using namespace melweave;

namespace {

std::vector<std::uint32_t> iota_tokens(std::uint32_t n, std::uint32_t base = 100) {
    std::vector<std::uint32_t> t(n);
    for (std::uint32_t i = 0; i < n; ++i) t[i] = base + i;
    return t;
}

// Independent layout: text token i sits in group i / n; frame t sits in
// group t / m unless text ran out before that group.
std::vector<SequenceElement> reference_layout(std::uint32_t l, std::uint32_t t_len, std::uint32_t n, std::uint32_t m) {
    const std::uint32_t text_groups = (l + n - 1) / n;
    std::vector<std::pair<std::uint64_t, SequenceElement>> keyed;
    for (std::uint32_t i = 0; i < l; ++i) keyed.push_back({(std::uint64_t(i / n) * 2) << 32 | i, SequenceElement::text(100 + i)});
    for (std::uint32_t t = 0; t < t_len; ++t) {
        const std::uint64_t g = std::min<std::uint64_t>(t / m, text_groups == 0 ? 0 : text_groups - 1);
        const std::uint64_t group = (t / m < text_groups) ? g * 2 + 1 : std::uint64_t(text_groups) * 2 + 1;
        keyed.push_back({group << 32 | t, SequenceElement::mel(t)});
    }
    std::stable_sort(keyed.begin(), keyed.end(), [](auto& a, auto& b) { return a.first < b.first; });
    std::vector<SequenceElement> out;
    for (auto& k : keyed) out.push_back(k.second);
    return out;
}

}  // namespace

TEST_SUITE("schedule") {

TEST_CASE("config validation") {
    CHECK_NOTHROW(ScheduleConfig{1, 4, 2}.validate());
    try {
        ScheduleConfig{1, 4, 3}.validate();
        FAIL("expected InvalidReduction");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::InvalidReduction);
    }
    CHECK_THROWS_AS((ScheduleConfig{0, 4, 1}.validate()), Error);
}

TEST_CASE("build_interleaved examples") {
    const auto two = iota_tokens(2);
    const auto seq = build_interleaved(two, 10, {1, 4, 1});
    std::vector<SequenceElement> expect = {SequenceElement::text(100)};
    for (std::uint32_t t = 0; t < 4; ++t) expect.push_back(SequenceElement::mel(t));
    expect.push_back(SequenceElement::text(101));
    for (std::uint32_t t = 4; t < 10; ++t) expect.push_back(SequenceElement::mel(t));
    CHECK(seq.elements == expect);
    CHECK(seq.text_length == 2);
    CHECK(seq.mel_length == 10);

    const auto pure = build_interleaved(std::vector<std::uint32_t>{}, 3, {1, 2, 1});
    CHECK(pure.elements == std::vector<SequenceElement>{SequenceElement::mel(0), SequenceElement::mel(1), SequenceElement::mel(2)});

    try {
        build_interleaved(iota_tokens(3), 2, {2, 3, 1});
        FAIL("expected TextOverrun");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::TextOverrun);
    }
}

TEST_CASE("short final text group") {
    const auto seq = build_interleaved(iota_tokens(3), 6, {2, 2, 1});
    std::vector<SequenceElement> expect = {SequenceElement::text(100), SequenceElement::text(101), SequenceElement::mel(0),
                                           SequenceElement::mel(1),    SequenceElement::text(102), SequenceElement::mel(2),
                                           SequenceElement::mel(3),    SequenceElement::mel(4),    SequenceElement::mel(5)};
    CHECK(seq.elements == expect);
}

TEST_CASE("position_of_frame examples") {
    CHECK(position_of_frame(0, 2, {1, 2, 1}) == 1);
    CHECK(position_of_frame(4, 2, {1, 2, 1}) == 6);
    CHECK(position_of_frame(5, 0, {1, 4, 1}) == 5);
}

TEST_CASE("printed closed form places y0 before x0") {
    // For n=1 the printed variant returns 0 for t=0, where the layout has x0.
    CHECK(position_of_frame_printed(0, 2, {1, 4, 1}) == 0);
    CHECK(position_of_frame(0, 2, {1, 4, 1}) == 1);
}

TEST_CASE("layout matches an independent reference, permutation and monotonicity") {
    for (std::uint32_t n = 1; n <= 4; ++n) {
        for (std::uint32_t m = 1; m <= 5; ++m) {
            for (std::uint32_t l = 0; l <= 9; ++l) {
                for (std::uint32_t t = 1; t <= 30; ++t) {
                    InterleavedSeq seq;
                    const auto tokens = iota_tokens(l);
                    try {
                        seq = build_interleaved(tokens, t, {n, m, 1});
                    } catch (const Error&) {
                        // Overrun iff the last text group starts after all frames.
                        CHECK(l > 0);
                        CHECK(std::uint64_t((l + n - 1) / n - 1) * m >= t);
                        continue;
                    }
                    REQUIRE(seq.elements.size() == l + t);
                    CHECK(seq.elements == reference_layout(l, t, n, m));
                    std::uint32_t next_text = 0, next_mel = 0;
                    std::uint64_t last_pos = 0;
                    for (std::size_t i = 0; i < seq.elements.size(); ++i) {
                        const auto& el = seq.elements[i];
                        if (el.is_text()) {
                            CHECK(el.value == 100 + next_text++);
                        } else {
                            CHECK(el.value == next_mel);
                            const auto pos = position_of_frame(next_mel, l, {n, m, 1});
                            CHECK(pos == i);
                            if (next_mel > 0) CHECK(pos > last_pos);
                            last_pos = pos;
                            ++next_mel;
                        }
                    }
                    CHECK(next_text == l);
                    CHECK(next_mel == t);
                }
            }
        }
    }
}

TEST_CASE("training targets examples") {
    InterleavedSeq a;
    a.elements = {SequenceElement::text(0), SequenceElement::mel(0), SequenceElement::mel(1)};
    const auto ta = build_training_targets(a);
    CHECK(ta.targets[0].predicts());
    CHECK(ta.targets[0].frame == 0);
    CHECK(ta.targets[1].predicts());
    CHECK(ta.targets[1].frame == 1);
    CHECK_FALSE(ta.targets[2].predicts());
    CHECK(ta.stop_labels == std::vector<std::uint8_t>{0, 0, 1});

    InterleavedSeq b;
    b.elements = {SequenceElement::text(0), SequenceElement::mel(0), SequenceElement::text(1), SequenceElement::mel(1)};
    const auto tb = build_training_targets(b);
    CHECK_FALSE(tb.targets[1].predicts());
    CHECK(tb.loss_mask == std::vector<std::uint8_t>{1, 0, 1, 0});

    // L=2, T=8, 1:4: [x0 y0..y3 x1 y4..y7]. The only position followed by
    // text is y3's (index 4); the terminal position carries the stop label.
    const auto c = build_training_targets(build_interleaved(iota_tokens(2), 8, {1, 4, 1}));
    int fills = 0;
    for (int p = 0; p < 9; ++p) fills += c.targets[p].predicts() ? 0 : 1;
    CHECK(fills == 1);
    CHECK_FALSE(c.targets[4].predicts());
    CHECK(c.stop_labels[9] == 1);
    CHECK_FALSE(c.targets[9].predicts());
}

TEST_CASE("target coverage property") {
    Rng rng(17);
    for (int trial = 0; trial < 300; ++trial) {
        const auto n = static_cast<std::uint32_t>(1 + rng.below(4));
        const auto m = static_cast<std::uint32_t>(1 + rng.below(6));
        const auto l = static_cast<std::uint32_t>(rng.below(10));
        const auto t = static_cast<std::uint32_t>(1 + rng.below(40));
        InterleavedSeq seq;
        try {
            seq = build_interleaved(iota_tokens(l), t, {n, m, 1});
        } catch (const Error&) {
            continue;
        }
        const auto tt = build_training_targets(seq);
        std::vector<int> hits(t, 0);
        int stops = 0, predicts = 0;
        for (std::size_t p = 0; p < seq.elements.size(); ++p) {
            stops += tt.stop_labels[p];
            CHECK((tt.loss_mask[p] != 0) == tt.targets[p].predicts());
            if (tt.targets[p].predicts()) {
                ++predicts;
                ++hits[tt.targets[p].frame];
                CHECK(seq.elements[p + 1].is_mel());
            } else if (p + 1 < seq.elements.size()) {
                CHECK(seq.elements[p + 1].is_text());
            }
        }
        CHECK(stops == 1);
        CHECK(tt.stop_labels.back() == 1);
        // With text, frame 0 is predicted from the token before it; with no
        // text y0 has no predecessor in this layout.
        for (std::uint32_t f = 1; f < t; ++f) CHECK(hits[f] == 1);
        CHECK(hits[0] == (l > 0 ? 1 : 0));
        CHECK(predicts == static_cast<int>(l > 0 ? t : t - 1));
    }
}

TEST_CASE("plan_steps examples") {
    using K = PlanStep::Kind;
    CHECK(plan_steps(1, 4, {1, 4, 2}) == std::vector<PlanStep>{{K::ConsumeText, 1, 0}, {K::EmitFrames, 2, 2}, {K::EmitFrames, 2, 2}});

    const auto p = plan_steps(2, 10, {1, 4, 1});
    std::vector<K> kinds;
    for (const auto& s : p) kinds.push_back(s.kind);
    std::vector<K> expect = {K::ConsumeText};
    for (int i = 0; i < 4; ++i) expect.push_back(K::EmitFrames);
    expect.push_back(K::ConsumeText);
    for (int i = 0; i < 6; ++i) expect.push_back(K::EmitFrames);
    CHECK(kinds == expect);

    const auto q = plan_steps(0, 10, {1, 4, 4});
    REQUIRE(q.size() == 3);
    CHECK(q[2].valid == 2);

    try {
        plan_steps(1, 4, {1, 4, 3});
        FAIL("expected InvalidReduction");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::InvalidReduction);
    }
}

TEST_CASE("step accounting property") {
    for (std::uint32_t r : {1u, 2u, 4u}) {
        for (std::uint32_t n = 1; n <= 3; ++n) {
            for (std::uint32_t l = 0; l <= 8; ++l) {
                for (std::uint32_t t = 1; t <= 40; ++t) {
                    std::vector<PlanStep> plan;
                    try {
                        plan = plan_steps(l, t, {n, 4, r});
                    } catch (const Error&) {
                        continue;
                    }
                    std::uint32_t text = 0, emits = 0, frames = 0;
                    for (const auto& s : plan) {
                        if (s.kind == PlanStep::Kind::ConsumeText) {
                            text += s.count;
                            CHECK(s.count <= n);
                        } else {
                            ++emits;
                            frames += s.valid;
                            CHECK(s.count == r);
                        }
                    }
                    CHECK(text == l);
                    CHECK(emits == (t + r - 1) / r);
                    CHECK(frames == t);
                }
            }
        }
    }
}

TEST_CASE("unbounded plan ends after the last text group") {
    const auto p = plan_steps(3, std::nullopt, {2, 4, 2});
    using K = PlanStep::Kind;
    CHECK(p == std::vector<PlanStep>{{K::ConsumeText, 2, 0}, {K::EmitFrames, 2, 2}, {K::EmitFrames, 2, 2},
                                     {K::ConsumeText, 1, 0}, {K::EmitFrames, 2, 2}, {K::EmitFrames, 2, 2}});
}

TEST_CASE("step sequence") {
    const auto seq = build_step_sequence(iota_tokens(2), 6, {1, 4, 2});
    using K = StepElement::Kind;
    REQUIRE(seq.elements.size() == 2 + 3);
    CHECK(seq.elements[0] == StepElement{K::Text, 100, 0, 0});
    CHECK(seq.elements[1] == StepElement{K::Frames, 0, 0, 2});
    CHECK(seq.elements[2] == StepElement{K::Frames, 0, 2, 2});
    CHECK(seq.elements[3] == StepElement{K::Text, 101, 0, 0});
    CHECK(seq.elements[4] == StepElement{K::Frames, 0, 4, 2});

    const auto bos = build_step_sequence(std::vector<std::uint32_t>{}, 3, {1, 4, 2});
    REQUIRE(bos.elements.size() == 3);
    CHECK(bos.elements[0].kind == K::BeginOfSpeech);
    CHECK(bos.elements[2].valid == 1);
}

}
