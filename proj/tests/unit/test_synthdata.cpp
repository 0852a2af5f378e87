#include <doctest.h>

#include <cmath>
#include <numbers>

#include "melweave/melio.hpp"
#include "melweave/rng.hpp"
#include "melweave/synthdata.hpp"
#include "support.hpp"

using namespace melweave;
using melweave::test::code_of;
using melweave::test::temp_dir;

namespace {

CorpusSpec small_spec() {
    CorpusSpec spec;
    spec.n_utterances = 200;
    return spec;
}

}  // namespace

TEST_SUITE("synthdata") {

TEST_CASE("template formula") {
    const CorpusSpec spec;
    for (std::uint32_t v = 0; v < spec.vocab_size; ++v) {
        const Matrix t = raw_template(spec, v, 1.1);
        for (int s = 0; s < 4; ++s) {
            for (int b = 0; b < 8; ++b) {
                const double expect =
                    1.1 * std::sin(2 * std::numbers::pi * (v + 1) * (s + b / 8.0) / 4.0 + std::numbers::pi * b / 8.0);
                CHECK(t(s, b) == doctest::Approx(expect).epsilon(1e-14));
            }
        }
    }
    // Token 1 runs at twice the frequency of token 0: its value at local
    // time u matches token 0 at time 2u, up to the shared phase.
    const Matrix t0 = raw_template(spec, 0, 1.0), t1 = raw_template(spec, 1, 1.0);
    for (int s = 0; s < 2; ++s) {
        for (int b = 0; b < 8; b += 2) {
            const double u = s + b / 8.0;
            const double shifted = std::sin(2 * std::numbers::pi * (2 * u) / 4.0 + std::numbers::pi * b / 8.0);
            CHECK(t1(s, b) == doctest::Approx(shifted).epsilon(1e-12));
        }
    }
    CHECK((t1 - t0).norm() > 1.0);
    const Matrix g1 = raw_template(spec, 5, 0.8), g2 = raw_template(spec, 5, 1.6);
    CHECK((g2 - 2.0 * g1).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("templates are pairwise distinct") {
    const CorpusSpec spec;
    for (std::uint32_t a = 0; a < spec.vocab_size; ++a) {
        for (std::uint32_t b = a + 1; b < spec.vocab_size; ++b) {
            CHECK((raw_template(spec, a, 1.0) - raw_template(spec, b, 1.0)).norm() > 0.5);
        }
    }
}

TEST_CASE("generation is deterministic") {
    CorpusSpec spec = small_spec();
    spec.noise_std = 0.0;
    const Corpus a = generate_corpus(spec), b = generate_corpus(spec);
    REQUIRE(a.train.size() == b.train.size());
    for (std::size_t i = 0; i < a.train.size(); ++i) {
        CHECK(a.train[i].tokens == b.train[i].tokens);
        CHECK(encode_mel({8, 12.5f, matrix_to_frames(a.train[i].mel)}) ==
              encode_mel({8, 12.5f, matrix_to_frames(b.train[i].mel)}));
    }
    spec.seed = 99;
    const Corpus c = generate_corpus(spec);
    bool any_diff = false;
    for (std::size_t i = 0; i < std::min(a.train.size(), c.train.size()); ++i) any_diff |= a.train[i].tokens != c.train[i].tokens;
    CHECK(any_diff);
}

TEST_CASE("corpus layout and normalization") {
    const CorpusSpec spec = small_spec();
    const Corpus corpus = generate_corpus(spec);
    CHECK(corpus.speaker_gains.size() == 4);
    for (double g : corpus.speaker_gains) CHECK((g >= 0.75 && g <= 1.25));
    Vector sum = Vector::Zero(8), sq = Vector::Zero(8);
    double frames = 0;
    for (const auto* split : {&corpus.train, &corpus.validation}) {
        for (const Utterance& u : *split) {
            CHECK(u.tokens.size() >= 5);
            CHECK(u.tokens.size() <= 13);
            CHECK(u.tokens.back() == 15);
            for (std::size_t k = 0; k + 1 < u.tokens.size(); ++k) CHECK(u.tokens[k] < 15);
            CHECK(u.mel.rows() == static_cast<Eigen::Index>(4 * u.tokens.size()));
            CHECK(u.mel.cols() == 8);
            sum += u.mel.colwise().sum().transpose();
            sq += u.mel.array().square().matrix().colwise().sum().transpose();
            frames += static_cast<double>(u.mel.rows());
        }
    }
    const Vector mean = sum / frames;
    const Vector var = sq / frames - mean.array().square().matrix();
    CHECK(mean.cwiseAbs().maxCoeff() < 1e-6);
    CHECK((var.array() - 1.0).abs().maxCoeff() < 1e-3);
}

TEST_CASE("validation split is about one in ten") {
    CorpusSpec spec;
    spec.n_utterances = 2000;
    const Corpus corpus = generate_corpus(spec);
    CHECK(corpus.train.size() + corpus.validation.size() == 2000);
    CHECK(corpus.validation.size() > 150);
    CHECK(corpus.validation.size() < 250);
    for (const Utterance& u : corpus.validation) CHECK(u.validation);
    for (const Utterance& u : corpus.train) CHECK_FALSE(u.validation);
}

TEST_CASE("clean templates classify perfectly") {
    const Corpus corpus = generate_corpus(small_spec());
    const TemplateBank bank(corpus);
    for (std::uint32_t s = 0; s < 4; ++s) {
        for (std::uint32_t v = 0; v < 16; ++v) CHECK(bank.classify(bank.templ(v, s), s) == v);
    }
}

TEST_CASE("reconstruction scores") {
    const Corpus corpus = generate_corpus(small_spec());
    const TemplateBank bank(corpus);
    const Utterance& ref = corpus.validation.front();

    const ReconstructionScore self = score_reconstruction(ref.mel, ref, bank);
    CHECK(self.frame_mse == 0.0);
    CHECK(self.template_accuracy == 1.0);

    // Every slot replaced by a different token's clean template.
    Matrix wrong = ref.mel;
    for (std::size_t k = 0; k < ref.tokens.size(); ++k) {
        wrong.middleRows(static_cast<Eigen::Index>(4 * k), 4) = bank.templ((ref.tokens[k] + 1) % 16, ref.speaker);
    }
    CHECK(score_reconstruction(wrong, ref, bank).template_accuracy == 0.0);

    // Uniformly random tokens land near chance.
    Rng rng(5);
    double acc = 0.0;
    int count = 0;
    for (const Utterance& u : corpus.train) {
        Matrix guess = u.mel;
        for (std::size_t k = 0; k < u.tokens.size(); ++k) {
            guess.middleRows(static_cast<Eigen::Index>(4 * k), 4) =
                bank.templ(static_cast<std::uint32_t>(rng.below(16)), u.speaker);
        }
        acc += score_reconstruction(guess, u, bank).template_accuracy;
        ++count;
    }
    CHECK(std::abs(acc / count - 1.0 / 16) < 0.02);

    // Truncated output misses the uncovered slots.
    const ReconstructionScore half = score_reconstruction(Matrix(ref.mel.topRows(6)), ref, bank);
    CHECK(half.template_accuracy == doctest::Approx(1.0 / static_cast<double>(ref.tokens.size())));

    CHECK(code_of([&] { score_reconstruction(Matrix(0, 8), ref, bank); }) == ErrorCode::NoOutput);
    CHECK(code_of([&] { score_reconstruction(std::vector<MelFrame>{}, ref, bank); }) == ErrorCode::NoOutput);
    CHECK(code_of([&] { score_reconstruction(Matrix::Zero(4, 5), ref, bank); }) == ErrorCode::ShapeError);
}

TEST_CASE("invalid specs") {
    CorpusSpec spec;
    spec.max_tokens = 2;
    CHECK(code_of([&] { generate_corpus(spec); }) == ErrorCode::InvalidConfig);
    spec = {};
    spec.noise_std = -1;
    CHECK(code_of([&] { spec.validate(); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("corpus files round trip") {
    CorpusSpec spec = small_spec();
    spec.n_utterances = 30;
    const Corpus corpus = generate_corpus(spec);
    const auto dir = temp_dir("corpus");
    write_corpus(dir, corpus);
    CHECK(std::filesystem::exists(dir / "manifest.jsonl"));
    const Corpus back = read_corpus(dir);
    CHECK(back.spec == corpus.spec);
    CHECK(back.speaker_gains == corpus.speaker_gains);
    CHECK(back.bin_mean == corpus.bin_mean);
    REQUIRE(back.train.size() == corpus.train.size());
    REQUIRE(back.validation.size() == corpus.validation.size());
    for (std::size_t i = 0; i < corpus.train.size(); ++i) {
        CHECK(back.train[i].id == corpus.train[i].id);
        CHECK(back.train[i].tokens == corpus.train[i].tokens);
        CHECK(back.train[i].speaker == corpus.train[i].speaker);
        CHECK(back.train[i].mel == corpus.train[i].mel);
    }
    CHECK(code_of([] { read_corpus("/nonexistent/corpus"); }) == ErrorCode::Io);
}

}
