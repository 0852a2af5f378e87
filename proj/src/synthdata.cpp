#include "melweave/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "melweave/error.hpp"
#include "melweave/melio.hpp"
#include "melweave/rng.hpp"

namespace melweave {

namespace {

constexpr std::uint64_t kSplitSalt = 0x5EED5EED5EED5EEDULL;
constexpr std::uint64_t kGainStream = 0xFFFFFFFF00000000ULL;

}  // namespace

void CorpusSpec::validate() const {
    if (vocab_size == 0 || n_mels == 0 || frames_per_token == 0 || n_utterances == 0 || min_tokens == 0 ||
        max_tokens < min_tokens || speaker_count == 0) {
        throw Error(ErrorCode::InvalidConfig, "corpus sizes must be positive and min_tokens <= max_tokens");
    }
    if (end_token && vocab_size < 2) {
        throw Error(ErrorCode::InvalidConfig, "an end token needs vocab_size >= 2");
    }
    if (noise_std < 0 || !(min_gain > 0) || max_gain < min_gain || !(frame_shift_ms > 0)) {
        throw Error(ErrorCode::InvalidConfig, "noise_std >= 0, 0 < min_gain <= max_gain, frame_shift_ms > 0");
    }
}

Matrix raw_template(const CorpusSpec& spec, std::uint32_t token, double gain) {
    const double fpt = spec.frames_per_token;
    const double bins = spec.n_mels;
    Matrix out(spec.frames_per_token, spec.n_mels);
    for (std::uint32_t s = 0; s < spec.frames_per_token; ++s) {
        for (std::uint32_t b = 0; b < spec.n_mels; ++b) {
            const double local_time = s + b / bins;
            const double phase = std::numbers::pi * b / bins;
            out(s, b) = gain * std::sin(2.0 * std::numbers::pi * (token + 1) * local_time / fpt + phase);
        }
    }
    return out;
}

Corpus generate_corpus(const CorpusSpec& spec) {
    spec.validate();
    Corpus corpus;
    corpus.spec = spec;
    Rng gain_rng(derive_seed(spec.seed, kGainStream));
    for (std::uint32_t s = 0; s < spec.speaker_count; ++s) {
        corpus.speaker_gains.push_back(spec.min_gain + (spec.max_gain - spec.min_gain) * gain_rng.uniform());
    }

    const std::uint32_t regular_vocab = spec.end_token ? spec.vocab_size - 1 : spec.vocab_size;
    std::vector<Utterance> all;
    all.reserve(spec.n_utterances);
    for (std::uint32_t i = 0; i < spec.n_utterances; ++i) {
        Rng rng(derive_seed(spec.seed, i));
        Utterance utt;
        char id[32];
        std::snprintf(id, sizeof(id), "utt%05u", i);
        utt.id = id;
        const auto count = static_cast<std::uint32_t>(spec.min_tokens + rng.below(spec.max_tokens - spec.min_tokens + 1));
        for (std::uint32_t k = 0; k < count; ++k) {
            utt.tokens.push_back(static_cast<std::uint32_t>(rng.below(regular_vocab)));
        }
        if (spec.end_token) utt.tokens.push_back(spec.end_token_id());
        utt.speaker = static_cast<std::uint32_t>(rng.below(spec.speaker_count));
        const double gain = corpus.speaker_gains[utt.speaker];
        utt.mel.resize(static_cast<Eigen::Index>(utt.tokens.size() * spec.frames_per_token), spec.n_mels);
        for (std::size_t k = 0; k < utt.tokens.size(); ++k) {
            utt.mel.middleRows(static_cast<Eigen::Index>(k * spec.frames_per_token), spec.frames_per_token) =
                raw_template(spec, utt.tokens[k], gain);
        }
        if (spec.noise_std > 0) {
            for (Eigen::Index e = 0; e < utt.mel.size(); ++e) utt.mel.data()[e] += spec.noise_std * rng.normal();
        }
        utt.validation = derive_seed(spec.seed ^ kSplitSalt, i) % 10 == 0;
        all.push_back(std::move(utt));
    }

    // Per-bin statistics over the whole corpus, then normalize in place.
    Vector sum = Vector::Zero(spec.n_mels);
    std::size_t frames = 0;
    for (const Utterance& utt : all) {
        sum += utt.mel.colwise().sum().transpose();
        frames += static_cast<std::size_t>(utt.mel.rows());
    }
    corpus.bin_mean = sum / static_cast<double>(frames);
    Vector sq = Vector::Zero(spec.n_mels);
    for (const Utterance& utt : all) {
        sq += (utt.mel.rowwise() - corpus.bin_mean.transpose()).array().square().matrix().colwise().sum().transpose();
    }
    corpus.bin_std = (sq / static_cast<double>(frames)).array().sqrt();
    for (Utterance& utt : all) {
        utt.mel = ((utt.mel.rowwise() - corpus.bin_mean.transpose()).array().rowwise() /
                   corpus.bin_std.transpose().array())
                      .matrix();
        // Stored values are float32 on disk; keep memory identical.
        for (Eigen::Index e = 0; e < utt.mel.size(); ++e) {
            utt.mel.data()[e] = static_cast<double>(static_cast<float>(utt.mel.data()[e]));
        }
        (utt.validation ? corpus.validation : corpus.train).push_back(std::move(utt));
    }
    return corpus;
}

TemplateBank::TemplateBank(const Corpus& corpus)
    : TemplateBank(corpus.spec, corpus.speaker_gains, corpus.bin_mean, corpus.bin_std) {}

TemplateBank::TemplateBank(const CorpusSpec& spec, std::vector<double> gains, Vector mean, Vector std)
    : spec_(spec) {
    for (double gain : gains) {
        for (std::uint32_t v = 0; v < spec.vocab_size; ++v) {
            Matrix t = raw_template(spec, v, gain);
            t = ((t.rowwise() - mean.transpose()).array().rowwise() / std.transpose().array()).matrix();
            templates_.push_back(std::move(t));
        }
    }
}

const Matrix& TemplateBank::templ(std::uint32_t token, std::uint32_t speaker) const {
    return templates_.at(static_cast<std::size_t>(speaker) * spec_.vocab_size + token);
}

std::uint32_t TemplateBank::classify(const Matrix& frames, std::uint32_t speaker) const {
    std::uint32_t best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::uint32_t v = 0; v < spec_.vocab_size; ++v) {
        const double dist = (frames - templ(v, speaker)).squaredNorm();
        if (dist < best_dist) {
            best_dist = dist;
            best = v;
        }
    }
    return best;
}

ReconstructionScore score_reconstruction(const Matrix& predicted, const Utterance& reference,
                                         const TemplateBank& bank) {
    if (predicted.rows() == 0) {
        throw Error(ErrorCode::NoOutput, "empty prediction");
    }
    if (predicted.cols() != reference.mel.cols()) {
        throw Error(ErrorCode::ShapeError, "prediction and reference differ in n_mels");
    }
    ReconstructionScore score;
    const Eigen::Index overlap = std::min(predicted.rows(), reference.mel.rows());
    score.frame_mse = (predicted.topRows(overlap) - reference.mel.topRows(overlap)).squaredNorm() /
                      static_cast<double>(overlap * predicted.cols());
    const auto fpt = static_cast<Eigen::Index>(bank.spec().frames_per_token);
    std::size_t correct = 0;
    for (std::size_t k = 0; k < reference.tokens.size(); ++k) {
        const Eigen::Index start = static_cast<Eigen::Index>(k) * fpt;
        if (start + fpt > predicted.rows()) break;
        if (bank.classify(predicted.middleRows(start, fpt), reference.speaker) == reference.tokens[k]) ++correct;
    }
    score.template_accuracy =
        reference.tokens.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(reference.tokens.size());
    return score;
}

Matrix frames_to_matrix(const std::vector<MelFrame>& frames, std::uint32_t n_mels) {
    Matrix m(static_cast<Eigen::Index>(frames.size()), n_mels);
    for (std::size_t t = 0; t < frames.size(); ++t) {
        if (frames[t].size() != n_mels) throw Error(ErrorCode::ShapeError, "frame width differs from n_mels");
        m.row(static_cast<Eigen::Index>(t)) = frames[t].values.transpose();
    }
    return m;
}

std::vector<MelFrame> matrix_to_frames(const Matrix& m) {
    std::vector<MelFrame> frames;
    frames.reserve(static_cast<std::size_t>(m.rows()));
    for (Eigen::Index t = 0; t < m.rows(); ++t) frames.emplace_back(m.row(t).transpose());
    return frames;
}

ReconstructionScore score_reconstruction(const std::vector<MelFrame>& predicted, const Utterance& reference,
                                         const TemplateBank& bank) {
    if (predicted.empty()) {
        throw Error(ErrorCode::NoOutput, "empty prediction");
    }
    return score_reconstruction(frames_to_matrix(predicted, static_cast<std::uint32_t>(reference.mel.cols())),
                                reference, bank);
}

namespace {

nlohmann::json spec_to_json(const CorpusSpec& s) {
    return {{"vocab_size", s.vocab_size},   {"n_mels", s.n_mels},
            {"frames_per_token", s.frames_per_token}, {"n_utterances", s.n_utterances},
            {"min_tokens", s.min_tokens},   {"max_tokens", s.max_tokens},
            {"speaker_count", s.speaker_count}, {"noise_std", s.noise_std},
            {"seed", s.seed},               {"end_token", s.end_token},
            {"min_gain", s.min_gain},       {"max_gain", s.max_gain},
            {"frame_shift_ms", s.frame_shift_ms}};
}

CorpusSpec spec_from_json(const nlohmann::json& j) {
    CorpusSpec s;
    s.vocab_size = j.at("vocab_size");
    s.n_mels = j.at("n_mels");
    s.frames_per_token = j.at("frames_per_token");
    s.n_utterances = j.at("n_utterances");
    s.min_tokens = j.at("min_tokens");
    s.max_tokens = j.at("max_tokens");
    s.speaker_count = j.at("speaker_count");
    s.noise_std = j.at("noise_std");
    s.seed = j.at("seed");
    s.end_token = j.at("end_token");
    s.min_gain = j.at("min_gain");
    s.max_gain = j.at("max_gain");
    s.frame_shift_ms = j.at("frame_shift_ms");
    return s;
}

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

Vector from_std(const std::vector<double>& v) { return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())); }

}  // namespace

void write_corpus(const std::filesystem::path& dir, const Corpus& corpus) {
    std::filesystem::create_directories(dir / "mel");
    nlohmann::json meta = {{"spec", spec_to_json(corpus.spec)},
                           {"speaker_gains", corpus.speaker_gains},
                           {"bin_mean", to_std(corpus.bin_mean)},
                           {"bin_std", to_std(corpus.bin_std)}};
    {
        std::ofstream out(dir / "corpus.json", std::ios::trunc);
        out << meta.dump(2) << "\n";
        if (!out) throw Error(ErrorCode::Io, "cannot write " + (dir / "corpus.json").string());
    }
    // Manifest keeps generation order: interleave train/validation by id.
    std::vector<const Utterance*> ordered;
    for (const Utterance& u : corpus.train) ordered.push_back(&u);
    for (const Utterance& u : corpus.validation) ordered.push_back(&u);
    std::sort(ordered.begin(), ordered.end(), [](const Utterance* a, const Utterance* b) { return a->id < b->id; });
    std::ofstream manifest(dir / "manifest.jsonl", std::ios::trunc);
    for (const Utterance* u : ordered) {
        const std::string file = "mel/" + u->id + ".melf";
        manifest << nlohmann::json{{"id", u->id},
                                   {"speaker", u->speaker},
                                   {"tokens", u->tokens},
                                   {"split", u->validation ? "validation" : "train"},
                                   {"frames", u->mel.rows()},
                                   {"file", file}}
                        .dump()
                 << "\n";
        MelFile mel;
        mel.n_mels = corpus.spec.n_mels;
        mel.frame_shift_ms = static_cast<float>(corpus.spec.frame_shift_ms);
        mel.frames = matrix_to_frames(u->mel);
        write_mel(dir / file, mel);
    }
    if (!manifest) throw Error(ErrorCode::Io, "cannot write manifest in " + dir.string());
}

Corpus read_corpus(const std::filesystem::path& dir) {
    std::ifstream meta_in(dir / "corpus.json");
    if (!meta_in) throw Error(ErrorCode::Io, "no corpus.json in " + dir.string());
    const nlohmann::json meta = nlohmann::json::parse(meta_in);
    Corpus corpus;
    corpus.spec = spec_from_json(meta.at("spec"));
    corpus.speaker_gains = meta.at("speaker_gains").get<std::vector<double>>();
    corpus.bin_mean = from_std(meta.at("bin_mean").get<std::vector<double>>());
    corpus.bin_std = from_std(meta.at("bin_std").get<std::vector<double>>());
    std::ifstream manifest(dir / "manifest.jsonl");
    if (!manifest) throw Error(ErrorCode::Io, "no manifest.jsonl in " + dir.string());
    std::string line;
    while (std::getline(manifest, line)) {
        if (line.empty()) continue;
        const nlohmann::json rec = nlohmann::json::parse(line);
        Utterance u;
        u.id = rec.at("id");
        u.speaker = rec.at("speaker");
        u.tokens = rec.at("tokens").get<std::vector<std::uint32_t>>();
        u.validation = rec.at("split") == "validation";
        const MelFile mel = read_mel(dir / rec.at("file").get<std::string>());
        u.mel = frames_to_matrix(mel.frames, mel.n_mels);
        (u.validation ? corpus.validation : corpus.train).push_back(std::move(u));
    }
    return corpus;
}

}  // namespace melweave
