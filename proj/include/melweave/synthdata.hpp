#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "melweave/autograd.hpp"
#include "melweave/model.hpp"

namespace melweave {

struct CorpusSpec {
    std::uint32_t vocab_size = 16;
    std::uint32_t n_mels = 8;
    std::uint32_t frames_per_token = 4;
    std::uint32_t n_utterances = 2000;
    std::uint32_t min_tokens = 4;
    std::uint32_t max_tokens = 12;
    std::uint32_t speaker_count = 4;
    double noise_std = 0.02;
    std::uint64_t seed = 1234;
    // Appends token vocab_size - 1 to every utterance; ordinary tokens are
    // then drawn from [0, vocab_size - 1).
    bool end_token = true;
    double min_gain = 0.75;
    double max_gain = 1.25;
    double frame_shift_ms = 12.5;

    void validate() const;
    std::uint32_t end_token_id() const { return vocab_size - 1; }

    bool operator==(const CorpusSpec&) const = default;
};

struct Utterance {
    std::string id;
    std::vector<std::uint32_t> tokens;
    Matrix mel;  // T x n_mels, normalized
    std::uint32_t speaker = 0;
    bool validation = false;
};

struct Corpus {
    CorpusSpec spec;
    std::vector<double> speaker_gains;
    Vector bin_mean;  // raw-domain statistics used for normalization
    Vector bin_std;
    std::vector<Utterance> train;
    std::vector<Utterance> validation;
};

// Raw (unnormalized, noise-free) template for token `token` at the given
// gain: frames_per_token x n_mels with value at (step s, bin b)
//   gain * sin(2*pi*(token+1)*(s + b/n_mels)/frames_per_token + pi*b/n_mels).
Matrix raw_template(const CorpusSpec& spec, std::uint32_t token, double gain);

Corpus generate_corpus(const CorpusSpec& spec);

// Normalized clean templates per (token, speaker) for nearest-template
// classification.
class TemplateBank {
public:
    explicit TemplateBank(const Corpus& corpus);
    TemplateBank(const CorpusSpec& spec, std::vector<double> gains, Vector mean, Vector std);

    const Matrix& templ(std::uint32_t token, std::uint32_t speaker) const;
    // Nearest template (Euclidean) among all tokens for this speaker.
    std::uint32_t classify(const Matrix& frames, std::uint32_t speaker) const;
    const CorpusSpec& spec() const { return spec_; }

private:
    CorpusSpec spec_;
    std::vector<Matrix> templates_;  // speaker-major
};

struct ReconstructionScore {
    double frame_mse = 0.0;
    double template_accuracy = 0.0;
};

// frame_mse over the aligned overlap; template_accuracy is the fraction of
// the reference's token slots whose predicted frames classify as the true
// token. Slots the prediction does not fully cover count as misses.
ReconstructionScore score_reconstruction(const Matrix& predicted, const Utterance& reference,
                                         const TemplateBank& bank);
ReconstructionScore score_reconstruction(const std::vector<MelFrame>& predicted, const Utterance& reference,
                                         const TemplateBank& bank);

Matrix frames_to_matrix(const std::vector<MelFrame>& frames, std::uint32_t n_mels);
std::vector<MelFrame> matrix_to_frames(const Matrix& m);

// Directory layout: corpus.json (spec, gains, normalization statistics),
// manifest.jsonl (one {"id","speaker","tokens","split","frames","file"}
// record per utterance) and one MELF file per utterance.
void write_corpus(const std::filesystem::path& dir, const Corpus& corpus);
Corpus read_corpus(const std::filesystem::path& dir);

}  // namespace melweave
