#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "melweave/autograd.hpp"
#include "melweave/rng.hpp"
#include "melweave/schedule.hpp"

namespace melweave {

struct ModelConfig {
    std::uint32_t d_model = 64;
    std::uint32_t n_layers = 2;
    std::uint32_t n_heads = 4;
    std::uint32_t d_ff = 256;
    std::uint32_t n_mels = 8;
    std::uint32_t d_latent = 16;
    std::uint32_t vocab_size = 16;
    std::uint32_t max_positions = 1024;
    std::uint32_t reduction = 1;

    void validate() const;
    std::uint32_t frame_group_width() const { return reduction * n_mels; }

    bool operator==(const ModelConfig&) const = default;
};

inline constexpr double kLogVarMin = -14.0;
inline constexpr double kLogVarMax = 6.0;

struct MelFrame {
    Vector values;

    MelFrame() = default;
    explicit MelFrame(Vector v) : values(std::move(v)) {}
    std::size_t size() const { return static_cast<std::size_t>(values.size()); }
    bool operator==(const MelFrame& other) const {
        return values.size() == other.values.size() && values == other.values;
    }
};

struct LatentParams {
    Vector mu;
    Vector log_var;
};

struct DecoderState {
    // Per layer, row-major [position x d_model] keys and values.
    std::vector<std::vector<double>> keys;
    std::vector<std::vector<double>> values;
    std::uint32_t position = 0;
    Rng rng;

    std::size_t cache_length(std::size_t layer, std::size_t d_model) const {
        return keys[layer].size() / d_model;
    }
};

struct Param {
    std::string name;
    Matrix value;
};

// Parameter gradients, shaped like the model's parameter list.
struct GradStore {
    std::vector<Matrix> grads;

    void zero();
    double squared_norm() const;
    void add(const GradStore& other);
    void scale(double s);
};

// Toy-scale autoregressive mel language model: text embedding, mel pre-net,
// pre-norm causal Transformer with learned absolute positions, Gaussian
// latent head, post-net and stop head.
//
// Parameter order (the checkpoint blob order, each matrix row-major):
//   text_embedding [vocab x d], position_embedding [max_pos x d],
//   bos_frames [1 x r*n_mels],
//   prenet.fc1.{w,b}, prenet.fc2.{w,b},
//   for each layer: ln1.{gamma,beta}, attn.{wq,bq,wk,bk,wv,bv,wo,bo},
//                   ln2.{gamma,beta}, ffn.{w1,b1,w2,b2},
//   final_ln.{gamma,beta}, latent.mu.{w,b}, latent.log_var.{w,b},
//   postnet.fc1.{w,b}, postnet.fc2.{w,b}, stop.{w,b}
// Weights are [in x out]; biases and norm parameters are [1 x width].
class Model {
public:
    explicit Model(const ModelConfig& cfg);

    // Scaled Gaussian initialization; values are rounded to float precision.
    static Model initialized(const ModelConfig& cfg, std::uint64_t seed);

    // Every parameter i.i.d. N(0, std^2); used by equivalence tests.
    void randomize(std::uint64_t seed, double std);
    // Rounds every parameter to the nearest float.
    void snap_to_float();

    const ModelConfig& config() const { return config_; }
    std::vector<Param>& params() { return params_; }
    const std::vector<Param>& params() const { return params_; }
    std::size_t parameter_count() const;
    GradStore zero_grads() const;

    Vector embed_text(std::uint32_t token) const;
    // Pre-net over r frames (concatenated in order).
    Vector prenet(std::span<const MelFrame> group) const;
    Vector prenet_flat(const Vector& group) const;
    // Learned begin-of-speech frame group passed through the pre-net.
    Vector begin_of_speech() const;

    DecoderState new_state(std::uint64_t seed = 0) const;
    // Appends one position to the cache and returns its hidden vector.
    Vector decode_step(DecoderState& state, const Vector& input) const;
    // Teacher-forcing path: causal hidden states for every input row.
    Matrix full_forward(const Matrix& inputs) const;

    LatentParams latent_head(const Vector& hidden) const;
    std::vector<MelFrame> postnet(const Vector& z) const;
    double stop_logit(const Vector& hidden) const;
    double stop_head(const Vector& hidden) const;

    // Differentiable graph over a step sequence.
    struct GraphOutputs {
        ag::Var hidden;      // S x d
        ag::Var mu;          // S x d_latent
        ag::Var log_var;     // S x d_latent (clamped)
        ag::Var frames;      // S x r*n_mels post-net output
        ag::Var stop_logits; // S x 1
    };

    // Binds parameters to the tape; gradients go into `grads` when non-null.
    std::vector<ag::Var> bind(ag::Tape& tape, GradStore* grads) const;

    // `frames` holds the teacher-forcing mel frames (T x n_mels); `noise`
    // holds one standard normal draw per position (S x d_latent).
    GraphOutputs build_graph(ag::Tape& tape, const std::vector<ag::Var>& bound, const StepSequence& seq,
                             const Matrix& frames, const Matrix& noise) const;
    // Hidden states only, from explicit input vectors.
    ag::Var build_decoder(ag::Tape& tape, const std::vector<ag::Var>& bound, ag::Var inputs) const;

private:
    struct LayerIndex {
        std::size_t ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
    };

    std::size_t add_param(const std::string& name, std::uint32_t rows, std::uint32_t cols);
    const Matrix& p(std::size_t index) const { return params_[index].value; }
    RowVector prenet_row(const RowVector& group) const;

    ModelConfig config_;
    std::vector<Param> params_;
    std::size_t text_embedding_, position_embedding_, bos_frames_;
    std::size_t pre_w1_, pre_b1_, pre_w2_, pre_b2_;
    std::vector<LayerIndex> layers_;
    std::size_t final_g_, final_b_;
    std::size_t mu_w_, mu_b_, lv_w_, lv_b_;
    std::size_t post_w1_, post_b1_, post_w2_, post_b2_;
    std::size_t stop_w_, stop_b_;
};

// Reuses a reduction-1 model's weights for groups of r frames: the pre-net
// reads the last frame of a group, the post-net repeats its frame r times
// and the begin-of-speech group is tiled. Other parameters are copied.
Model widen_reduction(const Model& base, std::uint32_t r);

// Draws `samples` reparameterized candidates mu + sigma * eps and returns the
// one with the highest Gaussian log-density under the parameters (for a
// shared sigma this is the candidate with the smallest |eps|^2). A sigma
// override replaces exp(0.5 * log_var) for every dimension.
Vector sample_latent(const LatentParams& params, Rng& rng, int samples,
                     std::optional<double> sigma_override = std::nullopt);

}  // namespace melweave
