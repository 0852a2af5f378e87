#include "melweave/model.hpp"

#include <cmath>
#include <string>

#include "melweave/error.hpp"

namespace melweave {

void ModelConfig::validate() const {
    if (d_model == 0 || n_layers == 0 || n_heads == 0 || d_ff == 0 || n_mels == 0 || d_latent == 0 ||
        vocab_size == 0 || max_positions == 0 || reduction == 0) {
        throw Error(ErrorCode::InvalidConfig, "all model dimensions must be >= 1");
    }
    if (d_model % n_heads != 0) {
        throw Error(ErrorCode::InvalidConfig, "d_model must be divisible by n_heads");
    }
    if (d_latent > d_model) {
        throw Error(ErrorCode::InvalidConfig, "d_latent must not exceed d_model");
    }
}

void GradStore::zero() {
    for (Matrix& g : grads) g.setZero();
}

double GradStore::squared_norm() const {
    double total = 0.0;
    for (const Matrix& g : grads) total += g.squaredNorm();
    return total;
}

void GradStore::add(const GradStore& other) {
    for (std::size_t i = 0; i < grads.size(); ++i) grads[i] += other.grads[i];
}

void GradStore::scale(double s) {
    for (Matrix& g : grads) g *= s;
}

std::size_t Model::add_param(const std::string& name, std::uint32_t rows, std::uint32_t cols) {
    params_.push_back({name, Matrix::Zero(rows, cols)});
    return params_.size() - 1;
}

Model::Model(const ModelConfig& cfg) : config_(cfg) {
    cfg.validate();
    const std::uint32_t d = cfg.d_model;
    const std::uint32_t group = cfg.frame_group_width();
    text_embedding_ = add_param("text_embedding", cfg.vocab_size, d);
    position_embedding_ = add_param("position_embedding", cfg.max_positions, d);
    bos_frames_ = add_param("bos_frames", 1, group);
    pre_w1_ = add_param("prenet.fc1.w", group, d);
    pre_b1_ = add_param("prenet.fc1.b", 1, d);
    pre_w2_ = add_param("prenet.fc2.w", d, d);
    pre_b2_ = add_param("prenet.fc2.b", 1, d);
    for (std::uint32_t l = 0; l < cfg.n_layers; ++l) {
        const std::string prefix = "layer" + std::to_string(l) + ".";
        LayerIndex li{};
        li.ln1_g = add_param(prefix + "ln1.gamma", 1, d);
        li.ln1_b = add_param(prefix + "ln1.beta", 1, d);
        li.wq = add_param(prefix + "attn.wq", d, d);
        li.bq = add_param(prefix + "attn.bq", 1, d);
        li.wk = add_param(prefix + "attn.wk", d, d);
        li.bk = add_param(prefix + "attn.bk", 1, d);
        li.wv = add_param(prefix + "attn.wv", d, d);
        li.bv = add_param(prefix + "attn.bv", 1, d);
        li.wo = add_param(prefix + "attn.wo", d, d);
        li.bo = add_param(prefix + "attn.bo", 1, d);
        li.ln2_g = add_param(prefix + "ln2.gamma", 1, d);
        li.ln2_b = add_param(prefix + "ln2.beta", 1, d);
        li.w1 = add_param(prefix + "ffn.w1", d, cfg.d_ff);
        li.b1 = add_param(prefix + "ffn.b1", 1, cfg.d_ff);
        li.w2 = add_param(prefix + "ffn.w2", cfg.d_ff, d);
        li.b2 = add_param(prefix + "ffn.b2", 1, d);
        layers_.push_back(li);
    }
    final_g_ = add_param("final_ln.gamma", 1, d);
    final_b_ = add_param("final_ln.beta", 1, d);
    mu_w_ = add_param("latent.mu.w", d, cfg.d_latent);
    mu_b_ = add_param("latent.mu.b", 1, cfg.d_latent);
    lv_w_ = add_param("latent.log_var.w", d, cfg.d_latent);
    lv_b_ = add_param("latent.log_var.b", 1, cfg.d_latent);
    post_w1_ = add_param("postnet.fc1.w", cfg.d_latent, d);
    post_b1_ = add_param("postnet.fc1.b", 1, d);
    post_w2_ = add_param("postnet.fc2.w", d, group);
    post_b2_ = add_param("postnet.fc2.b", 1, group);
    stop_w_ = add_param("stop.w", d, 1);
    stop_b_ = add_param("stop.b", 1, 1);
}

Model Model::initialized(const ModelConfig& cfg, std::uint64_t seed) {
    Model model(cfg);
    Rng rng(seed);
    auto fill = [&](std::size_t index, double std) {
        Matrix& m = model.params_[index].value;
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = std * rng.normal();
    };
    auto fan_in = [&](std::size_t index, double gain = 1.0) {
        fill(index, gain / std::sqrt(static_cast<double>(model.params_[index].value.rows())));
    };
    const double residual_gain = 1.0 / std::sqrt(2.0 * cfg.n_layers);
    fill(model.text_embedding_, 0.5);
    fill(model.position_embedding_, 0.1);
    fill(model.bos_frames_, 1.0);
    fan_in(model.pre_w1_);
    fan_in(model.pre_w2_);
    for (const LayerIndex& li : model.layers_) {
        model.params_[li.ln1_g].value.setOnes();
        model.params_[li.ln2_g].value.setOnes();
        fan_in(li.wq);
        fan_in(li.wk);
        fan_in(li.wv);
        fan_in(li.wo, residual_gain);
        fan_in(li.w1);
        fan_in(li.w2, residual_gain);
    }
    model.params_[model.final_g_].value.setOnes();
    fan_in(model.mu_w_);
    fan_in(model.lv_w_, 0.1);
    fan_in(model.post_w1_);
    fan_in(model.post_w2_);
    fan_in(model.stop_w_);
    model.snap_to_float();
    return model;
}

void Model::randomize(std::uint64_t seed, double std) {
    Rng rng(seed);
    for (Param& param : params_) {
        for (Eigen::Index i = 0; i < param.value.size(); ++i) param.value.data()[i] = std * rng.normal();
    }
}

void Model::snap_to_float() {
    for (Param& param : params_) {
        for (Eigen::Index i = 0; i < param.value.size(); ++i) {
            param.value.data()[i] = static_cast<double>(static_cast<float>(param.value.data()[i]));
        }
    }
}

std::size_t Model::parameter_count() const {
    std::size_t count = 0;
    for (const Param& param : params_) count += static_cast<std::size_t>(param.value.size());
    return count;
}

GradStore Model::zero_grads() const {
    GradStore store;
    store.grads.reserve(params_.size());
    for (const Param& param : params_) {
        store.grads.push_back(Matrix::Zero(param.value.rows(), param.value.cols()));
    }
    return store;
}

Vector Model::embed_text(std::uint32_t token) const {
    if (token >= config_.vocab_size) {
        throw Error(ErrorCode::UnknownToken,
                    "token " + std::to_string(token) + " >= vocab " + std::to_string(config_.vocab_size));
    }
    return p(text_embedding_).row(token).transpose();
}

RowVector Model::prenet_row(const RowVector& group) const {
    RowVector h = group * p(pre_w1_) + p(pre_b1_);
    h = h.unaryExpr([](double v) { return gelu(v); });
    RowVector out = h * p(pre_w2_) + p(pre_b2_);
    return out.unaryExpr([](double v) { return gelu(v); });
}

Vector Model::prenet_flat(const Vector& group) const {
    if (group.size() != static_cast<Eigen::Index>(config_.frame_group_width())) {
        throw Error(ErrorCode::ShapeError, "prenet: expected " + std::to_string(config_.frame_group_width()) +
                                               " values, got " + std::to_string(group.size()));
    }
    return prenet_row(group.transpose()).transpose();
}

Vector Model::prenet(std::span<const MelFrame> group) const {
    if (group.size() != config_.reduction) {
        throw Error(ErrorCode::ShapeError, "prenet: expected " + std::to_string(config_.reduction) + " frames");
    }
    Vector flat(config_.frame_group_width());
    for (std::size_t f = 0; f < group.size(); ++f) {
        if (group[f].size() != config_.n_mels) {
            throw Error(ErrorCode::ShapeError, "prenet: frame has " + std::to_string(group[f].size()) +
                                                   " bins, expected " + std::to_string(config_.n_mels));
        }
        flat.segment(static_cast<Eigen::Index>(f * config_.n_mels), config_.n_mels) = group[f].values;
    }
    return prenet_flat(flat);
}

Vector Model::begin_of_speech() const { return prenet_row(p(bos_frames_).row(0)).transpose(); }

DecoderState Model::new_state(std::uint64_t seed) const {
    DecoderState state;
    state.keys.resize(config_.n_layers);
    state.values.resize(config_.n_layers);
    state.rng = Rng(seed);
    return state;
}

namespace {

RowVector layer_norm_row(const RowVector& x, const Matrix& gamma, const Matrix& beta) {
    const double mean = x.mean();
    const double var = (x.array() - mean).square().mean();
    const double inv_std = 1.0 / std::sqrt(var + 1e-5);
    RowVector normed = (x.array() - mean) * inv_std;
    return normed.cwiseProduct(gamma.row(0)) + beta.row(0);
}

}  // namespace

Vector Model::decode_step(DecoderState& state, const Vector& input) const {
    const std::uint32_t d = config_.d_model;
    if (input.size() != static_cast<Eigen::Index>(d)) {
        throw Error(ErrorCode::ShapeError, "decode_step: input width " + std::to_string(input.size()) +
                                               " != d_model " + std::to_string(d));
    }
    if (state.position >= config_.max_positions) {
        throw Error(ErrorCode::MaxLengthExceeded,
                    "position " + std::to_string(state.position) + " reached max_positions");
    }
    if (state.keys.size() != config_.n_layers) {
        throw Error(ErrorCode::ShapeError, "decode_step: state built for a different model");
    }
    const int heads = static_cast<int>(config_.n_heads);
    const int head_dim = static_cast<int>(d / config_.n_heads);
    RowVector x = input.transpose() + p(position_embedding_).row(state.position);
    RowVector attended(d);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const LayerIndex& li = layers_[l];
        const RowVector h = layer_norm_row(x, p(li.ln1_g), p(li.ln1_b));
        const RowVector q = h * p(li.wq) + p(li.bq);
        const RowVector k = h * p(li.wk) + p(li.bk);
        const RowVector v = h * p(li.wv) + p(li.bv);
        auto& keys = state.keys[l];
        auto& values = state.values[l];
        keys.insert(keys.end(), k.data(), k.data() + d);
        values.insert(values.end(), v.data(), v.data() + d);
        attend_row(q.data(), keys.data(), values.data(), d, keys.size() / d, heads, head_dim, attended.data(),
                   nullptr);
        x += attended * p(li.wo) + p(li.bo);
        const RowVector h2 = layer_norm_row(x, p(li.ln2_g), p(li.ln2_b));
        RowVector f = h2 * p(li.w1) + p(li.b1);
        f = f.unaryExpr([](double v) { return gelu(v); });
        x += f * p(li.w2) + p(li.b2);
    }
    ++state.position;
    return layer_norm_row(x, p(final_g_), p(final_b_)).transpose();
}

std::vector<ag::Var> Model::bind(ag::Tape& tape, GradStore* grads) const {
    std::vector<ag::Var> bound;
    bound.reserve(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
        bound.push_back(tape.bind(params_[i].value, grads ? &grads->grads[i] : nullptr));
    }
    return bound;
}

ag::Var Model::build_decoder(ag::Tape& tape, const std::vector<ag::Var>& bound, ag::Var inputs) const {
    const auto rows = static_cast<int>(tape.value(inputs).rows());
    if (tape.value(inputs).cols() != static_cast<Eigen::Index>(config_.d_model)) {
        throw Error(ErrorCode::ShapeError, "decoder input width != d_model");
    }
    if (rows > static_cast<int>(config_.max_positions)) {
        throw Error(ErrorCode::MaxLengthExceeded, std::to_string(rows) + " positions exceed max_positions");
    }
    std::vector<int> positions(static_cast<std::size_t>(rows));
    for (int i = 0; i < rows; ++i) positions[static_cast<std::size_t>(i)] = i;
    ag::Var x = tape.add(inputs, tape.gather_rows(bound[position_embedding_], std::move(positions)));
    for (const LayerIndex& li : layers_) {
        const ag::Var h = tape.layer_norm(x, bound[li.ln1_g], bound[li.ln1_b]);
        const ag::Var q = tape.linear(h, bound[li.wq], bound[li.bq]);
        const ag::Var k = tape.linear(h, bound[li.wk], bound[li.bk]);
        const ag::Var v = tape.linear(h, bound[li.wv], bound[li.bv]);
        const ag::Var a = tape.causal_attention(q, k, v, static_cast<int>(config_.n_heads));
        x = tape.add(x, tape.linear(a, bound[li.wo], bound[li.bo]));
        const ag::Var h2 = tape.layer_norm(x, bound[li.ln2_g], bound[li.ln2_b]);
        const ag::Var f = tape.gelu(tape.linear(h2, bound[li.w1], bound[li.b1]));
        x = tape.add(x, tape.linear(f, bound[li.w2], bound[li.b2]));
    }
    return tape.layer_norm(x, bound[final_g_], bound[final_b_]);
}

Matrix Model::full_forward(const Matrix& inputs) const {
    if (inputs.rows() == 0) {
        return Matrix(0, config_.d_model);
    }
    ag::Tape tape;
    const auto bound = bind(tape, nullptr);
    const ag::Var in = tape.constant(inputs);
    return tape.value(build_decoder(tape, bound, in));
}

Model::GraphOutputs Model::build_graph(ag::Tape& tape, const std::vector<ag::Var>& bound,
                                       const StepSequence& seq, const Matrix& frames,
                                       const Matrix& noise) const {
    const auto size = static_cast<int>(seq.elements.size());
    const std::uint32_t width = config_.frame_group_width();
    const std::uint32_t r = config_.reduction;
    if (seq.reduction != r) {
        throw Error(ErrorCode::ShapeError, "step sequence reduction differs from model reduction");
    }
    if (frames.cols() != static_cast<Eigen::Index>(config_.n_mels) ||
        frames.rows() < static_cast<Eigen::Index>(seq.mel_length)) {
        throw Error(ErrorCode::ShapeError, "frame matrix does not match the sequence");
    }
    if (noise.rows() != size || noise.cols() != static_cast<Eigen::Index>(config_.d_latent)) {
        throw Error(ErrorCode::ShapeError, "noise matrix must be S x d_latent");
    }

    std::vector<int> text_ids, text_dest, group_dest, bos_dest;
    std::vector<Vector> groups;
    for (int pos = 0; pos < size; ++pos) {
        const StepElement& el = seq.elements[static_cast<std::size_t>(pos)];
        switch (el.kind) {
            case StepElement::Kind::Text:
                if (el.token >= config_.vocab_size) {
                    throw Error(ErrorCode::UnknownToken, "token " + std::to_string(el.token));
                }
                text_ids.push_back(static_cast<int>(el.token));
                text_dest.push_back(pos);
                break;
            case StepElement::Kind::Frames: {
                Vector g = Vector::Zero(width);
                for (std::uint32_t j = 0; j < el.valid; ++j) {
                    g.segment(j * config_.n_mels, config_.n_mels) = frames.row(el.first + j).transpose();
                }
                groups.push_back(std::move(g));
                group_dest.push_back(pos);
                break;
            }
            case StepElement::Kind::BeginOfSpeech:
                bos_dest.push_back(pos);
                break;
        }
    }

    std::vector<ag::Var> parts;
    std::vector<std::vector<int>> dest;
    if (!text_ids.empty()) {
        parts.push_back(tape.gather_rows(bound[text_embedding_], text_ids));
        dest.push_back(text_dest);
    }
    if (!groups.empty() || !bos_dest.empty()) {
        // Frame groups and begin-of-speech rows share one pre-net pass.
        const int count = static_cast<int>(groups.size() + bos_dest.size());
        Matrix group_matrix(static_cast<Eigen::Index>(groups.size()), width);
        for (std::size_t i = 0; i < groups.size(); ++i) {
            group_matrix.row(static_cast<Eigen::Index>(i)) = groups[i].transpose();
        }
        std::vector<ag::Var> pre_parts;
        std::vector<std::vector<int>> pre_dest;
        std::vector<int> order;
        if (!groups.empty()) {
            pre_parts.push_back(tape.constant(std::move(group_matrix)));
            std::vector<int> rows(groups.size());
            for (std::size_t i = 0; i < groups.size(); ++i) rows[i] = static_cast<int>(i);
            pre_dest.push_back(rows);
            order.insert(order.end(), group_dest.begin(), group_dest.end());
        }
        if (!bos_dest.empty()) {
            pre_parts.push_back(tape.gather_rows(bound[bos_frames_], std::vector<int>(bos_dest.size(), 0)));
            std::vector<int> rows(bos_dest.size());
            for (std::size_t i = 0; i < bos_dest.size(); ++i) rows[i] = static_cast<int>(groups.size() + i);
            pre_dest.push_back(rows);
            order.insert(order.end(), bos_dest.begin(), bos_dest.end());
        }
        const ag::Var pre_in = tape.assemble_rows(pre_parts, pre_dest, count);
        const ag::Var h1 = tape.gelu(tape.linear(pre_in, bound[pre_w1_], bound[pre_b1_]));
        parts.push_back(tape.gelu(tape.linear(h1, bound[pre_w2_], bound[pre_b2_])));
        dest.push_back(order);
    }
    const ag::Var inputs = tape.assemble_rows(parts, dest, size);

    GraphOutputs out{};
    out.hidden = build_decoder(tape, bound, inputs);
    out.mu = tape.linear(out.hidden, bound[mu_w_], bound[mu_b_]);
    out.log_var = tape.clamp(tape.linear(out.hidden, bound[lv_w_], bound[lv_b_]), kLogVarMin, kLogVarMax);
    const ag::Var sigma = tape.exp(tape.scale(out.log_var, 0.5));
    const ag::Var z = tape.add(out.mu, tape.mul(sigma, tape.constant(noise)));
    const ag::Var post_h = tape.gelu(tape.linear(z, bound[post_w1_], bound[post_b1_]));
    out.frames = tape.linear(post_h, bound[post_w2_], bound[post_b2_]);
    out.stop_logits = tape.linear(out.hidden, bound[stop_w_], bound[stop_b_]);
    return out;
}

LatentParams Model::latent_head(const Vector& hidden) const {
    if (hidden.size() != static_cast<Eigen::Index>(config_.d_model)) {
        throw Error(ErrorCode::ShapeError, "latent_head: hidden width != d_model");
    }
    const RowVector e = hidden.transpose();
    LatentParams out;
    out.mu = (e * p(mu_w_) + p(mu_b_)).transpose();
    out.log_var = (e * p(lv_w_) + p(lv_b_)).transpose().cwiseMax(kLogVarMin).cwiseMin(kLogVarMax);
    return out;
}

std::vector<MelFrame> Model::postnet(const Vector& z) const {
    if (z.size() != static_cast<Eigen::Index>(config_.d_latent)) {
        throw Error(ErrorCode::ShapeError, "postnet: latent width != d_latent");
    }
    RowVector h = z.transpose() * p(post_w1_) + p(post_b1_);
    h = h.unaryExpr([](double v) { return gelu(v); });
    const RowVector flat = h * p(post_w2_) + p(post_b2_);
    std::vector<MelFrame> frames;
    frames.reserve(config_.reduction);
    for (std::uint32_t f = 0; f < config_.reduction; ++f) {
        frames.emplace_back(flat.segment(f * config_.n_mels, config_.n_mels).transpose());
    }
    return frames;
}

double Model::stop_logit(const Vector& hidden) const {
    if (hidden.size() != static_cast<Eigen::Index>(config_.d_model)) {
        throw Error(ErrorCode::ShapeError, "stop_head: hidden width != d_model");
    }
    return (hidden.transpose() * p(stop_w_))(0, 0) + p(stop_b_)(0, 0);
}

double Model::stop_head(const Vector& hidden) const {
    const double logit = stop_logit(hidden);
    // Symmetric form keeps the result strictly inside (0, 1) for moderate logits.
    if (logit >= 0) return 1.0 / (1.0 + std::exp(-logit));
    const double e = std::exp(logit);
    return e / (1.0 + e);
}

Vector sample_latent(const LatentParams& params, Rng& rng, int samples, std::optional<double> sigma_override) {
    if (samples < 1) {
        throw Error(ErrorCode::InvalidSampleCount, "sample count must be >= 1, got " + std::to_string(samples));
    }
    if (params.mu.size() != params.log_var.size()) {
        throw Error(ErrorCode::ShapeError, "latent mu and log_var widths differ");
    }
    const Eigen::Index dim = params.mu.size();
    Vector sigma = sigma_override ? Vector::Constant(dim, *sigma_override)
                                  : Vector((0.5 * params.log_var.array()).exp());
    Vector best_eps(dim);
    double best_sq = INFINITY;
    Vector eps(dim);
    for (int k = 0; k < samples; ++k) {
        for (Eigen::Index i = 0; i < dim; ++i) eps(i) = rng.normal();
        // log N(z; mu, sigma^2) = -0.5 |eps|^2 - sum(log sigma) - const, so
        // the densest candidate is the one with the smallest |eps|^2.
        const double sq = eps.squaredNorm();
        if (sq < best_sq) {
            best_sq = sq;
            best_eps = eps;
        }
    }
    return params.mu + sigma.cwiseProduct(best_eps);
}

Model widen_reduction(const Model& base, std::uint32_t r) {
    if (base.config().reduction != 1) {
        throw Error(ErrorCode::ConfigMismatch, "widening needs a reduction-1 model");
    }
    ModelConfig cfg = base.config();
    cfg.reduction = r;
    Model out(cfg);
    const Eigen::Index n_mels = cfg.n_mels;
    for (std::size_t i = 0; i < out.params().size(); ++i) {
        const Param& src = base.params()[i];
        Matrix& dst = out.params()[i].value;
        if (src.name == "prenet.fc1.w") {
            dst.setZero();
            dst.bottomRows(n_mels) = src.value;
        } else if (src.name == "bos_frames" || src.name == "postnet.fc2.w" || src.name == "postnet.fc2.b") {
            for (std::uint32_t j = 0; j < r; ++j) dst.middleCols(j * n_mels, n_mels) = src.value;
        } else {
            dst = src.value;
        }
    }
    return out;
}

}  // namespace melweave
