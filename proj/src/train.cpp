#include "melweave/train.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <thread>

#include <json.hpp>

#include "melweave/bench.hpp"
#include "melweave/checkpoint.hpp"
#include "melweave/error.hpp"

namespace melweave {

Example make_example(std::span<const std::uint32_t> tokens, const Matrix& frames, const ScheduleConfig& schedule) {
    Example ex;
    ex.seq = build_step_sequence(tokens, static_cast<std::uint32_t>(frames.rows()), schedule);
    ex.frames = frames;
    const std::size_t size = ex.seq.elements.size();
    ex.step_mask.assign(size, 0);
    ex.stop_labels.assign(size, 0);
    if (size > 0) ex.stop_labels.back() = 1;
    std::vector<RowVector> rows;
    for (std::size_t p = 0; p + 1 < size; ++p) {
        const StepElement& next = ex.seq.elements[p + 1];
        if (next.kind != StepElement::Kind::Frames) continue;
        ex.step_mask[p] = 1;
        for (std::uint32_t j = 0; j < schedule.r; ++j) {
            ex.pred_blocks.emplace_back(static_cast<int>(p), static_cast<int>(j));
            const bool real = j < next.valid;
            ex.frame_mask.push_back(real ? 1 : 0);
            rows.push_back(real ? RowVector(frames.row(next.first + j)) : RowVector::Zero(frames.cols()));
        }
    }
    ex.target.resize(static_cast<Eigen::Index>(rows.size()), frames.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) ex.target.row(static_cast<Eigen::Index>(i)) = rows[i];
    return ex;
}

Matrix example_noise(const Example& ex, std::uint32_t d_latent, Rng& rng) {
    Matrix noise(static_cast<Eigen::Index>(ex.seq.elements.size()), d_latent);
    for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = rng.normal();
    return noise;
}

namespace {

struct GraphLoss {
    LossInputs inputs;
    Model::GraphOutputs out;
    ag::Var pred;
};

GraphLoss build_loss_inputs(const Model& model, ag::Tape& tape, const std::vector<ag::Var>& bound, const Example& ex,
                            const Matrix& noise) {
    GraphLoss g;
    g.out = model.build_graph(tape, bound, ex.seq, ex.frames, noise);
    g.pred = tape.gather_blocks(g.out.frames, static_cast<int>(model.config().n_mels), ex.pred_blocks);
    LossInputs& in = g.inputs;
    in.pred = tape.value(g.pred);
    in.target = ex.target;
    in.frame_mask = ex.frame_mask;
    in.mu = tape.value(g.out.mu);
    in.log_var = tape.value(g.out.log_var);
    in.step_mask = ex.step_mask;
    const Matrix& logits = tape.value(g.out.stop_logits);
    in.stop_logits.assign(logits.data(), logits.data() + logits.size());
    in.stop_labels = ex.stop_labels;
    return g;
}

}  // namespace

LossBreakdown example_loss(const Model& model, const Example& ex, const Matrix& noise, const LossOptions& options,
                           GradStore* grads) {
    ag::Tape tape;
    const auto bound = model.bind(tape, grads);
    GraphLoss g = build_loss_inputs(model, tape, bound, ex, noise);
    const LossBreakdown breakdown = total_loss(g.inputs, options);
    if (grads == nullptr) return breakdown;
    if (!std::isfinite(breakdown.total)) {
        throw Error(ErrorCode::NonFiniteLoss, "non-finite training objective");
    }
    auto shared = std::make_shared<LossInputs>(std::move(g.inputs));
    const ag::Var root = tape.custom(
        {g.pred, g.out.mu, g.out.log_var, g.out.stop_logits}, Matrix::Constant(1, 1, breakdown.total),
        [shared, options](const Matrix& grad_out) {
            const double s = grad_out(0, 0);
            LossGradients lg = total_loss_gradients(*shared, options);
            Matrix stop = Eigen::Map<const Matrix>(lg.stop_logits.data(), static_cast<Eigen::Index>(lg.stop_logits.size()), 1);
            return std::vector<Matrix>{lg.pred * s, lg.mu * s, lg.log_var * s, stop * s};
        });
    tape.backward(root);
    return breakdown;
}

ValidationMetrics validate(const Model& model, std::span<const Example> set, const LossOptions& options) {
    ValidationMetrics m;
    std::size_t correct = 0, positions = 0;
    std::size_t pos_hit = 0, pos_total = 0, neg_hit = 0, neg_total = 0;
    for (const Example& ex : set) {
        ag::Tape tape;
        const auto bound = model.bind(tape, nullptr);
        const Matrix noise = Matrix::Zero(static_cast<Eigen::Index>(ex.seq.elements.size()), model.config().d_latent);
        const GraphLoss g = build_loss_inputs(model, tape, bound, ex, noise);
        const LossBreakdown b = total_loss(g.inputs, options);
        m.reg += b.reg_l1 + b.reg_l2;
        m.total += b.total;
        for (std::size_t i = 0; i < ex.stop_labels.size(); ++i) {
            const bool predicted = g.inputs.stop_logits[i] >= 0.0;
            const bool label = ex.stop_labels[i] != 0;
            correct += predicted == label ? 1 : 0;
            ++positions;
            if (label) {
                ++pos_total;
                pos_hit += predicted ? 1 : 0;
            } else {
                ++neg_total;
                neg_hit += predicted ? 0 : 1;
            }
        }
        ++m.examples;
    }
    if (m.examples == 0) throw Error(ErrorCode::NoOutput, "empty validation set");
    m.reg /= static_cast<double>(m.examples);
    m.total /= static_cast<double>(m.examples);
    m.stop_accuracy = static_cast<double>(correct) / static_cast<double>(positions);
    const double tpr = pos_total ? static_cast<double>(pos_hit) / static_cast<double>(pos_total) : 1.0;
    const double tnr = neg_total ? static_cast<double>(neg_hit) / static_cast<double>(neg_total) : 1.0;
    m.stop_balanced_accuracy = 0.5 * (tpr + tnr);
    return m;
}

Adam::Adam(const Model& model, const TrainingConfig& cfg) : cfg_(cfg) {
    for (const Param& p : model.params()) {
        m_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
        v_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
    }
}

void Adam::step(Model& model, const GradStore& grads, double lr) {
    ++t_;
    const double b1 = cfg_.adam_beta1, b2 = cfg_.adam_beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    auto& params = model.params();
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Matrix& g = grads.grads[i];
        m_[i] = b1 * m_[i] + (1.0 - b1) * g;
        v_[i] = b2 * v_[i] + (1.0 - b2) * g.cwiseProduct(g);
        params[i].value.array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + cfg_.adam_eps);
    }
    model.snap_to_float();
}

double learning_rate_at(const TrainingConfig& cfg, std::uint32_t step) {
    if (cfg.warmup_steps == 0 || step >= cfg.warmup_steps) return cfg.learning_rate;
    return cfg.learning_rate * static_cast<double>(step + 1) / static_cast<double>(cfg.warmup_steps);
}

namespace {

using json = nlohmann::json;

json breakdown_json(const LossBreakdown& b) {
    return {{"total", b.total}, {"reg_l1", b.reg_l1}, {"reg_l2", b.reg_l2},
            {"kl", b.kl},       {"flux", b.flux},     {"stop", b.stop}};
}

json eval_json(const EvalRecord& e) {
    return {{"type", "eval"},
            {"step", e.step},
            {"val_reg", e.val.reg},
            {"val_total", e.val.total},
            {"stop_accuracy", e.val.stop_accuracy},
            {"stop_balanced_accuracy", e.val.stop_balanced_accuracy},
            {"frame_mse", e.frame_mse},
            {"template_accuracy", e.template_accuracy}};
}

[[noreturn]] void diverged(const TrainOptions& options, std::uint32_t step, const std::string& what,
                           const LossBreakdown* b, const Model& model) {
    if (options.snapshot_dir) {
        json snap = {{"step", step}, {"reason", what}, {"config_hash", options.config_hash}};
        if (b != nullptr) snap["loss"] = breakdown_json(*b);
        json norms = json::object();
        for (const Param& p : model.params()) norms[p.name] = p.value.norm();
        snap["param_norms"] = norms;
        std::filesystem::create_directories(*options.snapshot_dir);
        std::ofstream out(*options.snapshot_dir / "nan_snapshot.json", std::ios::trunc);
        out << snap.dump(2) << "\n";
    }
    throw Error(ErrorCode::NonFiniteLoss, "training diverged at step " + std::to_string(step) + ": " + what);
}

}  // namespace

TrainResult train_model(Model& model, const Corpus& corpus, const TrainOptions& options) {
    const auto start = std::chrono::steady_clock::now();
    const TrainingConfig& tc = options.training;
    if (corpus.train.empty() || corpus.validation.empty()) {
        throw Error(ErrorCode::NoOutput, "training needs non-empty train and validation splits");
    }
    std::vector<Example> train_set, val_set;
    for (const Utterance& u : corpus.train) train_set.push_back(make_example(u.tokens, u.mel, options.schedule));
    for (const Utterance& u : corpus.validation) val_set.push_back(make_example(u.tokens, u.mel, options.schedule));
    const std::size_t eval_count = std::min<std::size_t>(tc.eval_utterances, corpus.validation.size());
    const std::span<const Utterance> eval_set(corpus.validation.data(), eval_count);
    const TemplateBank bank(corpus);

    TrainResult result;
    auto evaluate = [&](std::uint32_t step) {
        EvalRecord rec;
        rec.step = step;
        rec.val = validate(model, val_set, options.loss);
        if (eval_count > 0) {
            const EvalMetrics em = evaluate_reconstruction(model, options.runtime, eval_set, bank, false);
            rec.frame_mse = em.frame_mse_mean;
            rec.template_accuracy = em.template_accuracy;
        }
        if (!std::isfinite(rec.val.total)) diverged(options, step, "non-finite validation loss", nullptr, model);
        result.history.push_back(rec);
        result.last = rec;
        if (result.history.size() == 1 || rec.val.reg < result.best.val.reg) {
            result.best = rec;
            if (options.checkpoint) save_model(*options.checkpoint, model);
        }
        if (options.log) {
            json j = eval_json(rec);
            j["config_hash"] = options.config_hash;
            j["wall_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            *options.log << j.dump() << "\n" << std::flush;
        }
    };

    evaluate(0);
    result.initial_val_reg = result.history.front().val.reg;

    Rng rng(tc.seed);
    Adam adam(model, tc);
    const std::size_t batch = tc.batch_size;
    std::vector<GradStore> per_example(batch, model.zero_grads());
    std::vector<LossBreakdown> losses(batch);
    std::vector<std::size_t> picks(batch);
    std::vector<Matrix> noises(batch);
    const std::uint32_t workers = std::min<std::uint32_t>(tc.workers, static_cast<std::uint32_t>(batch));

    for (std::uint32_t step = 1; step <= tc.max_steps; ++step) {
        for (std::size_t b = 0; b < batch; ++b) {
            picks[b] = static_cast<std::size_t>(rng.below(train_set.size()));
            noises[b] = example_noise(train_set[picks[b]], model.config().d_latent, rng);
            per_example[b].zero();
        }
        std::vector<std::string> failures(batch);
        auto work = [&](std::size_t first, std::size_t stride) {
            for (std::size_t b = first; b < batch; b += stride) {
                try {
                    losses[b] = example_loss(model, train_set[picks[b]], noises[b], options.loss, &per_example[b]);
                } catch (const Error& e) {
                    failures[b] = e.what();
                }
            }
        };
        if (workers <= 1) {
            work(0, 1);
        } else {
            std::vector<std::thread> pool;
            for (std::uint32_t w = 0; w < workers; ++w) pool.emplace_back(work, w, workers);
            for (auto& t : pool) t.join();
        }
        // Ordered reduction keeps the update independent of worker count.
        GradStore total = model.zero_grads();
        LossBreakdown mean;
        for (std::size_t b = 0; b < batch; ++b) {
            if (!failures[b].empty()) diverged(options, step, failures[b], &losses[b], model);
            total.add(per_example[b]);
            mean.total += losses[b].total;
            mean.reg_l1 += losses[b].reg_l1;
            mean.reg_l2 += losses[b].reg_l2;
            mean.kl += losses[b].kl;
            mean.flux += losses[b].flux;
            mean.stop += losses[b].stop;
        }
        const double inv = 1.0 / static_cast<double>(batch);
        total.scale(inv);
        for (double* f : {&mean.total, &mean.reg_l1, &mean.reg_l2, &mean.kl, &mean.flux, &mean.stop}) *f *= inv;
        const double norm = std::sqrt(total.squared_norm());
        if (!std::isfinite(norm) || !std::isfinite(mean.total)) {
            diverged(options, step, "non-finite gradient", &mean, model);
        }
        if (norm > tc.grad_clip) total.scale(tc.grad_clip / norm);
        const double lr = learning_rate_at(tc, step - 1);
        adam.step(model, total, lr);

        if (options.log) {
            json j = breakdown_json(mean);
            j["type"] = "step";
            j["step"] = step;
            j["lr"] = lr;
            j["grad_norm"] = norm;
            *options.log << j.dump() << "\n";
        }
        if (step % tc.eval_interval == 0 || step == tc.max_steps) evaluate(step);
    }
    result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

}  // namespace melweave
