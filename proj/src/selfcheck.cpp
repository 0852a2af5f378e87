#include "melweave/selfcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <sstream>

#include "melweave/checkpoint.hpp"
#include "melweave/error.hpp"
#include "melweave/loss.hpp"
#include "melweave/melio.hpp"
#include "melweave/rng.hpp"
#include "melweave/runtime.hpp"
#include "melweave/schedule.hpp"
#include "melweave/synthdata.hpp"
#include "melweave/train.hpp"

namespace melweave {

ScheduleOracleResult schedule_oracle(std::uint32_t max_nm, std::uint32_t max_l, std::uint32_t max_t) {
    ScheduleOracleResult result;
    std::vector<std::uint32_t> tokens(max_l);
    for (std::uint32_t i = 0; i < max_l; ++i) tokens[i] = i;
    for (std::uint32_t n = 1; n <= max_nm; ++n) {
        for (std::uint32_t m = 1; m <= max_nm; ++m) {
            const ScheduleConfig cfg{n, m, 1};
            for (std::uint32_t l = 0; l <= max_l; ++l) {
                for (std::uint32_t t = 1; t <= max_t; ++t) {
                    InterleavedSeq seq;
                    try {
                        seq = build_interleaved(std::span(tokens).first(l), t, cfg);
                    } catch (const Error& e) {
                        if (e.code() == ErrorCode::TextOverrun) continue;
                        throw;
                    }
                    ++result.combinations;
                    for (std::size_t i = 0; i < seq.elements.size(); ++i) {
                        const SequenceElement& el = seq.elements[i];
                        if (el.is_mel() && position_of_frame(el.value, l, cfg) != i) {
                            ++result.mismatches;
                        }
                    }
                }
            }
        }
    }
    return result;
}

namespace {

ModelConfig random_model_config(Rng& rng, std::uint32_t max_length) {
    static const std::uint32_t kWidths[] = {8, 16, 32, 64};
    static const std::uint32_t kHeads[] = {1, 2, 4};
    ModelConfig cfg;
    cfg.d_model = kWidths[rng.below(4)];
    cfg.n_heads = kHeads[rng.below(3)];
    cfg.n_layers = static_cast<std::uint32_t>(1 + rng.below(3));
    cfg.d_ff = cfg.d_model * 2;
    cfg.n_mels = 4;
    cfg.d_latent = 4;
    cfg.vocab_size = 8;
    cfg.max_positions = max_length;
    cfg.reduction = 1;
    return cfg;
}

bool same_bits(const Matrix& a, const Matrix& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() &&
           std::equal(a.data(), a.data() + a.size(), b.data(),
                      [](double x, double y) { return std::memcmp(&x, &y, sizeof(double)) == 0; });
}

bool same_frames(std::span<const MelFrame> a, std::span<const MelFrame> b) {
    MelFile fa, fb;
    if (a.empty() || b.empty()) return a.size() == b.size();
    fa.n_mels = fb.n_mels = static_cast<std::uint32_t>(a.front().size());
    fa.frames.assign(a.begin(), a.end());
    fb.frames.assign(b.begin(), b.end());
    return encode_mel(fa) == encode_mel(fb);
}

}  // namespace

CacheEquivalenceResult cache_equivalence(std::size_t sequences, std::uint32_t max_length, std::uint64_t seed) {
    CacheEquivalenceResult result;
    Rng rng(seed);
    for (std::size_t s = 0; s < sequences; ++s) {
        const ModelConfig cfg = random_model_config(rng, max_length);
        Model model(cfg);
        model.randomize(rng.next_u64(), 1.0);
        const auto length = static_cast<Eigen::Index>(1 + rng.below(max_length));
        Matrix inputs(length, cfg.d_model);
        for (Eigen::Index i = 0; i < inputs.size(); ++i) inputs.data()[i] = rng.normal();
        const Matrix full = model.full_forward(inputs);
        DecoderState state = model.new_state();
        for (Eigen::Index p = 0; p < length; ++p) {
            const Vector h = model.decode_step(state, inputs.row(p).transpose());
            result.max_abs_diff = std::max(result.max_abs_diff, (h.transpose() - full.row(p)).cwiseAbs().maxCoeff());
        }
        ++result.sequences;
    }
    return result;
}

CausalityResult causality_trials(std::size_t trials, std::uint64_t seed) {
    CausalityResult result;
    Rng rng(seed);
    for (std::size_t trial = 0; trial < trials; ++trial) {
        ++result.trials;
        bool violated = false;

        // Suffix mutation on the teacher-forcing path.
        ModelConfig cfg = random_model_config(rng, 48);
        const Model dense = Model::initialized(cfg, rng.next_u64());
        const auto length = static_cast<Eigen::Index>(2 + rng.below(46));
        Matrix inputs(length, cfg.d_model);
        for (Eigen::Index i = 0; i < inputs.size(); ++i) inputs.data()[i] = rng.normal();
        const auto cut = static_cast<Eigen::Index>(1 + rng.below(static_cast<std::uint64_t>(length - 1)));
        Matrix mutated = inputs;
        for (Eigen::Index p = cut; p < length; ++p) {
            for (Eigen::Index c = 0; c < mutated.cols(); ++c) mutated(p, c) = 3.0 * rng.normal();
        }
        const Matrix a = dense.full_forward(inputs);
        const Matrix b = dense.full_forward(mutated);
        violated |= !same_bits(a.topRows(cut), b.topRows(cut));

        // Withheld text on the streaming path.
        cfg.reduction = static_cast<std::uint32_t>(1 + rng.below(2));
        cfg.max_positions = 256;
        const Model model = Model::initialized(cfg, rng.next_u64());
        RuntimeConfig rc;
        rc.schedule = {static_cast<std::uint32_t>(1 + rng.below(3)), 4, cfg.reduction};
        rc.min_frames = 4;
        rc.max_frames = 200;
        rc.sample_times = static_cast<int>(1 + rng.below(4));
        rc.seed = rng.next_u64();
        // At least one token stays withheld so the partial stream never sees the end of text.
        const auto text_length = static_cast<std::uint32_t>(2 + rng.below(7));
        std::vector<std::uint32_t> tokens(text_length);
        for (auto& t : tokens) t = static_cast<std::uint32_t>(rng.below(cfg.vocab_size));
        const auto withheld_from = static_cast<std::uint32_t>(1 + rng.below(text_length - 1));

        Stream partial(model, rc);
        for (std::uint32_t k = 0; k < withheld_from; ++k) partial.push_text(tokens[k]);
        std::vector<MelFrame> early;
        for (;;) {
            StepResult r = partial.step();
            if (r.kind == StepResult::Kind::NeedText || r.kind == StepResult::Kind::Stopped) break;
            for (MelFrame& f : r.frames) early.push_back(std::move(f));
        }
        const SynthesisOutput full = synthesize(immediate_events(tokens), rc, model);
        violated |= full.frames.size() < early.size();
        if (!violated) violated |= !same_frames(early, std::span(full.frames).first(early.size()));
        result.violations += violated ? 1 : 0;
    }
    return result;
}

KlMonteCarloResult kl_monte_carlo(std::size_t draws, std::size_t samples, std::uint32_t d_latent, std::uint64_t seed) {
    KlMonteCarloResult result;
    Rng rng(seed);
    const std::uint8_t mask[] = {1};
    for (std::size_t d = 0; d < draws; ++d) {
        LatentParams p;
        p.mu = Vector(d_latent);
        p.log_var = Vector(d_latent);
        for (std::uint32_t j = 0; j < d_latent; ++j) {
            p.mu[j] = rng.normal();
            p.log_var[j] = -2.0 + 3.0 * rng.uniform();
        }
        const double closed = kl_loss(std::span(&p, 1), mask);
        // E_q[log q(z) - log p(z)] with z = mu + sigma * eps.
        const Vector sigma = (0.5 * p.log_var).array().exp();
        double sum = 0.0;
        for (std::size_t s = 0; s < samples; ++s) {
            double term = 0.0;
            for (std::uint32_t j = 0; j < d_latent; ++j) {
                const double eps = rng.normal();
                const double z = p.mu[j] + sigma[j] * eps;
                term += 0.5 * (z * z - eps * eps - p.log_var[j]);
            }
            sum += term;
        }
        const double estimate = sum / static_cast<double>(samples);
        result.max_relative_error = std::max(result.max_relative_error, std::abs(estimate - closed) / std::abs(closed));
        ++result.draws;
    }
    return result;
}

GradCheckResult model_grad_check(std::size_t coordinates, std::uint64_t seed) {
    ModelConfig cfg;
    cfg.d_model = 16;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.d_ff = 32;
    cfg.n_mels = 4;
    cfg.d_latent = 4;
    cfg.vocab_size = 6;
    cfg.max_positions = 32;
    cfg.reduction = 1;
    const ScheduleConfig schedule{1, 2, 1};
    LossOptions options;

    Rng rng(seed);
    const Model base = Model::initialized(cfg, rng.next_u64());
    auto random_frames = [&](Eigen::Index rows) {
        Matrix f(rows, cfg.n_mels);
        for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = rng.normal();
        return f;
    };
    const std::vector<std::uint32_t> text = {1, 3, 5};
    std::vector<Example> examples = {make_example(text, random_frames(5), schedule),
                                     make_example(std::vector<std::uint32_t>{}, random_frames(3), schedule)};
    std::vector<Matrix> noises;
    for (Example& ex : examples) {
        noises.push_back(example_noise(ex, cfg.d_latent, rng));
        // Targets sit a fixed, coordinate-dependent distance from the current
        // prediction so that no L1 or flux term is near its kink.
        ag::Tape tape;
        const auto bound = base.bind(tape, nullptr);
        const auto out = base.build_graph(tape, bound, ex.seq, ex.frames, noises.back());
        const Matrix pred = tape.value(tape.gather_blocks(out.frames, static_cast<int>(cfg.n_mels), ex.pred_blocks));
        for (Eigen::Index t = 0; t < pred.rows(); ++t) {
            for (Eigen::Index b = 0; b < pred.cols(); ++b) {
                ex.target(t, b) = pred(t, b) + 0.05 * (b % 2 == 0 ? 1.0 : -1.0) * static_cast<double>(t + 1);
            }
        }
    }

    std::vector<std::size_t> offsets;
    std::vector<double> flat;
    std::size_t bos_offset = 0, bos_size = 0;
    for (const Param& p : base.params()) {
        offsets.push_back(flat.size());
        if (p.name == "bos_frames") {
            bos_offset = flat.size();
            bos_size = static_cast<std::size_t>(p.value.size());
        }
        flat.insert(flat.end(), p.value.data(), p.value.data() + p.value.size());
    }

    auto objective = [&](const Model& m, GradStore* grads) {
        double total = 0.0;
        for (std::size_t i = 0; i < examples.size(); ++i) {
            total += example_loss(m, examples[i], noises[i], options, grads).total;
        }
        return total;
    };
    GradStore grads = base.zero_grads();
    objective(base, &grads);
    std::vector<double> analytic;
    for (const Matrix& g : grads.grads) analytic.insert(analytic.end(), g.data(), g.data() + g.size());

    Model work = base;
    const ScalarLoss loss = [&](std::span<const double> values) {
        auto& params = work.params();
        for (std::size_t i = 0; i < params.size(); ++i) {
            std::copy_n(values.data() + offsets[i], params[i].value.size(), params[i].value.data());
        }
        return objective(work, nullptr);
    };

    // Every begin-of-speech coordinate, then coordinates spread over all
    // parameters, preferring ones with a non-negligible gradient.
    std::vector<std::size_t> coords;
    for (std::size_t i = 0; i < bos_size; ++i) coords.push_back(bos_offset + i);
    std::vector<std::size_t> live;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        if (std::abs(analytic[i]) > 1e-6 && (i < bos_offset || i >= bos_offset + bos_size)) live.push_back(i);
    }
    Rng pick(derive_seed(seed, 99));
    while (coords.size() < coordinates && !live.empty()) {
        const std::size_t j = static_cast<std::size_t>(pick.below(live.size()));
        coords.push_back(live[j]);
        live[j] = live.back();
        live.pop_back();
    }
    return grad_check(loss, flat, analytic, coords, 1e-5);
}

std::vector<CheckItem> run_checks(const CheckOptions& options) {
    std::vector<CheckItem> items;
    auto timed = [&](const std::string& name, auto&& body) {
        CheckItem item;
        item.name = name;
        const auto start = std::chrono::steady_clock::now();
        try {
            body(item);
        } catch (const std::exception& e) {
            item.passed = false;
            item.detail = std::string("exception: ") + e.what();
        }
        item.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        items.push_back(std::move(item));
    };
    const bool quick = options.quick;
    const std::uint64_t seed = options.seed;

    timed("schedule_oracle", [&](CheckItem& item) {
        const auto r = quick ? schedule_oracle(4, 12, 64) : schedule_oracle(8, 32, 256);
        item.passed = r.mismatches == 0 && r.combinations > 0;
        item.detail = std::to_string(r.combinations) + " combinations, " + std::to_string(r.mismatches) + " mismatches";
    });
    timed("cache_equivalence", [&](CheckItem& item) {
        const auto r = cache_equivalence(quick ? 20 : 100, 64, derive_seed(seed, 1));
        item.passed = r.max_abs_diff < 1e-5;
        std::ostringstream os;
        os << r.sequences << " sequences, max |diff| " << r.max_abs_diff;
        item.detail = os.str();
    });
    timed("causality", [&](CheckItem& item) {
        const auto r = causality_trials(quick ? 20 : 100, derive_seed(seed, 2));
        item.passed = r.violations == 0;
        item.detail = std::to_string(r.trials) + " trials, " + std::to_string(r.violations) + " violations";
    });
    timed("kl_monte_carlo", [&](CheckItem& item) {
        const auto r = quick ? kl_monte_carlo(10, 100000, 16, derive_seed(seed, 3))
                             : kl_monte_carlo(100, 1000000, 16, derive_seed(seed, 3));
        item.passed = r.max_relative_error < 0.02;
        std::ostringstream os;
        os << r.draws << " draws, max relative error " << r.max_relative_error;
        item.detail = os.str();
    });
    timed("grad_check", [&](CheckItem& item) {
        const auto r = model_grad_check(quick ? 60 : 240, derive_seed(seed, 4));
        item.passed = r.max_relative_error < 1e-3;
        std::ostringstream os;
        os << r.checked << " coordinates, max relative error " << r.max_relative_error;
        item.detail = os.str();
    });
    timed("determinism_replay", [&](CheckItem& item) {
        CorpusSpec spec;
        spec.n_utterances = quick ? 10 : 40;
        spec.vocab_size = options.model.vocab_size;
        spec.n_mels = options.model.n_mels;
        const Corpus a = generate_corpus(spec);
        const Corpus b = generate_corpus(spec);
        bool ok = a.train.size() == b.train.size() && a.validation.size() == b.validation.size();
        for (std::size_t i = 0; ok && i < a.train.size(); ++i) {
            ok = a.train[i].tokens == b.train[i].tokens && same_bits(a.train[i].mel, b.train[i].mel);
        }
        const Model model = Model::initialized(options.model, derive_seed(seed, 5));
        const auto bytes = serialize_model(model);
        const bool checkpoint_stable = serialize_model(deserialize_model(bytes)) == bytes;
        RuntimeConfig rc;
        rc.schedule = {1, 4, options.model.reduction};
        rc.max_frames = 64;
        rc.seed = seed;
        rc.sample_times = 4;
        const std::vector<std::uint32_t> tokens = {1, 2, 3};
        const auto s1 = synthesize(immediate_events(tokens), rc, model);
        const auto s2 = synthesize(immediate_events(tokens), rc, model);
        const bool synth_stable = same_frames(s1.frames, s2.frames) && s1.timestamps_ms == s2.timestamps_ms;
        item.passed = ok && checkpoint_stable && synth_stable;
        item.detail = std::string("corpus ") + (ok ? "ok" : "differs") + ", checkpoint " +
                      (checkpoint_stable ? "ok" : "differs") + ", synth " + (synth_stable ? "ok" : "differs");
    });
    timed("checkpoint_corruption", [&](CheckItem& item) {
        const Model model = Model::initialized(options.model, derive_seed(seed, 6));
        auto bytes = serialize_model(model);
        bytes[bytes.size() / 2] ^= 0x40;
        try {
            (void)deserialize_model(bytes);
            item.passed = false;
            item.detail = "corrupted checkpoint loaded";
        } catch (const Error& e) {
            item.passed = e.code() == ErrorCode::ChecksumMismatch;
            item.detail = "rejected with " + std::string(error_name(e.code()));
        }
    });
    return items;
}

}  // namespace melweave
