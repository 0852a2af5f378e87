#include <doctest.h>

#include <cmath>
#include <functional>
#include <optional>

#include <boost/multiprecision/cpp_bin_float.hpp>

#include "melweave/error.hpp"
#include "support.hpp"
#include "melweave/loss.hpp"
#include "melweave/rng.hpp"

using namespace melweave;
using melweave::test::code_of;
using melweave::test::temp_dir;

namespace {

Matrix random_matrix(Rng& rng, int rows, int cols) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    return m;
}

LossInputs random_inputs(Rng& rng, int frames, int bins, int steps, int latent) {
    LossInputs in;
    in.pred = random_matrix(rng, frames, bins);
    in.target = random_matrix(rng, frames, bins);
    in.frame_mask.resize(frames);
    for (auto& m : in.frame_mask) m = rng.uniform() < 0.75 ? 1 : 0;
    in.frame_mask[0] = 1;
    in.mu = random_matrix(rng, steps, latent);
    in.log_var = random_matrix(rng, steps, latent);
    in.step_mask.resize(steps);
    for (auto& m : in.step_mask) m = rng.uniform() < 0.7 ? 1 : 0;
    in.step_mask[0] = 1;
    in.stop_logits.resize(steps);
    for (auto& l : in.stop_logits) l = 2 * rng.normal();
    in.stop_labels.assign(steps, 0);
    in.stop_labels.back() = 1;
    return in;
}

}  // namespace

TEST_SUITE("loss") {

TEST_CASE("reg_loss examples") {
    Rng rng(1);
    const Matrix a = random_matrix(rng, 3, 4);
    const std::vector<std::uint8_t> all = {1, 1, 1};
    const RegLoss same = reg_loss(a, a, all);
    CHECK(same.l1 == 0.0);
    CHECK(same.l2 == 0.0);
    const RegLoss off = reg_loss((a.array() + 0.5).matrix(), a, all);
    CHECK(off.l1 == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(off.l2 == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(code_of([&] { reg_loss(a, a, std::vector<std::uint8_t>{0, 0, 0}); }) == ErrorCode::EmptyMask);
    CHECK(code_of([&] { reg_loss(a, a, std::vector<std::uint8_t>{1, 1}); }) == ErrorCode::ShapeError);
}

TEST_CASE("reg_loss against a scalar loop") {
    Rng rng(2);
    for (int trial = 0; trial < 50; ++trial) {
        const Matrix p = random_matrix(rng, 3, 5), y = random_matrix(rng, 3, 5);
        std::vector<std::uint8_t> mask = {1, static_cast<std::uint8_t>(trial % 2), 1};
        double l1 = 0, l2 = 0;
        int count = 0;
        for (int t = 0; t < 3; ++t) {
            if (!mask[t]) continue;
            for (int b = 0; b < 5; ++b) {
                const double d = p(t, b) - y(t, b);
                l1 += d < 0 ? -d : d;
                l2 += d * d;
                ++count;
            }
        }
        const RegLoss r = reg_loss(p, y, mask);
        CHECK(std::abs(r.l1 - l1 / count) < 1e-7);
        CHECK(std::abs(r.l2 - l2 / count) < 1e-7);
    }
}

TEST_CASE("kl_loss examples") {
    const std::vector<std::uint8_t> one = {1};
    CHECK(kl_loss(Matrix::Zero(1, 16), Matrix::Zero(1, 16), one) == 0.0);
    CHECK(kl_loss(Matrix::Ones(1, 16), Matrix::Zero(1, 16), one) == 8.0);
    CHECK(code_of([&] { kl_loss(Matrix::Zero(1, 2), Matrix::Zero(1, 2), std::vector<std::uint8_t>{0}); }) ==
          ErrorCode::EmptyMask);
    LatentParams p{Vector::Ones(16), Vector::Zero(16)};
    CHECK(kl_loss(std::span(&p, 1), one) == 8.0);
}

TEST_CASE("kl_loss against Monte Carlo") {
    Rng rng(3);
    for (int draw = 0; draw < 3; ++draw) {
        Vector mu(16), lv(16);
        for (int j = 0; j < 16; ++j) {
            mu[j] = rng.normal();
            lv[j] = -2.0 + 3.0 * rng.uniform();
        }
        // log q(z) - log p(z) evaluated directly from both densities.
        double sum = 0.0;
        const int samples = 1000000;
        for (int s = 0; s < samples; ++s) {
            double lq = 0, lp = 0;
            for (int j = 0; j < 16; ++j) {
                const double sigma = std::exp(0.5 * lv[j]);
                const double z = mu[j] + sigma * rng.normal();
                const double u = (z - mu[j]) / sigma;
                lq += -0.5 * u * u - std::log(sigma);
                lp += -0.5 * z * z;
            }
            sum += lq - lp;
        }
        const double mc = sum / samples;
        const double closed = kl_loss(Matrix(mu.transpose()), Matrix(lv.transpose()), std::vector<std::uint8_t>{1});
        CHECK(std::abs(mc - closed) / closed < 0.02);
    }
}

TEST_CASE("flux_loss examples") {
    Rng rng(4);
    const Matrix y = random_matrix(rng, 5, 3);
    const std::vector<std::uint8_t> all(5, 1);
    RowVector offset(3);
    offset << 0.3, -1.0, 2.0;
    Matrix shifted = y;
    shifted.rowwise() += offset;
    CHECK(flux_loss(shifted, y, all).value == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(flux_loss(Matrix::Constant(5, 3, 1.0), Matrix::Constant(5, 3, -2.0), all).value == 0.0);

    Matrix ramp = y;
    for (int t = 0; t < 5; ++t) ramp.row(t).array() += 0.1 * t;
    const FluxLoss f = flux_loss(ramp, y, all);
    CHECK(f.defined);
    CHECK(f.value == doctest::Approx(0.1).epsilon(1e-12));

    const FluxLoss none = flux_loss(y, y, std::vector<std::uint8_t>{1, 0, 1, 0, 1});
    CHECK_FALSE(none.defined);
    CHECK(none.value == 0.0);

    CHECK(flux_loss(ramp, y, all, FluxVariant::NegativeSelfDelta).value < 0.0);
}

TEST_CASE("stop_loss examples") {
    const std::vector<double> confident = {-20, -20, 20};
    const std::vector<std::uint8_t> labels = {0, 0, 1};
    CHECK(stop_loss(confident, labels) < 1e-3);
    const std::vector<double> zero = {0.0};
    const std::vector<std::uint8_t> neg = {0};
    CHECK(stop_loss(zero, neg) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("stop_loss against high precision") {
    using big = boost::multiprecision::cpp_bin_float_50;
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> logits(9);
        std::vector<std::uint8_t> labels(9);
        for (int i = 0; i < 9; ++i) {
            logits[i] = 8.0 * rng.normal();
            labels[i] = rng.uniform() < 0.3 ? 1 : 0;
        }
        // Naive definition evaluated with 50 decimal digits.
        big total = 0;
        for (int i = 0; i < 9; ++i) {
            const big x = logits[i];
            const big p = 1 / (1 + exp(-x));
            total += labels[i] ? -100 * log(p) : -log(1 - p);
        }
        const double expect = static_cast<double>(total / 9);
        CHECK(std::abs(stop_loss(logits, labels, 100.0) - expect) < 1e-9 * std::max(1.0, std::abs(expect)));
    }
}

TEST_CASE("total_loss weighted sum") {
    const LossWeights w;
    CHECK(w.alpha == 2.0);
    CHECK(w.lambda == 0.05);
    CHECK(w.beta == 1.0);
    CHECK(w.gamma == 0.5);
    CHECK(weighted_total(w, 0.6, 0.4, 2.0, 0.5, 0.2) == doctest::Approx(2.70).epsilon(1e-15));
    CHECK(weighted_total(w, 0, 0, 0, 0, 0) == 0.0);
    CHECK(weighted_total({0, 0, 0, 0}, 0.6, 0.4, 2.0, 0.5, 0.2) == 0.0);

    Rng rng(6);
    const LossInputs in = random_inputs(rng, 10, 4, 6, 3);
    const LossBreakdown b = total_loss(in, {});
    CHECK(b.total == 2.0 * (b.reg_l1 + b.reg_l2) + 0.05 * b.kl + 1.0 * b.flux + 0.5 * b.stop);
    CHECK(b.reg_l1 >= 0);
    CHECK(b.reg_l2 >= 0);
    CHECK(b.kl >= 0);
    CHECK(b.flux >= 0);
    CHECK(b.stop >= 0);
}

TEST_CASE("losses ignore masked content") {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        LossInputs in = random_inputs(rng, 12, 4, 8, 3);
        const LossBreakdown before = total_loss(in, {});
        for (int t = 0; t < 12; ++t) {
            if (in.frame_mask[t]) continue;
            in.pred.row(t).setConstant(1e3 * rng.normal());
            in.target.row(t).setConstant(-1e3);
        }
        for (int s = 0; s < 8; ++s) {
            if (in.step_mask[s]) continue;
            in.mu.row(s).setConstant(50.0);
            in.log_var.row(s).setConstant(5.0);
        }
        const LossBreakdown after = total_loss(in, {});
        CHECK(after.total == before.total);
        CHECK(after.flux == before.flux);
        CHECK(after.kl == before.kl);
    }
}

TEST_CASE("analytic loss gradients") {
    Rng rng(8);
    for (FluxVariant variant : {FluxVariant::DeltaMatch, FluxVariant::NegativeSelfDelta}) {
        LossOptions options;
        options.flux = variant;
        LossInputs in = random_inputs(rng, 8, 3, 5, 2);
        const LossGradients g = total_loss_gradients(in, options);
        const double h = 1e-7;
        auto fd = [&](double& slot) {
            const double orig = slot;
            slot = orig + h;
            const double plus = total_loss(in, options).total;
            slot = orig - h;
            const double minus = total_loss(in, options).total;
            slot = orig;
            return (plus - minus) / (2 * h);
        };
        for (Eigen::Index i = 0; i < in.pred.size(); ++i) CHECK(g.pred.data()[i] == doctest::Approx(fd(in.pred.data()[i])).epsilon(1e-5));
        for (Eigen::Index i = 0; i < in.mu.size(); ++i) CHECK(g.mu.data()[i] == doctest::Approx(fd(in.mu.data()[i])).epsilon(1e-5));
        for (Eigen::Index i = 0; i < in.log_var.size(); ++i) CHECK(g.log_var.data()[i] == doctest::Approx(fd(in.log_var.data()[i])).epsilon(1e-5));
        for (std::size_t i = 0; i < in.stop_logits.size(); ++i) CHECK(g.stop_logits[i] == doctest::Approx(fd(in.stop_logits[i])).epsilon(1e-5));
    }
}

}
