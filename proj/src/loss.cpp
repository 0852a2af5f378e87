#include "melweave/loss.hpp"

#include <cmath>

#include "melweave/error.hpp"

namespace melweave {

namespace {

void check_frames(const Matrix& pred, const Matrix& target, std::span<const std::uint8_t> mask) {
    if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
        throw Error(ErrorCode::ShapeError, "prediction and target shapes differ");
    }
    if (static_cast<Eigen::Index>(mask.size()) != pred.rows()) {
        throw Error(ErrorCode::ShapeError, "mask length differs from frame count");
    }
}

std::size_t count_mask(std::span<const std::uint8_t> mask) {
    std::size_t n = 0;
    for (std::uint8_t m : mask) n += m ? 1 : 0;
    return n;
}

double sign(double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); }

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

bool pair_valid(std::span<const std::uint8_t> mask, std::size_t i) { return mask[i] && mask[i - 1]; }

}  // namespace

RegLoss reg_loss(const Matrix& pred, const Matrix& target, std::span<const std::uint8_t> mask) {
    check_frames(pred, target, mask);
    const std::size_t frames = count_mask(mask);
    if (frames == 0) {
        throw Error(ErrorCode::EmptyMask, "regression loss over an empty mask");
    }
    RegLoss out;
    for (Eigen::Index t = 0; t < pred.rows(); ++t) {
        if (!mask[static_cast<std::size_t>(t)]) continue;
        for (Eigen::Index b = 0; b < pred.cols(); ++b) {
            const double d = pred(t, b) - target(t, b);
            out.l1 += std::abs(d);
            out.l2 += d * d;
        }
    }
    const double count = static_cast<double>(frames) * static_cast<double>(pred.cols());
    out.l1 /= count;
    out.l2 /= count;
    return out;
}

double kl_loss(const Matrix& mu, const Matrix& log_var, std::span<const std::uint8_t> mask) {
    if (mu.rows() != log_var.rows() || mu.cols() != log_var.cols() ||
        static_cast<Eigen::Index>(mask.size()) != mu.rows()) {
        throw Error(ErrorCode::ShapeError, "KL inputs have mismatched shapes");
    }
    const std::size_t steps = count_mask(mask);
    if (steps == 0) {
        throw Error(ErrorCode::EmptyMask, "KL loss over an empty mask");
    }
    double total = 0.0;
    for (Eigen::Index s = 0; s < mu.rows(); ++s) {
        if (!mask[static_cast<std::size_t>(s)]) continue;
        double step = 0.0;
        for (Eigen::Index d = 0; d < mu.cols(); ++d) {
            const double lv = log_var(s, d);
            step += std::exp(lv) + mu(s, d) * mu(s, d) - 1.0 - lv;
        }
        total += 0.5 * step;
    }
    return total / static_cast<double>(steps);
}

double kl_loss(std::span<const LatentParams> params, std::span<const std::uint8_t> mask) {
    if (params.empty()) {
        throw Error(ErrorCode::EmptyMask, "KL loss over no steps");
    }
    const Eigen::Index dim = params[0].mu.size();
    Matrix mu(static_cast<Eigen::Index>(params.size()), dim);
    Matrix lv(static_cast<Eigen::Index>(params.size()), dim);
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].mu.size() != dim || params[i].log_var.size() != dim) {
            throw Error(ErrorCode::ShapeError, "latent widths differ across steps");
        }
        mu.row(static_cast<Eigen::Index>(i)) = params[i].mu.transpose();
        lv.row(static_cast<Eigen::Index>(i)) = params[i].log_var.transpose();
    }
    return kl_loss(mu, lv, mask);
}

FluxLoss flux_loss(const Matrix& pred, const Matrix& target, std::span<const std::uint8_t> mask,
                   FluxVariant variant) {
    check_frames(pred, target, mask);
    FluxLoss out;
    std::size_t pairs = 0;
    double total = 0.0;
    for (std::size_t i = 1; i < mask.size(); ++i) {
        if (!pair_valid(mask, i)) continue;
        ++pairs;
        const auto t = static_cast<Eigen::Index>(i);
        for (Eigen::Index b = 0; b < pred.cols(); ++b) {
            if (variant == FluxVariant::DeltaMatch) {
                const double dp = pred(t, b) - pred(t - 1, b);
                const double dy = target(t, b) - target(t - 1, b);
                total += std::abs(dp - dy);
            } else {
                total -= std::abs(pred(t, b) - target(t - 1, b));
            }
        }
    }
    if (pairs == 0) {
        return out;
    }
    out.defined = true;
    out.value = total / (static_cast<double>(pairs) * static_cast<double>(pred.cols()));
    return out;
}

double stop_loss(std::span<const double> logits, std::span<const std::uint8_t> labels, double pos_weight) {
    if (logits.size() != labels.size()) {
        throw Error(ErrorCode::ShapeError, "stop logits and labels differ in length");
    }
    if (logits.empty()) return 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        // -log sigmoid(x) = softplus(-x); -log(1 - sigmoid(x)) = softplus(x)
        total += labels[i] ? pos_weight * softplus(-logits[i]) : softplus(logits[i]);
    }
    return total / static_cast<double>(logits.size());
}

double weighted_total(const LossWeights& w, double reg_l1, double reg_l2, double kl, double flux, double stop) {
    return w.alpha * (reg_l1 + reg_l2) + w.lambda * kl + w.beta * flux + w.gamma * stop;
}

LossBreakdown total_loss(const LossInputs& in, const LossOptions& options) {
    LossBreakdown out;
    const RegLoss reg = reg_loss(in.pred, in.target, in.frame_mask);
    out.reg_l1 = reg.l1;
    out.reg_l2 = reg.l2;
    out.kl = kl_loss(in.mu, in.log_var, in.step_mask);
    const FluxLoss flux = flux_loss(in.pred, in.target, in.frame_mask, options.flux);
    out.flux = flux.value;
    out.flux_defined = flux.defined;
    out.stop = stop_loss(in.stop_logits, in.stop_labels, options.stop_pos_weight);
    out.masked_frame_count = count_mask(in.frame_mask);
    out.total = weighted_total(options.weights, out.reg_l1, out.reg_l2, out.kl, out.flux, out.stop);
    return out;
}

LossGradients total_loss_gradients(const LossInputs& in, const LossOptions& options) {
    check_frames(in.pred, in.target, in.frame_mask);
    const LossWeights& w = options.weights;
    LossGradients g;
    g.pred = Matrix::Zero(in.pred.rows(), in.pred.cols());
    g.mu = Matrix::Zero(in.mu.rows(), in.mu.cols());
    g.log_var = Matrix::Zero(in.log_var.rows(), in.log_var.cols());
    g.stop_logits.assign(in.stop_logits.size(), 0.0);

    const std::size_t frames = count_mask(in.frame_mask);
    if (frames == 0) {
        throw Error(ErrorCode::EmptyMask, "regression loss over an empty mask");
    }
    const double elements = static_cast<double>(frames) * static_cast<double>(in.pred.cols());
    for (Eigen::Index t = 0; t < in.pred.rows(); ++t) {
        if (!in.frame_mask[static_cast<std::size_t>(t)]) continue;
        for (Eigen::Index b = 0; b < in.pred.cols(); ++b) {
            const double d = in.pred(t, b) - in.target(t, b);
            g.pred(t, b) += w.alpha * (sign(d) + 2.0 * d) / elements;
        }
    }

    std::size_t pairs = 0;
    for (std::size_t i = 1; i < in.frame_mask.size(); ++i) pairs += pair_valid(in.frame_mask, i) ? 1 : 0;
    if (pairs > 0) {
        const double scale = w.beta / (static_cast<double>(pairs) * static_cast<double>(in.pred.cols()));
        for (std::size_t i = 1; i < in.frame_mask.size(); ++i) {
            if (!pair_valid(in.frame_mask, i)) continue;
            const auto t = static_cast<Eigen::Index>(i);
            for (Eigen::Index b = 0; b < in.pred.cols(); ++b) {
                if (options.flux == FluxVariant::DeltaMatch) {
                    const double e = (in.pred(t, b) - in.pred(t - 1, b)) - (in.target(t, b) - in.target(t - 1, b));
                    g.pred(t, b) += scale * sign(e);
                    g.pred(t - 1, b) -= scale * sign(e);
                } else {
                    g.pred(t, b) -= scale * sign(in.pred(t, b) - in.target(t - 1, b));
                }
            }
        }
    }

    const std::size_t steps = count_mask(in.step_mask);
    if (steps == 0) {
        throw Error(ErrorCode::EmptyMask, "KL loss over an empty mask");
    }
    const double kl_scale = w.lambda / static_cast<double>(steps);
    for (Eigen::Index s = 0; s < in.mu.rows(); ++s) {
        if (!in.step_mask[static_cast<std::size_t>(s)]) continue;
        for (Eigen::Index d = 0; d < in.mu.cols(); ++d) {
            g.mu(s, d) = kl_scale * in.mu(s, d);
            g.log_var(s, d) = kl_scale * 0.5 * (std::exp(in.log_var(s, d)) - 1.0);
        }
    }

    if (!in.stop_logits.empty()) {
        const double stop_scale = w.gamma / static_cast<double>(in.stop_logits.size());
        for (std::size_t i = 0; i < in.stop_logits.size(); ++i) {
            const double s = sigmoid(in.stop_logits[i]);
            g.stop_logits[i] =
                stop_scale * (in.stop_labels[i] ? options.stop_pos_weight * (s - 1.0) : s);
        }
    }
    return g;
}

}  // namespace melweave
