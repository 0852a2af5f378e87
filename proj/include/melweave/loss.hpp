#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "melweave/autograd.hpp"
#include "melweave/model.hpp"

namespace melweave {

struct LossWeights {
    double alpha = 2.0;    // regression (L1 + L2)
    double lambda = 0.05;  // KL
    double beta = 1.0;     // flux
    double gamma = 0.5;    // stop

    bool operator==(const LossWeights&) const = default;
};

enum class FluxVariant {
    // mean |(p_t - p_{t-1}) - (y_t - y_{t-1})|, bounded and target-anchored.
    DeltaMatch,
    // -mean |p_t - y_{t-1}|, rewards frame-to-frame movement; negative by construction.
    NegativeSelfDelta,
};

struct LossOptions {
    LossWeights weights;
    FluxVariant flux = FluxVariant::DeltaMatch;
    double stop_pos_weight = 100.0;
};

struct RegLoss {
    double l1 = 0.0;
    double l2 = 0.0;
};

struct FluxLoss {
    double value = 0.0;
    // False when fewer than two consecutive masked frames exist.
    bool defined = false;
};

struct LossBreakdown {
    double reg_l1 = 0.0;
    double reg_l2 = 0.0;
    double kl = 0.0;
    double flux = 0.0;
    double stop = 0.0;
    double total = 0.0;
    std::size_t masked_frame_count = 0;
    bool flux_defined = false;
};

// Frame matrices are [frames x n_mels]; mask has one entry per frame row.
// Throws EmptyMask when no row is masked in, ShapeError on mismatched shapes.
RegLoss reg_loss(const Matrix& pred, const Matrix& target, std::span<const std::uint8_t> mask);

// Closed-form KL(N(mu, sigma^2) || N(0, I)) summed over dims, averaged over
// masked rows. mu and log_var are [steps x d_latent].
double kl_loss(const Matrix& mu, const Matrix& log_var, std::span<const std::uint8_t> mask);
double kl_loss(std::span<const LatentParams> params, std::span<const std::uint8_t> mask);

FluxLoss flux_loss(const Matrix& pred, const Matrix& target, std::span<const std::uint8_t> mask,
                   FluxVariant variant = FluxVariant::DeltaMatch);

// Weighted binary cross-entropy on logits, mean over positions.
double stop_loss(std::span<const double> logits, std::span<const std::uint8_t> labels,
                 double pos_weight = 100.0);

// total = alpha * (l1 + l2) + lambda * kl + beta * flux + gamma * stop,
// accumulated left to right.
double weighted_total(const LossWeights& w, double reg_l1, double reg_l2, double kl, double flux, double stop);

struct LossInputs {
    Matrix pred;                          // frames x n_mels
    Matrix target;                        // frames x n_mels
    std::vector<std::uint8_t> frame_mask; // frames
    Matrix mu;                            // steps x d_latent
    Matrix log_var;                       // steps x d_latent
    std::vector<std::uint8_t> step_mask;  // steps predicting a frame
    std::vector<double> stop_logits;      // steps
    std::vector<std::uint8_t> stop_labels;
};

LossBreakdown total_loss(const LossInputs& in, const LossOptions& options);

struct LossGradients {
    Matrix pred;
    Matrix mu;
    Matrix log_var;
    std::vector<double> stop_logits;
};

// Analytic gradient of total_loss(in).total. L1 terms use sign(0) = 0.
LossGradients total_loss_gradients(const LossInputs& in, const LossOptions& options);

}  // namespace melweave
