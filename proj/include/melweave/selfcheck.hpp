#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "melweave/gradcheck.hpp"
#include "melweave/model.hpp"

namespace melweave {

struct ScheduleOracleResult {
    std::size_t combinations = 0;
    std::size_t mismatches = 0;
};

// Compares position_of_frame with the index of every MelRef in
// build_interleaved for n, m in [1, max_nm], L in [0, max_l], T in [1, max_t]
// (combinations that overrun the text are skipped).
ScheduleOracleResult schedule_oracle(std::uint32_t max_nm, std::uint32_t max_l, std::uint32_t max_t);

struct CacheEquivalenceResult {
    std::size_t sequences = 0;
    double max_abs_diff = 0.0;
};

// Incremental decode_step against full_forward on models with unit-Gaussian
// weights and random inputs.
CacheEquivalenceResult cache_equivalence(std::size_t sequences, std::uint32_t max_length, std::uint64_t seed);

struct CausalityResult {
    std::size_t trials = 0;
    std::size_t violations = 0;
};

// Each trial mutates an input suffix of full_forward and withholds later
// text from a stream; earlier outputs must stay bit-identical.
CausalityResult causality_trials(std::size_t trials, std::uint64_t seed);

struct KlMonteCarloResult {
    std::size_t draws = 0;
    double max_relative_error = 0.0;
};

KlMonteCarloResult kl_monte_carlo(std::size_t draws, std::size_t samples, std::uint32_t d_latent, std::uint64_t seed);

// Finite-difference check of the full objective (regression, KL, flux, stop)
// through the reparameterized sampler on a small model, with one text
// example and one begin-of-speech example. Every begin-of-speech coordinate
// is included.
GradCheckResult model_grad_check(std::size_t coordinates, std::uint64_t seed);

struct CheckItem {
    std::string name;
    bool passed = false;
    std::string detail;
    double seconds = 0.0;
};

struct CheckOptions {
    bool quick = false;
    ModelConfig model;
    std::uint64_t seed = 1;
};

std::vector<CheckItem> run_checks(const CheckOptions& options);

}  // namespace melweave
