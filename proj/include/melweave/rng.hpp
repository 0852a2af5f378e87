#pragma once

#include <cstdint>

namespace melweave {

// SplitMix64: a counter-based generator. The state is a plain counter that
// advances by the golden-ratio increment 0x9E3779B97F4A7C15; each output is
// the counter passed through the finalizer
//   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//   z =  z ^ (z >> 31)
// Uniform doubles take the top 53 bits. Normal deviates use the Box-Muller
// transform and cache the second deviate of each pair.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

    std::uint64_t next_u64();
    // Uniform in [0, 1).
    double uniform();
    // Uniform in (0, 1].
    double uniform_pos();
    double normal();
    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);

    std::uint64_t state() const { return state_; }

    bool operator==(const Rng&) const = default;

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

std::uint64_t mix64(std::uint64_t z);

// Derive an independent stream seed from (seed, index).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

}  // namespace melweave
