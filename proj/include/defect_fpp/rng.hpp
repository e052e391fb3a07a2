#pragma once

// Deterministic random number streams.
//
// Reproducibility contract: every stochastic routine in this library draws from
// an RngStream constructed as RngStream(seed, stream_id). The generator is
// SplitMix64 with a fixed mixing function, so a (seed, stream_id) pair yields
// the same sequence in every build configuration and on every platform with
// IEEE-754 doubles. Parallel replicas each own the stream whose id equals the
// replica index; results are then independent of scheduling and of --jobs.
//
// The standard <random> engines are portable but the standard distributions
// are not (their algorithms are implementation-defined), which is why the
// uniform and Poisson draws below are spelled out by hand.

#include <cstdint>
#include <cstddef>
#include <span>
#include <vector>

namespace dfpp {

// SplitMix64 finalizer. Used both as the stream advance and as the hash that
// turns a stream id into a starting state.
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

class RngStream {
public:
    RngStream() : RngStream(0, 0) {}

    // Stream derivation: state0 = seed XOR mix64(stream_id XOR salt). Distinct
    // stream ids give statistically independent SplitMix64 sequences for any
    // fixed seed.
    RngStream(std::uint64_t seed, std::uint64_t stream_id)
        : state_(seed ^ mix64(stream_id ^ 0xD1B54A32D192ED03ULL)) {}

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform double in [0, 1), 53 random bits.
    double uniform01() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double a, double b) { return a + (b - a) * uniform01(); }

    // Fills pt with a uniform draw from the axis-aligned box [lo, hi].
    // Coordinates are drawn in axis order; callers rely on that order being
    // part of the reproducibility contract.
    void uniform_in_box(std::span<const double> lo, std::span<const double> hi,
                        std::span<double> pt) {
        for (std::size_t k = 0; k < pt.size(); ++k)
            pt[k] = uniform(lo[k], hi[k]);
    }

    // Exact Poisson sample. Inversion by sequential search for small means,
    // Hormann's PTRS transformed rejection for large means. Both methods are
    // exact (no normal approximation at any mean).
    std::uint64_t poisson(double mean);

private:
    std::uint64_t poisson_inversion(double mean);
    std::uint64_t poisson_ptrs(double mean);

    std::uint64_t state_;
};

} // namespace dfpp
