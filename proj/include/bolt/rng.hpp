#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

namespace bolt {

/// PCG64 (pcg_setseq_128_xsl_rr_64): 128-bit LCG state advanced as
/// state = state * MUL + inc, output = rotr64(high64 ^ low64, state >> 122).
/// Matches the reference pcg64 stream for a given (seed, stream) pair, so
/// runs can be reproduced bit-for-bit from the two integers alone.
class Pcg64 {
public:
    explicit Pcg64(std::uint64_t seed, std::uint64_t stream = 0) {
        inc_ = (static_cast<u128>(stream) << 1u) | 1u;
        state_ = 0u;
        step();
        state_ += seed;
        step();
    }

    std::uint64_t next_u64() {
        step();
        const auto rot = static_cast<unsigned>(state_ >> 122u);
        const auto xored = static_cast<std::uint64_t>(state_ >> 64u) ^
                           static_cast<std::uint64_t>(state_);
        return rotr(xored, rot);
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() {
        return static_cast<double>(next_u64() >> 11u) * 0x1.0p-53;
    }

    /// Standard normal via Box-Muller; draws two uniforms per pair and
    /// caches the second deviate.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - uniform(); // (0, 1], keeps log() finite
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

    /// Unbiased integer in [0, n) by rejection sampling.
    std::uint64_t bounded(std::uint64_t n) {
        const std::uint64_t threshold = (0 - n) % n;
        for (;;) {
            const std::uint64_t x = next_u64();
            if (x >= threshold) return x % n;
        }
    }

    /// Fisher-Yates shuffle, highest index first.
    template <class T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(bounded(i));
            std::swap(items[i - 1], items[j]);
        }
    }

    /// Derived independent generator: child seed is the parent's next output,
    /// child stream is the caller-supplied tag. Advances the parent.
    Pcg64 split(std::uint64_t stream_tag) {
        return Pcg64(next_u64(), stream_tag);
    }

private:
    using u128 = unsigned __int128;

    // Default multiplier of the 128-bit PCG LCG.
    static constexpr u128 kMul =
        (static_cast<u128>(2549297995355413924ULL) << 64u) | 4865540595714422341ULL;

    static std::uint64_t rotr(std::uint64_t v, unsigned rot) {
        return (v >> rot) | (v << ((64u - rot) & 63u));
    }

    void step() { state_ = state_ * kMul + inc_; }

    u128 state_ = 0;
    u128 inc_ = 1;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

/// Matrix of iid standard normals, filled row by row.
inline Eigen::MatrixXd gaussian_matrix(Pcg64& rng, Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j)
            m(i, j) = rng.normal();
    return m;
}

inline Eigen::VectorXd gaussian_vector(Pcg64& rng, Eigen::Index len) {
    Eigen::VectorXd v(len);
    for (Eigen::Index i = 0; i < len; ++i) v(i) = rng.normal();
    return v;
}

} // namespace bolt
