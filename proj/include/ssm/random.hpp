#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

#include <Eigen/Core>

namespace ssm {

namespace detail {

// SplitMix64 finalizer; used to derive stream keys from (seed, path labels).
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

inline void mulhilo64(std::uint64_t a, std::uint64_t b, std::uint64_t& hi, std::uint64_t& lo) {
    const unsigned __int128 p = static_cast<unsigned __int128>(a) * b;
    hi = static_cast<std::uint64_t>(p >> 64);
    lo = static_cast<std::uint64_t>(p);
}

// Philox4x64-10 block function.
inline std::array<std::uint64_t, 4> philox4x64(std::array<std::uint64_t, 4> ctr,
                                               std::array<std::uint64_t, 2> key) {
    constexpr std::uint64_t kMul0 = 0xD2E7470EE14C6C93ull;
    constexpr std::uint64_t kMul1 = 0xCA5A826395121157ull;
    constexpr std::uint64_t kWeyl0 = 0x9E3779B97F4A7C15ull;
    constexpr std::uint64_t kWeyl1 = 0xBB67AE8584CAA73Bull;
    for (int round = 0; round < 10; ++round) {
        std::uint64_t hi0, lo0, hi1, lo1;
        mulhilo64(kMul0, ctr[0], hi0, lo0);
        mulhilo64(kMul1, ctr[2], hi1, lo1);
        ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
        key[0] += kWeyl0;
        key[1] += kWeyl1;
    }
    return ctr;
}

} // namespace detail

// Counter-based random stream. A stream is identified by a 128-bit key
// derived from the seed and the path of child() labels; draws are a pure
// function of (key, draw index), so streams with distinct paths are
// independent and the draw sequence does not depend on evaluation order or
// thread count. Streams are values: copying one replays its sequence.
class RngStream {
  public:
    explicit RngStream(std::uint64_t seed) {
        key_[0] = detail::mix64(seed ^ 0x243F6A8885A308D3ull);
        key_[1] = detail::mix64(seed + 0x13198A2E03707344ull);
    }

    // Derived stream for the given path label; fresh draw counter.
    [[nodiscard]] RngStream child(std::uint64_t label) const {
        RngStream c = *this;
        c.key_[0] = detail::mix64(key_[0] ^ detail::mix64(label ^ 0xA4093822299F31D0ull));
        c.key_[1] = detail::mix64(key_[1] + detail::mix64(label + 0x082EFA98EC4E6C89ull));
        c.draw_ = 0;
        c.buf_pos_ = 4;
        return c;
    }

    std::uint64_t next_u64() {
        if (buf_pos_ == 4) {
            buf_ = detail::philox4x64({draw_++, 0, 0, 0}, key_);
            buf_pos_ = 0;
        }
        return buf_[buf_pos_++];
    }

    // Uniform on (0, 1); never returns 0 or 1.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53 + 0x1.0p-54;
    }

    double normal() {
        const double u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    Eigen::VectorXd normal_vector(Eigen::Index n) {
        Eigen::VectorXd v(n);
        for (Eigen::Index i = 0; i < n; ++i) v[i] = normal();
        return v;
    }

  private:
    std::array<std::uint64_t, 2> key_{};
    std::array<std::uint64_t, 4> buf_{};
    std::uint64_t draw_ = 0;
    int buf_pos_ = 4;
};

} // namespace ssm
