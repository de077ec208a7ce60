#pragma once

#include <cstdint>
#include <cmath>
#include <stdexcept>
#include <string>

namespace semlink {

// File/container format violations (bad magic, truncation, bad dims).
// Carries the byte offset where parsing failed.
class FormatError : public std::runtime_error {
public:
    FormatError(const std::string& what, std::size_t offset)
        : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
          offset_(offset) {}
    std::size_t offset() const { return offset_; }

private:
    std::size_t offset_;
};

// Precondition / API-contract violations (shape mismatch, bad split index, ...).
class ContractError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Wire-protocol violations (oversize frame, unknown type, truncated stream).
class ProtocolError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Deterministic 64-bit generator: seed goes through splitmix64 once, the
// stream is xorshift64*. Documented in the README so other implementations
// can reproduce the exact bit stream.
class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        // splitmix64 seeding; guarantees a nonzero xorshift state
        std::uint64_t z = seed + 0x9E3779B97F4A7C15ull;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        state_ = z ^ (z >> 31);
        if (state_ == 0) state_ = 0x9E3779B97F4A7C15ull;
    }

    std::uint64_t next_u64() {
        std::uint64_t x = state_;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        state_ = x;
        return x * 0x2545F4914F6CDD1Dull;
    }

    // uniform in [0,1), 24 bits of mantissa
    float next_float() {
        return static_cast<float>(next_u64() >> 40) * (1.0f / 16777216.0f);
    }

    // uniform in [0,1), 53 bits
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * (1.0 / 9007199254740992.0);
    }

    float uniform(float lo, float hi) { return lo + (hi - lo) * next_float(); }

    // uniform integer in [0, n)
    std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

    // uniform integer in [lo, hi] inclusive
    std::int64_t range(std::int64_t lo, std::int64_t hi) {
        return lo + static_cast<std::int64_t>(below(static_cast<std::uint64_t>(hi - lo + 1)));
    }

    // standard normal via Box-Muller, one value per call pair
    float gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        float u1 = next_float();
        float u2 = next_float();
        if (u1 < 1e-12f) u1 = 1e-12f;
        float mag = std::sqrt(-2.0f * std::log(u1));
        spare_ = mag * std::sin(6.2831853071795864769f * u2);
        have_spare_ = true;
        return mag * std::cos(6.2831853071795864769f * u2);
    }

private:
    std::uint64_t state_;
    float spare_ = 0.0f;
    bool have_spare_ = false;
};

} // namespace semlink
