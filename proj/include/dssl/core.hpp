#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace dssl {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A configuration value failed validation. `field()` names the offending key.
class ConfigError : public Error {
public:
    ConfigError(std::string field, const std::string& message)
        : Error(field + ": " + message), field_(std::move(field)) {}
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

/// Shapes or slot layouts that do not line up.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// An embedding with zero L2 norm reached a cosine-based loss.
class ZeroNormError : public Error {
public:
    using Error::Error;
};

/// Seeded random stream used by every stochastic op.
///
/// Built on std::mt19937_64, whose output sequence is fixed by the standard;
/// the conversions to floats and bounded integers are done here rather than by
/// the library distributions, so a seed reproduces the same draws everywhere.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [lo, hi] (inclusive), rejection-sampled.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

    bool bernoulli(double p) { return uniform() < p; }

    /// Seed for a child stream; consumes one draw.
    std::uint64_t fork_seed() { return engine_(); }

private:
    std::mt19937_64 engine_;
};

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Stream seed for one (epoch, sample, slot) cell of a run. Worker count and
/// scheduling never enter the derivation.
constexpr std::uint64_t derive_seed(std::uint64_t run_seed, std::uint64_t epoch,
                                    std::uint64_t sample, std::uint64_t slot) noexcept {
    std::uint64_t h = mix64(run_seed);
    h = mix64(h ^ (epoch * 0xD6E8FEB86659FD93ULL));
    h = mix64(h ^ (sample * 0xA0761D6478BD642FULL));
    return mix64(h ^ (slot * 0xE7037ED1A0B428DBULL));
}

/// Lowercase hex SHA-256 of a byte range.
std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::string_view text);
/// Lowercase hex MD5 of a file's contents.
std::string md5_file_hex(const std::string& path);
std::string sha256_file_hex(const std::string& path);

}  // namespace dssl
