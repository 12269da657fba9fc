#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace bidshade {

// Currency is held in fixed-point milli-units so datasets serialize to
// integers and stay bit-stable. Model features and metrics use double
// currency units.
using Money = std::int64_t;

constexpr double kMoneyScale = 1000.0;

inline double money_units(Money m) { return static_cast<double>(m) / kMoneyScale; }
inline Money to_money(double units) { return static_cast<Money>(std::llround(units * kMoneyScale)); }

// Error taxonomy, mapped to CLI exit codes in one place (cli.cpp).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct TrainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct UsageError : std::logic_error {
    using std::logic_error::logic_error;
};

// ---------------------------------------------------------------------------
// Seeding and hashing

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
    return splitmix64(splitmix64(seed ^ splitmix64(a)) ^ splitmix64(b + 0x517cc1b727220a95ull));
}

inline std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

std::string hex64(std::uint64_t v);

// ---------------------------------------------------------------------------
// Portable RNG: mt19937_64 output is pinned by the standard; the
// distributions below are hand-rolled so streams do not depend on the
// standard library implementation.

class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next() { return eng_(); }

    // [0, 1)
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // [0, n)
    int uniform_int(int n) { return static_cast<int>(uniform() * n); }

    double normal() {
        // Box-Muller without caching; two uniforms per draw keeps the
        // stream position independent of call parity.
        double u1 = 1.0 - uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

    double lognormal(double loc, double scale) { return std::exp(loc + scale * normal()); }

private:
    std::mt19937_64 eng_;
};

// Standard normal CDF, used by the closed-form landscape win rates.
inline double normal_cdf(double z) { return 0.5 * std::erfc(-z * 0.7071067811865475244); }

inline double sigmoid(double z) {
    if (z >= 0.0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    double e = std::exp(z);
    return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

// Numerically stable binary cross-entropy on a logit; grad w.r.t. z is
// sigmoid(z) - y.
inline double bce_with_logit(double z, double y) {
    return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
}

}  // namespace bidshade
