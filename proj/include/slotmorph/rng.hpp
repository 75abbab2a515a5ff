#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace slotmorph {

inline std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Seeded generator. Substreams are derived from (seed, tag...) so that a
// training step or epoch owns an independent, reproducible stream.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(splitmix64(seed)) {}

    static Rng derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0)
    {
        return Rng(splitmix64(splitmix64(seed ^ 0x5851f42d4c957f2dULL) ^ a) ^ splitmix64(b + 0x2545f4914f6cdd1dULL));
    }

    std::uint64_t next() { return engine_(); }

    // Uniform in the open interval (0, 1).
    double uniform_open() { return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform_open(); }

    double normal()
    {
        // Box-Muller keeps the stream identical across standard libraries.
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform_open(), u2 = uniform_open();
        const double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * M_PI * u2);
        has_spare_ = true;
        return r * std::cos(2.0 * M_PI * u2);
    }

    std::size_t below(std::size_t n) { return static_cast<std::size_t>(engine_() % n); }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace slotmorph
