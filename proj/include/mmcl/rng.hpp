#pragma once

// Seeded random utilities. All draws go through explicitly coded
// transforms of std::mt19937_64 output so that results are identical
// across standard libraries and platforms, not just across runs.

#include <cstdint>
#include <cmath>
#include <random>
#include <vector>

namespace mmcl {

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // uniform in [0, 1) with 53 random bits
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller; one value per call, no cached spare (keeps draws
    // independent of call interleaving)
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double two_pi = 6.283185307179586476925286766559;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // unbiased integer in [0, n) via rejection sampling
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) return 0;
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x = engine_();
        while (x >= limit) x = engine_();
        return x % n;
    }

    // Fisher-Yates, coded here instead of std::shuffle so the permutation
    // does not depend on the standard library
    template <class T>
    void shuffle(std::vector<T>& v) {
        if (v.size() < 2) return;
        for (std::size_t i = v.size() - 1; i > 0; --i) {
            const std::size_t j = static_cast<std::size_t>(below(i + 1));
            std::swap(v[i], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace mmcl
