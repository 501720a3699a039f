#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "keyex/errors.hpp"

namespace keyex {

// Deterministic random stream. All distributions are derived from the raw
// 64-bit output by hand so that a given seed produces the same values on any
// standard-library implementation.
class Rng {
  public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Box-Muller; the second deviate is cached.
    double normal(double mean = 0.0, double stddev = 1.0) {
        if (has_cached_) {
            has_cached_ = false;
            return mean + stddev * cached_;
        }
        const double u1 = 1.0 - uniform01();  // (0, 1]: keeps log() finite
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * M_PI * u2;
        cached_ = r * std::sin(theta);
        has_cached_ = true;
        return mean + stddev * r * std::cos(theta);
    }

    // Uniform integer in [0, n). Modulo bias is negligible for desk-scale n.
    int64_t uniform_int(int64_t n) {
        if (n <= 0) throw ValidationError("uniform_int: n must be positive");
        return static_cast<int64_t>(next_u64() % static_cast<uint64_t>(n));
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
            std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(uniform_int(i + 1))]);
        }
    }

  private:
    std::mt19937_64 engine_;
    bool has_cached_ = false;
    double cached_ = 0.0;
};

}  // namespace keyex
