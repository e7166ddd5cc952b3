#pragma once

#include <cmath>
#include <cstdint>

#include "revsnn/tensor.hpp"

namespace revsnn {

// splitmix64 stream; cheap to seed and fork, reproducible across platforms.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double next_double() { return (next_u64() >> 11) * 0x1.0p-53; }

    float uniform(float lo, float hi) {
        return lo + static_cast<float>(next_double()) * (hi - lo);
    }

    // Integer in [0, n), n > 0.
    int next_index(int n) { return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n)); }

    // Box-Muller; consumes two draws per sample so streams stay aligned.
    float normal() {
        double u1 = next_double();
        double u2 = next_double();
        if (u1 < 1e-300) u1 = 1e-300;
        return static_cast<float>(std::sqrt(-2.0 * std::log(u1)) *
                                  std::cos(2.0 * 3.141592653589793 * u2));
    }

    Rng fork() { return Rng(next_u64()); }

    void fill_uniform(Tensor& t, float lo, float hi) {
        for (float& v : t.data) v = uniform(lo, hi);
    }

    void fill_normal(Tensor& t, float mean, float std) {
        for (float& v : t.data) v = mean + std * normal();
    }

private:
    std::uint64_t state_;
};

}  // namespace revsnn
