#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "flowtune/tensor.hpp"

namespace flowtune {

// Deterministic random stream. mt19937_64 gives a platform-stable integer
// sequence; uniform/normal mappings are spelled out here instead of using
// std::*_distribution, whose output is implementation-defined.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // [0, 1)
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // inclusive range
    int uniform_int(int lo, int hi) {
        return lo + static_cast<int>(gen_() % static_cast<uint64_t>(hi - lo + 1));
    }

    // Box-Muller; second variate cached.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = static_cast<double>((gen_() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
        double u2 = static_cast<double>(gen_() >> 11) * 0x1.0p-53;
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    Tensor normal_tensor(std::vector<int> shape, double stddev = 1.0) {
        Tensor t = Tensor::zeros(std::move(shape));
        for (auto& v : t.data) v = static_cast<real>(normal() * stddev);
        return t;
    }

    Tensor uniform_tensor(std::vector<int> shape, double lo, double hi) {
        Tensor t = Tensor::zeros(std::move(shape));
        for (auto& v : t.data) v = static_cast<real>(uniform(lo, hi));
        return t;
    }

private:
    std::mt19937_64 gen_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// Derive an independent stream id from (seed, index) pairs, splitmix64 style.
inline uint64_t derive_seed(uint64_t seed, uint64_t index) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace flowtune
