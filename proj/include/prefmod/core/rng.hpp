#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

#include "prefmod/core/tensor.hpp"

namespace prefmod {

// splitmix64 finalizer; used to derive independent stream seeds from a tuple.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts) noexcept {
    std::uint64_t h = 0x2545F4914F6CDD1Dull;
    for (std::uint64_t p : parts) h = mix64(h ^ mix64(p));
    return h;
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
    // Inclusive range.
    std::int64_t integer(std::int64_t lo, std::int64_t hi) {
        return std::uniform_int_distribution<std::int64_t>(lo, hi)(engine_);
    }
    double normal(double stddev = 1.0) { return std::normal_distribution<double>(0.0, stddev)(engine_); }
    bool bernoulli(double p) { return uniform() < p; }

    Tensor normal_tensor(Shape shape, double stddev = 1.0);
    std::mt19937_64& engine() noexcept { return engine_; }

private:
    std::mt19937_64 engine_;
};

inline Tensor Rng::normal_tensor(Shape shape, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> data(shape_numel(shape));
    for (double& v : data) v = dist(engine_);
    return Tensor(std::move(shape), std::move(data));
}

}  // namespace prefmod
