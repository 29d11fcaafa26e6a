#pragma once

#include <cstdint>
#include <random>

#include "loraseg/ops.hpp"
#include "loraseg/tensor.hpp"

namespace loraseg::testing {

template <typename T = double>
Tensor<T> random_tensor(Shape shape, std::uint64_t seed, T lo = T(-1), T hi = T(1)) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(lo, hi);
    Tensor<T> t(std::move(shape));
    for (auto &v : t.mutable_data()) v = static_cast<T>(dist(rng));
    return t;
}

// sum(y * r) for a fixed random cotangent r, so gradient checks see a
// non-uniform upstream gradient.
template <typename T>
Tensor<T> probe(const Tensor<T> &y, std::uint64_t seed) {
    return sum(mul(y, random_tensor<T>(y.shape(), seed ^ 0x9e3779b97f4a7c15ULL)));
}

} // namespace loraseg::testing
