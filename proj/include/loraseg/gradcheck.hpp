#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "loraseg/tensor.hpp"

namespace loraseg {

struct GradCheckOptions {
    double step = 1e-5;
    // Check at most this many coordinates per tensor (0 = all), chosen by seed.
    std::size_t max_coords = 0;
    std::uint64_t seed = 0;
};

// Max over checked coordinates of |analytic - central difference| / max(1, |analytic|).
// `f` must return a scalar; throws ShapeError otherwise.
double gradient_check(const std::function<Tensor<double>(const Tensor<double> &)> &f, const Tensor<double> &x,
                      const GradCheckOptions &options = {});

// Same check against several leaves that `f` closes over. The leaves are
// perturbed in place and restored; their requires_grad flags are forced on.
double gradient_check(const std::function<Tensor<double>()> &f, std::vector<Tensor<double>> wrt,
                      const GradCheckOptions &options = {});

} // namespace loraseg
