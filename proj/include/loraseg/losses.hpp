#pragma once

#include "loraseg/tensor.hpp"

// Segmentation losses on probabilities pred[H, W] in (0, 1) against a binary
// target of the same shape. All return scalar tensors and are differentiable
// with respect to pred.

namespace loraseg {

inline constexpr double kOverlapEps = 1e-5;
inline constexpr double kProbClamp = 1e-7;

struct TverskyParams {
    double alpha = 0.7; // false-negative weight
    double beta = 0.3;  // false-positive weight
    double gamma = 4.0 / 3.0;

    void validate() const;
};

struct CompositeWeights {
    double bce = 1.0;
    double dice = 1.0;
    double ftl = 1.0;

    void validate() const;
};

template <typename T>
struct LossBreakdown {
    Tensor<T> total;
    double bce = 0;
    double dice = 0;
    double ftl = 0;
};

template <typename T>
Tensor<T> bce_loss(const Tensor<T> &pred, const Tensor<T> &target);

template <typename T>
Tensor<T> soft_dice_loss(const Tensor<T> &pred, const Tensor<T> &target, double eps = kOverlapEps);

template <typename T>
Tensor<T> focal_tversky_loss(const Tensor<T> &pred, const Tensor<T> &target, const TverskyParams &params = {},
                             double eps = kOverlapEps);

// Terms with zero weight are still reported but not added to the graph.
template <typename T>
LossBreakdown<T> composite_loss(const Tensor<T> &pred, const Tensor<T> &target, const CompositeWeights &weights = {},
                                const TverskyParams &params = {});

} // namespace loraseg
