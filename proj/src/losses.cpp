#include "loraseg/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "loraseg/ops.hpp"

namespace loraseg {

namespace {

template <typename T>
void check_pair(const Tensor<T> &pred, const Tensor<T> &target, const char *name) {
    if (pred.shape() != target.shape())
        throw ShapeError(std::string(name) + ": prediction " + shape_str(pred.shape()) + " and target " +
                         shape_str(target.shape()) + " differ");
    if (pred.numel() == 0) throw ShapeError(std::string(name) + ": empty input");
}

template <typename T>
Tensor<T> one_minus(const Tensor<T> &x) {
    return add_scalar(neg(x), T(1));
}

} // namespace

void TverskyParams::validate() const {
    if (!(alpha >= 0 && beta >= 0) || std::abs(alpha + beta - 1.0) > 1e-12)
        throw std::invalid_argument("tversky alpha and beta must be non-negative and sum to 1");
    if (!(gamma > 0)) throw std::invalid_argument("tversky gamma must be positive");
}

void CompositeWeights::validate() const {
    if (!(bce >= 0 && dice >= 0 && ftl >= 0)) throw std::invalid_argument("loss weights must be non-negative");
}

template <typename T>
Tensor<T> bce_loss(const Tensor<T> &pred, const Tensor<T> &target) {
    check_pair(pred, target, "bce_loss");
    const Tensor<T> p = clamp(pred, T(kProbClamp), T(1 - kProbClamp));
    const Tensor<T> ll = add(mul(target, log(p)), mul(one_minus(target), log(one_minus(p))));
    return neg(mean(ll));
}

template <typename T>
Tensor<T> soft_dice_loss(const Tensor<T> &pred, const Tensor<T> &target, double eps) {
    check_pair(pred, target, "soft_dice_loss");
    const T e = static_cast<T>(eps);
    const Tensor<T> num = add_scalar(mul_scalar(sum(mul(pred, target)), T(2)), e);
    const Tensor<T> den = add_scalar(add(sum(pred), sum(target)), e);
    return one_minus(div(num, den));
}

template <typename T>
Tensor<T> focal_tversky_loss(const Tensor<T> &pred, const Tensor<T> &target, const TverskyParams &params,
                             double eps) {
    check_pair(pred, target, "focal_tversky_loss");
    params.validate();
    const T e = static_cast<T>(eps);
    const Tensor<T> tp = sum(mul(pred, target));
    const Tensor<T> fn = sum(mul(one_minus(pred), target));
    const Tensor<T> fp = sum(mul(pred, one_minus(target)));
    const Tensor<T> num = add_scalar(tp, e);
    const Tensor<T> den = add_scalar(
        add(add(tp, mul_scalar(fn, static_cast<T>(params.alpha))), mul_scalar(fp, static_cast<T>(params.beta))), e);
    // The ratio can exceed 1 by an ulp; the clamp keeps pow's base non-negative.
    const Tensor<T> miss = clamp(one_minus(div(num, den)), T(0), T(1));
    return pow_scalar(miss, static_cast<T>(params.gamma));
}

template <typename T>
LossBreakdown<T> composite_loss(const Tensor<T> &pred, const Tensor<T> &target, const CompositeWeights &weights,
                                const TverskyParams &params) {
    weights.validate();
    const Tensor<T> b = bce_loss(pred, target);
    const Tensor<T> d = soft_dice_loss(pred, target);
    const Tensor<T> f = focal_tversky_loss(pred, target, params);
    LossBreakdown<T> out;
    out.bce = b.item();
    out.dice = d.item();
    out.ftl = f.item();
    std::vector<Tensor<T>> terms;
    if (weights.bce != 0) terms.push_back(weights.bce == 1 ? b : mul_scalar(b, static_cast<T>(weights.bce)));
    if (weights.dice != 0) terms.push_back(weights.dice == 1 ? d : mul_scalar(d, static_cast<T>(weights.dice)));
    if (weights.ftl != 0) terms.push_back(weights.ftl == 1 ? f : mul_scalar(f, static_cast<T>(weights.ftl)));
    if (terms.empty()) {
        out.total = Tensor<T>::scalar(T(0));
        return out;
    }
    out.total = terms[0];
    for (std::size_t i = 1; i < terms.size(); ++i) out.total = add(out.total, terms[i]);
    return out;
}

#define LORASEG_INSTANTIATE_LOSSES(T)                                                                      \
    template Tensor<T> bce_loss(const Tensor<T> &, const Tensor<T> &);                                     \
    template Tensor<T> soft_dice_loss(const Tensor<T> &, const Tensor<T> &, double);                       \
    template Tensor<T> focal_tversky_loss(const Tensor<T> &, const Tensor<T> &, const TverskyParams &,     \
                                          double);                                                         \
    template LossBreakdown<T> composite_loss(const Tensor<T> &, const Tensor<T> &, const CompositeWeights &, \
                                             const TverskyParams &);

LORASEG_INSTANTIATE_LOSSES(float)
LORASEG_INSTANTIATE_LOSSES(double)

} // namespace loraseg
