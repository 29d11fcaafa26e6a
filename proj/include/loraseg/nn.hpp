#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "loraseg/lora.hpp"
#include "loraseg/ops.hpp"
#include "loraseg/tensor.hpp"

// Layer building blocks shared by the encoder and decoder.

namespace loraseg {

template <typename T>
struct NamedParam {
    std::string name;
    Tensor<T> *tensor;
};

template <typename T>
using ParamList = std::vector<NamedParam<T>>;

// Deterministic weight initialisation; draws in double so float and double
// models built from the same seed hold the same values up to rounding.
class ParamInit {
public:
    explicit ParamInit(std::uint64_t seed) : rng_(seed) {}

    template <typename T>
    Tensor<T> uniform(Shape shape, double bound) {
        std::uniform_real_distribution<double> dist(-bound, bound);
        Tensor<T> t(std::move(shape));
        for (auto &v : t.mutable_data()) v = static_cast<T>(dist(rng_));
        return t;
    }

    template <typename T>
    Tensor<T> normal(Shape shape, double stddev) {
        std::normal_distribution<double> dist(0.0, stddev);
        Tensor<T> t(std::move(shape));
        for (auto &v : t.mutable_data()) v = static_cast<T>(dist(rng_));
        return t;
    }

private:
    std::mt19937_64 rng_;
};

template <typename T>
Tensor<T> trainable(Tensor<T> t) {
    t.set_requires_grad(true);
    return t;
}

// y = x W^T + b with an optional low-rank adapter slot.
template <typename T>
class Linear {
public:
    Linear() = default;
    Linear(int in_features, int out_features, ParamInit &init) {
        const double bound = 1.0 / std::sqrt(double(in_features));
        weight = trainable(init.uniform<T>({out_features, in_features}, bound));
        bias = trainable(init.uniform<T>({out_features}, bound));
    }

    Tensor<T> weight;
    Tensor<T> bias;

    int in_features() const { return static_cast<int>(weight.dim(1)); }
    int out_features() const { return static_cast<int>(weight.dim(0)); }

    Tensor<T> forward(const Tensor<T> &x) const {
        if (adapter_) return lora_forward(*adapter_, x, weight, bias);
        return add_bias(matmul_nt(x, weight), bias);
    }

    bool has_adapter() const { return adapter_.has_value(); }
    LoraAdapter<T> &adapter() { return adapter_.value(); }
    const LoraAdapter<T> &adapter() const { return adapter_.value(); }

    void attach(LoraAdapter<T> adapter) {
        if (adapter_) throw std::logic_error("linear layer already carries an adapter");
        if (adapter.d_in() != in_features() || adapter.d_out() != out_features())
            throw ShapeError("adapter [" + std::to_string(adapter.d_out()) + "x" + std::to_string(adapter.d_in()) +
                             "] does not fit weight " + shape_str(weight.shape()));
        adapter_.emplace(std::move(adapter));
    }

    // Folds the adapter into the weight and detaches it.
    void merge_adapter() {
        if (!adapter_) throw std::logic_error("merge: no adapter attached (already merged or never injected)");
        const bool grad = weight.requires_grad();
        weight = merge(*adapter_, weight);
        weight.set_requires_grad(grad);
        adapter_.reset();
    }

    void detach() { adapter_.reset(); }

    void collect(const std::string &prefix, ParamList<T> &out) {
        out.push_back({prefix + ".weight", &weight});
        out.push_back({prefix + ".bias", &bias});
        if (adapter_) {
            out.push_back({prefix + ".lora_A", &adapter_->a()});
            out.push_back({prefix + ".lora_B", &adapter_->b()});
        }
    }

private:
    std::optional<LoraAdapter<T>> adapter_;
};

template <typename T>
class LayerNorm {
public:
    LayerNorm() = default;
    explicit LayerNorm(int dim, T eps = T(1e-6)) : gamma(trainable(Tensor<T>({dim}, T(1)))),
                                                  beta(trainable(Tensor<T>({dim}, T(0)))), eps_(eps) {}

    Tensor<T> gamma;
    Tensor<T> beta;

    Tensor<T> forward(const Tensor<T> &x) const { return layer_norm(x, gamma, beta, eps_); }

    // x[C, H, W] normalised over C at every pixel.
    Tensor<T> forward_channels_first(const Tensor<T> &x) const {
        return permute(forward(permute(x, {1, 2, 0})), {2, 0, 1});
    }

    void collect(const std::string &prefix, ParamList<T> &out) {
        out.push_back({prefix + ".gamma", &gamma});
        out.push_back({prefix + ".beta", &beta});
    }

private:
    T eps_ = T(1e-6);
};

template <typename T>
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding, ParamInit &init)
        : stride_(stride), padding_(padding) {
        const double bound = 1.0 / std::sqrt(double(in_channels) * kernel * kernel);
        weight = trainable(init.uniform<T>({out_channels, in_channels, kernel, kernel}, bound));
        bias = trainable(init.uniform<T>({out_channels}, bound));
    }

    Tensor<T> weight;
    Tensor<T> bias;

    Tensor<T> forward(const Tensor<T> &x) const { return conv2d(x, weight, bias, stride_, padding_); }

    void collect(const std::string &prefix, ParamList<T> &out) {
        out.push_back({prefix + ".weight", &weight});
        out.push_back({prefix + ".bias", &bias});
    }

private:
    int stride_ = 1;
    int padding_ = 0;
};

template <typename T>
class ConvTranspose2d {
public:
    ConvTranspose2d() = default;
    ConvTranspose2d(int in_channels, int out_channels, int kernel, int stride, ParamInit &init) : stride_(stride) {
        const double bound = 1.0 / std::sqrt(double(out_channels) * kernel * kernel);
        weight = trainable(init.uniform<T>({in_channels, out_channels, kernel, kernel}, bound));
        bias = trainable(init.uniform<T>({out_channels}, bound));
    }

    Tensor<T> weight;
    Tensor<T> bias;

    Tensor<T> forward(const Tensor<T> &x) const { return conv_transpose2d(x, weight, bias, stride_); }

    void collect(const std::string &prefix, ParamList<T> &out) {
        out.push_back({prefix + ".weight", &weight});
        out.push_back({prefix + ".bias", &bias});
    }

private:
    int stride_ = 2;
};

// Stack of Linear layers with GELU between them.
template <typename T>
class Mlp {
public:
    Mlp() = default;
    Mlp(const std::vector<int> &dims, ParamInit &init) {
        for (std::size_t i = 0; i + 1 < dims.size(); ++i) layers.emplace_back(dims[i], dims[i + 1], init);
    }

    std::vector<Linear<T>> layers;

    Tensor<T> forward(Tensor<T> x) const {
        for (std::size_t i = 0; i < layers.size(); ++i) {
            x = layers[i].forward(x);
            if (i + 1 < layers.size()) x = gelu(x);
        }
        return x;
    }

    void collect(const std::string &prefix, ParamList<T> &out) {
        for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect(prefix + ".fc" + std::to_string(i), out);
    }
};

// Multi-head scaled dot-product attention with separate q/k/v/out
// projections. Inputs are [B, L, dim]; the projections map dim to
// dim / downsample internally.
template <typename T>
class Attention {
public:
    Attention() = default;
    Attention(int dim, int heads, int downsample, ParamInit &init) : heads_(heads) {
        const int inner = dim / downsample;
        if (inner % heads != 0)
            throw std::invalid_argument("attention inner dim " + std::to_string(inner) + " not divisible by " +
                                        std::to_string(heads) + " heads");
        q = Linear<T>(dim, inner, init);
        k = Linear<T>(dim, inner, init);
        v = Linear<T>(dim, inner, init);
        out = Linear<T>(inner, dim, init);
    }

    Linear<T> q, k, v, out;

    Linear<T> &projection(Projection p) {
        switch (p) {
        case Projection::q: return q;
        case Projection::k: return k;
        case Projection::v: return v;
        case Projection::out: return out;
        }
        throw std::logic_error("unknown projection");
    }

    Tensor<T> forward(const Tensor<T> &xq, const Tensor<T> &xk, const Tensor<T> &xv) const {
        const std::int64_t b = xq.dim(0), lq = xq.dim(1);
        const Tensor<T> qh = split_heads(q.forward(xq));
        const Tensor<T> kh = split_heads(k.forward(xk));
        const Tensor<T> vh = split_heads(v.forward(xv));
        const std::int64_t dh = qh.dim(2);
        Tensor<T> scores = mul_scalar(bmm(qh, kh, true), static_cast<T>(1.0 / std::sqrt(double(dh))));
        Tensor<T> o = bmm(softmax_lastaxis(scores), vh);
        if (heads_ > 1) o = permute(reshape(o, {b, heads_, lq, dh}), {0, 2, 1, 3});
        return out.forward(reshape(o, {b, lq, heads_ * dh}));
    }

    Tensor<T> forward(const Tensor<T> &x) const { return forward(x, x, x); }

    void collect(const std::string &prefix, ParamList<T> &params) {
        q.collect(prefix + ".q", params);
        k.collect(prefix + ".k", params);
        v.collect(prefix + ".v", params);
        out.collect(prefix + ".out", params);
    }

private:
    // [B, L, H*dh] -> [B*H, L, dh]
    Tensor<T> split_heads(const Tensor<T> &x) const {
        const std::int64_t b = x.dim(0), l = x.dim(1), dh = x.dim(2) / heads_;
        if (heads_ == 1) return x;
        return reshape(permute(reshape(x, {b, l, heads_, dh}), {0, 2, 1, 3}), {b * heads_, l, dh});
    }

    std::int64_t heads_ = 1;
};

} // namespace loraseg
