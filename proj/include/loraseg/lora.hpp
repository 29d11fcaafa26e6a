#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>

#include "loraseg/ops.hpp"
#include "loraseg/tensor.hpp"

namespace loraseg {

enum class Projection { q, k, v, out };

std::string to_string(Projection p);
Projection projection_from_string(const std::string &name);

struct LoraConfig {
    int rank = 16;
    // Defaults to 2 * rank when unset.
    std::optional<double> alpha;
    bool apply_to_encoder = true;
    bool apply_to_decoder = true;
    std::set<Projection> targets{Projection::q, Projection::k, Projection::v, Projection::out};
    double init_std = 0.02;
    std::uint64_t seed = 0;

    double effective_alpha() const { return alpha.value_or(2.0 * rank); }
    double scale() const { return effective_alpha() / rank; }
    // Throws std::invalid_argument on a violated invariant.
    void validate() const;

    std::string to_text() const;
    static LoraConfig from_text(const std::string &text);
};

// Low-rank update for a frozen linear weight W[d_out, d_in]:
//   y = x W^T + b + (alpha / r) * (x A^T) B^T
// with A[r, d_in] ~ N(0, init_std) and B[d_out, r] = 0 at injection.
template <typename T>
class LoraAdapter {
public:
    LoraAdapter(int d_in, int d_out, int rank, double alpha, double init_std, std::uint64_t seed);
    LoraAdapter(Tensor<T> a, Tensor<T> b, double alpha);

    int rank() const { return static_cast<int>(a_.dim(0)); }
    int d_in() const { return static_cast<int>(a_.dim(1)); }
    int d_out() const { return static_cast<int>(b_.dim(0)); }
    double alpha() const { return alpha_; }
    double scale() const { return alpha_ / rank(); }
    void set_alpha(double alpha) { alpha_ = alpha; }

    Tensor<T> &a() { return a_; }
    Tensor<T> &b() { return b_; }
    const Tensor<T> &a() const { return a_; }
    const Tensor<T> &b() const { return b_; }
    std::size_t parameter_count() const { return a_.numel() + b_.numel(); }

    // scale * B * A, shape [d_out, d_in], accumulated in double.
    Tensor<T> delta_weight() const;

    bool merged() const { return merged_; }
    void mark_merged() { merged_ = true; }

private:
    Tensor<T> a_;
    Tensor<T> b_;
    double alpha_;
    bool merged_ = false;
};

// x[..., d_in] -> [..., d_out]; bias may be undefined.
template <typename T>
Tensor<T> lora_forward(const LoraAdapter<T> &adapter, const Tensor<T> &x, const Tensor<T> &weight,
                       const Tensor<T> &bias);

// Dense W + scale * B * A. Marks the adapter merged; a second merge throws.
template <typename T>
Tensor<T> merge(LoraAdapter<T> &adapter, const Tensor<T> &weight);

} // namespace loraseg
