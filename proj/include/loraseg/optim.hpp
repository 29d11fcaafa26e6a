#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "loraseg/nn.hpp"
#include "loraseg/tensor.hpp"

namespace loraseg {

struct TrainConfig {
    double lr = 1e-4;
    double weight_decay = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    int warmup_steps = 1000;
    int total_steps = 2000;
    int batch_size = 4;
    std::uint64_t seed = 0;
    int restart_period = 1000;
    double restart_mult = 2.0;
    double min_lr = 0.0;
    // Global gradient-norm clip; 0 disables it.
    double clip_norm = 1.0;

    void validate() const;
};

// Linear warm-up from 0, then cosine annealing with warm restarts whose
// period starts at restart_period and grows by restart_mult.
double lr_at(int step, const TrainConfig &cfg);

class NonFiniteError : public std::runtime_error {
public:
    NonFiniteError(const std::string &what, long step) : std::runtime_error(what), step_(step) {}
    long step() const { return step_; }

private:
    long step_;
};

// Decoupled-weight-decay Adam over a fixed parameter list.
template <typename T>
class AdamW {
public:
    AdamW(std::vector<Tensor<T>> params, const TrainConfig &cfg);

    // Applies one update with learning rate lr_t using the params' current
    // gradients; params without a gradient are treated as g = 0. Throws
    // NonFiniteError naming the step on NaN or infinite gradients.
    void step(double lr_t);

    long steps_taken() const { return t_; }
    const std::vector<Tensor<T>> &params() const { return params_; }
    const std::vector<std::vector<double>> &first_moment() const { return m_; }
    const std::vector<std::vector<double>> &second_moment() const { return v_; }

private:
    std::vector<Tensor<T>> params_;
    std::vector<std::vector<double>> m_, v_;
    double beta1_, beta2_, eps_, wd_;
    long t_ = 0;
};

// Scales gradients in place so their global L2 norm is at most max_norm.
// Returns the norm before clipping.
template <typename T>
double clip_grad_norm(std::vector<Tensor<T>> &params, double max_norm);

// Every requires_grad tensor of a parameter list, in list order.
template <typename T>
std::vector<Tensor<T>> trainable_tensors(const ParamList<T> &params) {
    std::vector<Tensor<T>> out;
    for (const auto &p : params)
        if (p.tensor->requires_grad()) out.push_back(*p.tensor);
    return out;
}

} // namespace loraseg
