#include "loraseg/optim.hpp"

#include <cmath>
#include <numbers>

namespace loraseg {

void TrainConfig::validate() const {
    if (!(lr > 0)) throw std::invalid_argument("lr must be positive");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1))
        throw std::invalid_argument("adam betas must lie in [0, 1)");
    if (!(adam_eps > 0)) throw std::invalid_argument("adam_eps must be positive");
    if (!(weight_decay >= 0)) throw std::invalid_argument("weight_decay must be non-negative");
    if (warmup_steps < 0 || total_steps < 1 || warmup_steps >= total_steps)
        throw std::invalid_argument("need 0 <= warmup_steps < total_steps");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be positive");
    if (restart_period < 1 || !(restart_mult >= 1))
        throw std::invalid_argument("restart_period must be positive and restart_mult >= 1");
    if (!(min_lr >= 0 && min_lr <= lr)) throw std::invalid_argument("min_lr must lie in [0, lr]");
    if (!(clip_norm >= 0)) throw std::invalid_argument("clip_norm must be non-negative");
}

double lr_at(int step, const TrainConfig &cfg) {
    if (step < 0) throw std::invalid_argument("lr_at: negative step");
    if (step < cfg.warmup_steps) return cfg.lr * step / cfg.warmup_steps;
    double t = step - cfg.warmup_steps;
    double period = cfg.restart_period;
    while (t >= period) {
        t -= period;
        period *= cfg.restart_mult;
    }
    return cfg.min_lr + (cfg.lr - cfg.min_lr) * (1 + std::cos(std::numbers::pi * t / period)) / 2;
}

template <typename T>
AdamW<T>::AdamW(std::vector<Tensor<T>> params, const TrainConfig &cfg)
    : params_(std::move(params)), beta1_(cfg.beta1), beta2_(cfg.beta2), eps_(cfg.adam_eps), wd_(cfg.weight_decay) {
    for (const auto &p : params_) {
        m_.emplace_back(p.numel(), 0.0);
        v_.emplace_back(p.numel(), 0.0);
    }
}

template <typename T>
void AdamW<T>::step(double lr_t) {
    const long t = t_ + 1;
    for (std::size_t k = 0; k < params_.size(); ++k) {
        if (!params_[k].has_grad()) continue;
        for (T g : params_[k].grad())
            if (!std::isfinite(static_cast<double>(g)))
                throw NonFiniteError("non-finite gradient at optimiser step " + std::to_string(t), t);
    }
    const double bc1 = 1 - std::pow(beta1_, double(t));
    const double bc2 = 1 - std::pow(beta2_, double(t));
    const double decay = 1 - lr_t * wd_;
    for (std::size_t k = 0; k < params_.size(); ++k) {
        auto &p = params_[k];
        auto data = p.mutable_data();
        const bool has = p.has_grad();
        const auto grad = p.grad();
        auto &m = m_[k];
        auto &v = v_[k];
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double g = has ? static_cast<double>(grad[i]) : 0.0;
            m[i] = beta1_ * m[i] + (1 - beta1_) * g;
            v[i] = beta2_ * v[i] + (1 - beta2_) * g * g;
            const double mhat = m[i] / bc1, vhat = v[i] / bc2;
            data[i] = static_cast<T>(static_cast<double>(data[i]) * decay - lr_t * mhat / (std::sqrt(vhat) + eps_));
        }
    }
    t_ = t;
}

template <typename T>
double clip_grad_norm(std::vector<Tensor<T>> &params, double max_norm) {
    double sq = 0;
    for (const auto &p : params)
        for (T g : p.grad()) sq += double(g) * double(g);
    const double norm = std::sqrt(sq);
    if (max_norm > 0 && norm > max_norm) {
        const double s = max_norm / norm;
        for (auto &p : params)
            for (T &g : p.mutable_grad()) g = static_cast<T>(g * s);
    }
    return norm;
}

template class AdamW<float>;
template class AdamW<double>;
template double clip_grad_norm(std::vector<Tensor<float>> &, double);
template double clip_grad_norm(std::vector<Tensor<double>> &, double);

} // namespace loraseg
