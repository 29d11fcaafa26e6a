#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

#include "loraseg/tensor.hpp"

// Independent reference implementations: plain loops over the defining
// formulas, sharing no code with the library.

namespace loraseg::oracle {

inline double clamp_prob(double p) { return std::min(std::max(p, 1e-7), 1.0 - 1e-7); }

inline double bce(const std::vector<double> &p, const std::vector<double> &t) {
    double s = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double q = clamp_prob(p[i]);
        s -= t[i] * std::log(q) + (1 - t[i]) * std::log(1 - q);
    }
    return s / double(p.size());
}

inline double soft_dice(const std::vector<double> &p, const std::vector<double> &t) {
    double inter = 0, sp = 0, st = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        inter += p[i] * t[i];
        sp += p[i];
        st += t[i];
    }
    return 1 - (2 * inter + 1e-5) / (sp + st + 1e-5);
}

inline double focal_tversky(const std::vector<double> &p, const std::vector<double> &t, double a = 0.7,
                            double b = 0.3, double g = 4.0 / 3.0) {
    double tp = 0, fn = 0, fp = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        tp += p[i] * t[i];
        fn += (1 - p[i]) * t[i];
        fp += p[i] * (1 - t[i]);
    }
    const double ti = (tp + 1e-5) / (tp + a * fn + b * fp + 1e-5);
    return std::pow(std::max(0.0, 1 - ti), g);
}

struct LossCase {
    std::vector<double> p, t;
};

// Random 8x8 case. Every fifth target is all zeros and every seventh all ones;
// some exact 0s and 1s in p exercise the BCE clamp.
inline LossCase random_loss_case(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0, 1);
    LossCase c{std::vector<double>(64), std::vector<double>(64)};
    const double fg = u(rng);
    for (int i = 0; i < 64; ++i) {
        const double r = u(rng);
        c.p[i] = r < 0.05 ? 0.0 : r > 0.95 ? 1.0 : u(rng);
        c.t[i] = seed % 5 == 0 ? 0.0 : seed % 7 == 0 ? 1.0 : (u(rng) < fg ? 1.0 : 0.0);
    }
    return c;
}

inline double dice(const Tensor<float> &p, const Tensor<float> &t, double thr) {
    double inter = 0, a = 0, b = 0;
    for (std::size_t i = 0; i < p.numel(); ++i) {
        const bool x = p.data()[i] >= thr, y = t.data()[i] >= 0.5f;
        inter += x && y;
        a += x;
        b += y;
    }
    return a + b == 0 ? 1.0 : 2 * inter / (a + b);
}

// Probability that a random positive outranks a random negative, ties count half.
inline double auc(const Tensor<float> &p, const Tensor<float> &t) {
    double wins = 0, pairs = 0;
    for (std::size_t i = 0; i < p.numel(); ++i) {
        if (t.data()[i] < 0.5f) continue;
        for (std::size_t j = 0; j < p.numel(); ++j) {
            if (t.data()[j] >= 0.5f) continue;
            pairs += 1;
            wins += p.data()[i] > p.data()[j] ? 1.0 : p.data()[i] == p.data()[j] ? 0.5 : 0.0;
        }
    }
    return wins / pairs;
}

// Random 16x16 prediction and target. Even seeds put p on a coarse grid so ties occur.
inline std::pair<Tensor<float>, Tensor<float>> random_metric_case(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0, 1);
    Tensor<float> p({16, 16}), t({16, 16});
    const double fg = 0.05 + 0.9 * u(rng);
    const bool coarse = seed % 2 == 0;
    for (std::size_t i = 0; i < 256; ++i) {
        const double v = u(rng);
        p.mutable_data()[i] = coarse ? float(std::floor(v * 10) / 10) : float(v);
        t.mutable_data()[i] = u(rng) < fg ? 1.0f : 0.0f;
    }
    return {p, t};
}

// Closed-form two-sided Student-t p-value for 1, 2 and 4 degrees of freedom.
inline double t_two_sided_p(double t, int dof) {
    const double a = std::abs(t);
    switch (dof) {
    case 1: return 1 - 2 / std::numbers::pi * std::atan(a);
    case 2: return 1 - a / std::sqrt(2 + a * a);
    case 4: {
        const double u = 1 + a * a / 4;
        return 1 - 0.75 * a / std::sqrt(u) * (1 - a * a / (12 * u));
    }
    }
    throw std::logic_error("no closed form for this dof");
}

// 97.5% quantile, closed form for 1 and 2 degrees of freedom.
inline double t_critical_975(int dof) {
    switch (dof) {
    case 1: return std::tan(std::numbers::pi * 0.475);
    case 2: return 0.95 / std::sqrt(2 * 0.975 * 0.025);
    }
    throw std::logic_error("no closed form for this dof");
}

struct PairedReference {
    double mean = 0, se = 0, t = 0;
    int dof = 0;
};

inline PairedReference paired_reference(const std::vector<double> &a, const std::vector<double> &b) {
    const std::size_t n = a.size();
    PairedReference r;
    for (std::size_t i = 0; i < n; ++i) r.mean += a[i] - b[i];
    r.mean /= double(n);
    double ss = 0;
    for (std::size_t i = 0; i < n; ++i) ss += (a[i] - b[i] - r.mean) * (a[i] - b[i] - r.mean);
    r.se = std::sqrt(ss / double(n - 1)) / std::sqrt(double(n));
    r.t = r.mean / r.se;
    r.dof = int(n) - 1;
    return r;
}

// Fixed paired samples with 2, 1, 2 and 4 degrees of freedom.
inline std::vector<std::pair<std::vector<double>, std::vector<double>>> t_test_cases() {
    return {
        {{0.91, 0.85, 0.88}, {0.80, 0.83, 0.70}},
        {{0.7, 0.2}, {0.1, 0.4}},
        {{1.0, 2.5, 0.5}, {1.5, 1.0, 2.0}},
        {{3.1, 2.9, 3.4, 2.2, 3.0}, {2.0, 2.5, 2.4, 2.3, 1.1}},
    };
}

} // namespace loraseg::oracle
