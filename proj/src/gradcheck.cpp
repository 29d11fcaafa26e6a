#include "loraseg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "loraseg/tape.hpp"

namespace loraseg {

namespace {

double eval_scalar(const std::function<Tensor<double>()> &f) {
    const Tensor<double> y = f();
    if (y.numel() != 1) throw ShapeError("gradient_check: f must return a scalar, got " + shape_str(y.shape()));
    return y.item();
}

} // namespace

double gradient_check(const std::function<Tensor<double>()> &f, std::vector<Tensor<double>> wrt,
                      const GradCheckOptions &options) {
    std::vector<bool> saved_flags;
    for (auto &t : wrt) {
        saved_flags.push_back(t.requires_grad());
        t.set_requires_grad(true);
    }

    std::vector<std::vector<double>> analytic;
    {
        Tape<double> tape;
        TapeScope<double> scope(tape);
        const Tensor<double> y = f();
        if (y.numel() != 1) throw ShapeError("gradient_check: f must return a scalar, got " + shape_str(y.shape()));
        for (auto &t : wrt) t.clear_grad();
        if (y.requires_grad()) tape.backward(y);
        for (auto &t : wrt) {
            if (t.has_grad()) analytic.emplace_back(t.grad().begin(), t.grad().end());
            else analytic.emplace_back(t.numel(), 0.0);
        }
    }

    std::mt19937_64 rng(options.seed);
    double worst = 0.0;
    const double h = options.step;
    for (std::size_t k = 0; k < wrt.size(); ++k) {
        auto &t = wrt[k];
        std::vector<std::size_t> coords(t.numel());
        std::iota(coords.begin(), coords.end(), std::size_t{0});
        if (options.max_coords && coords.size() > options.max_coords) {
            std::shuffle(coords.begin(), coords.end(), rng);
            coords.resize(options.max_coords);
        }
        auto values = t.mutable_data();
        for (std::size_t i : coords) {
            const double orig = values[i];
            values[i] = orig + h;
            const double up = eval_scalar(f);
            values[i] = orig - h;
            const double down = eval_scalar(f);
            values[i] = orig;
            const double numeric = (up - down) / (2.0 * h);
            const double a = analytic[k][i];
            worst = std::max(worst, std::abs(a - numeric) / std::max(1.0, std::abs(a)));
        }
    }

    for (std::size_t k = 0; k < wrt.size(); ++k) {
        wrt[k].set_requires_grad(saved_flags[k]);
    }
    return worst;
}

double gradient_check(const std::function<Tensor<double>(const Tensor<double> &)> &f, const Tensor<double> &x,
                      const GradCheckOptions &options) {
    Tensor<double> leaf = x.clone();
    return gradient_check([&] { return f(leaf); }, {leaf}, options);
}

} // namespace loraseg
