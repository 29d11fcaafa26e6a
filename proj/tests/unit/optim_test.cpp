#include <cmath>
#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "loraseg/optim.hpp"

namespace loraseg {
namespace {

using TD = Tensor<double>;

TD leaf(std::vector<double> v) {
    const auto n = std::int64_t(v.size());
    TD t({n}, std::move(v));
    t.set_requires_grad(true);
    return t;
}

void set_grad(TD &t, std::vector<double> g) { t.node()->grad = std::move(g); }

TEST(LrAt, WorkedValues) {
    const TrainConfig c;
    EXPECT_EQ(lr_at(0, c), 0.0);
    EXPECT_EQ(lr_at(1000, c), 1e-4);
    EXPECT_NEAR(lr_at(1500, c), 5e-5, 1e-20);
}

TEST(LrAt, RampIsLinearAndContinuous) {
    const TrainConfig c;
    for (int s = 0; s < 1000; ++s) EXPECT_NEAR(lr_at(s, c), 1e-4 * s / 1000.0, 1e-20);
    // Largest jump on the ramp and into the first cosine period is one ramp increment.
    for (int s = 1; s <= 1001; ++s) EXPECT_LE(std::abs(lr_at(s, c) - lr_at(s - 1, c)), 1e-7 * (1 + 1e-9));
}

TEST(LrAt, RestartsReturnToBaseAndPeriodsDouble) {
    const TrainConfig c;
    // Restarts after 1000, 2000 and 4000 post-warm-up steps.
    for (int s : {2000, 4000, 8000}) {
        EXPECT_EQ(lr_at(s, c), 1e-4) << s;
        EXPECT_LT(lr_at(s - 1, c), 1e-9) << s;
    }
    EXPECT_NEAR(lr_at(3000, c), 5e-5, 1e-20);
    EXPECT_NEAR(lr_at(6000, c), 5e-5, 1e-20);
}

TEST(LrAt, MinLrFloorAndRange) {
    TrainConfig c;
    c.min_lr = 1e-5;
    for (int s = 1000; s < 9000; s += 37) {
        EXPECT_GE(lr_at(s, c), 1e-5 - 1e-20);
        EXPECT_LE(lr_at(s, c), 1e-4 + 1e-20);
    }
    EXPECT_THROW(lr_at(-1, c), std::invalid_argument);
}

TEST(TrainConfig, Invariants) {
    TrainConfig c;
    EXPECT_NO_THROW(c.validate());
    c.warmup_steps = c.total_steps;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = TrainConfig{};
    c.beta2 = 1.0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = TrainConfig{};
    c.lr = 0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(AdamW, ZeroGradientIsPureDecay) {
    TD p = leaf({1.5, -2.0, 0.25});
    set_grad(p, {0, 0, 0});
    TrainConfig c;
    AdamW<double> opt({p}, c);
    opt.step(1e-3);
    const double k = 1 - 1e-3 * 3e-4;
    EXPECT_EQ(p.data()[0], 1.5 * k);
    EXPECT_EQ(p.data()[1], -2.0 * k);
    EXPECT_EQ(p.data()[2], 0.25 * k);
}

TEST(AdamW, FirstStepClosedForm) {
    TrainConfig c;
    for (double g : {0.3, -7.0, 1e-3}) {
        TD p = leaf({2.0});
        set_grad(p, {g});
        AdamW<double> opt({p}, c);
        const double lr = 1e-2;
        opt.step(lr);
        // m_hat = g and v_hat = g^2, so the step is lr * g / (|g| + eps).
        const double expect = 2.0 * (1 - lr * c.weight_decay) - lr * g / (std::abs(g) + c.adam_eps);
        EXPECT_NEAR(p.data()[0], expect, 1e-15);
        EXPECT_NEAR(std::abs(p.data()[0] - 2.0 * (1 - lr * c.weight_decay)), lr, 1e-7);
    }
}

TEST(AdamW, IdenticalParametersGetIdenticalUpdates) {
    TD a = leaf({0.7, -0.1}), b = leaf({0.7, -0.1});
    AdamW<double> opt({a, b}, TrainConfig{});
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0, 1);
    for (int s = 0; s < 20; ++s) {
        const std::vector<double> g{n(rng), n(rng)};
        set_grad(a, g);
        set_grad(b, g);
        opt.step(1e-3);
        EXPECT_EQ(a.data()[0], b.data()[0]);
        EXPECT_EQ(a.data()[1], b.data()[1]);
    }
}

// Textbook Adam on one scalar, step by step.
struct ScalarAdam {
    double m = 0, v = 0;
    int t = 0;
    double step(double p, double g, double lr, double b1, double b2, double eps) {
        ++t;
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const double mh = m / (1 - std::pow(b1, t)), vh = v / (1 - std::pow(b2, t));
        return p - lr * mh / (std::sqrt(vh) + eps);
    }
};

TEST(AdamW, WithoutDecayMatchesScalarAdamOver100Steps) {
    TrainConfig c;
    c.weight_decay = 0;
    std::mt19937_64 rng(17);
    std::normal_distribution<double> n(0, 1);
    std::vector<double> init(6);
    for (auto &x : init) x = n(rng);
    TD p = leaf(init);
    AdamW<double> opt({p}, c);
    std::vector<ScalarAdam> ref(6);
    std::vector<double> expect = init;
    double worst = 0;
    for (int s = 0; s < 100; ++s) {
        std::vector<double> g(6);
        // Gradient of a quadratic bowl plus noise, so the path depends on p.
        for (int i = 0; i < 6; ++i) g[i] = 2 * p.data()[i] + 0.1 * n(rng);
        set_grad(p, g);
        const double lr = lr_at(s + 1, c) * 10;
        opt.step(lr);
        for (int i = 0; i < 6; ++i) {
            expect[i] = ref[i].step(expect[i], g[i], lr, c.beta1, c.beta2, c.adam_eps);
            worst = std::max(worst, std::abs(expect[i] - p.data()[i]));
        }
    }
    EXPECT_LT(worst, 1e-12);
    EXPECT_EQ(opt.steps_taken(), 100);
}

TEST(AdamW, MissingGradientCountsAsZero) {
    TD p = leaf({1.0}), q = leaf({1.0});
    set_grad(q, {0.0});
    AdamW<double> opt({p, q}, TrainConfig{});
    opt.step(1e-2);
    EXPECT_EQ(p.data()[0], q.data()[0]);
}

TEST(AdamW, NonFiniteGradientAbortsWithStepAndLeavesParamsUntouched) {
    TD p = leaf({1.0, 2.0});
    AdamW<double> opt({p}, TrainConfig{});
    set_grad(p, {0.1, 0.2});
    opt.step(1e-3);
    opt.step(1e-3);
    const std::vector<double> before(p.data().begin(), p.data().end());
    for (double bad : {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::infinity()}) {
        set_grad(p, {0.1, bad});
        try {
            opt.step(1e-3);
            FAIL() << "expected NonFiniteError";
        } catch (const NonFiniteError &e) {
            EXPECT_EQ(e.step(), 3);
            EXPECT_NE(std::string(e.what()).find("step 3"), std::string::npos) << e.what();
        }
        EXPECT_EQ(p.data()[0], before[0]);
        EXPECT_EQ(p.data()[1], before[1]);
    }
    EXPECT_EQ(opt.steps_taken(), 2);
}

TEST(ClipGradNorm, ScalesOnlyAboveThreshold) {
    TD a = leaf({0, 0}), b = leaf({0});
    set_grad(a, {3, 0});
    set_grad(b, {4});
    std::vector<TD> ps{a, b};
    EXPECT_DOUBLE_EQ(clip_grad_norm(ps, 1.0), 5.0);
    EXPECT_NEAR(a.grad()[0], 0.6, 1e-15);
    EXPECT_NEAR(b.grad()[0], 0.8, 1e-15);
    EXPECT_NEAR(clip_grad_norm(ps, 1.0), 1.0, 1e-15);
    EXPECT_NEAR(a.grad()[0], 0.6, 1e-15);
    set_grad(a, {30, 40});
    EXPECT_DOUBLE_EQ(clip_grad_norm(ps, 0.0), std::sqrt(2500.0 + 0.64));
    EXPECT_EQ(a.grad()[0], 30);
}

} // namespace
} // namespace loraseg
