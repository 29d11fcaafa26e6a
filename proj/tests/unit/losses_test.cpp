#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

#include "loraseg/gradcheck.hpp"
#include "loraseg/losses.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace loraseg {
namespace {

using TD = Tensor<double>;

TD tensor_of(std::vector<double> v, Shape shape) { return TD(std::move(shape), std::move(v)); }

using Case = oracle::LossCase;
Case random_case(std::uint64_t seed) { return oracle::random_loss_case(seed); }

TEST(Bce, UniformHalfIsLn2) {
    const TD p({4, 4}, 0.5);
    const TD t = tensor_of({1, 0, 1, 1, 0, 0, 0, 1, 1, 0, 1, 0, 0, 0, 0, 1}, {4, 4});
    EXPECT_NEAR(bce_loss(p, t).item(), std::log(2.0), 1e-15);
}

TEST(Bce, PerfectPredictionHitsClampFloor) {
    const TD t = tensor_of({1, 0, 0, 1}, {2, 2});
    EXPECT_LE(bce_loss(t, t).item(), -std::log(1 - 1e-7) + 1e-15);
}

TEST(Bce, TwoPixelExample) {
    EXPECT_NEAR(bce_loss(tensor_of({0.9, 0.1}, {1, 2}), tensor_of({1, 0}, {1, 2})).item(), -std::log(0.9), 1e-15);
    EXPECT_NEAR(-std::log(0.9), 0.10536, 1e-5);
}

TEST(Bce, ShapeMismatchThrows) { EXPECT_THROW(bce_loss(TD({2, 2}, 0.5), TD({4}, 0.0)), ShapeError); }

TEST(SoftDice, PerfectOverlapIsNearZero) {
    const TD t = tensor_of({1, 0, 1, 1}, {2, 2});
    EXPECT_LT(soft_dice_loss(t, t).item(), 1e-5);
}

TEST(SoftDice, EmptyEmptyIsZero) {
    EXPECT_EQ(soft_dice_loss(TD({4, 4}, 0.0), TD({4, 4}, 0.0)).item(), 0.0);
    EXPECT_EQ(focal_tversky_loss(TD({4, 4}, 0.0), TD({4, 4}, 0.0)).item(), 0.0);
}

TEST(SoftDice, HalfOverlapIsOneHalf) {
    const double loss = soft_dice_loss(TD({2, 2}, 0.5), tensor_of({1, 1, 0, 0}, {2, 2})).item();
    EXPECT_DOUBLE_EQ(loss, 1 - (2.0 + 1e-5) / (4.0 + 1e-5));
    EXPECT_NEAR(loss, 0.5, 1e-5);
}

TEST(SoftDice, SymmetricForBinaryInputs) {
    for (std::uint64_t s = 0; s < 20; ++s) {
        Case c = random_case(s);
        for (auto &v : c.p) v = v >= 0.5 ? 1.0 : 0.0;
        const TD p = tensor_of(c.p, {8, 8}), t = tensor_of(c.t, {8, 8});
        EXPECT_NEAR(soft_dice_loss(p, t).item(), soft_dice_loss(t, p).item(), 1e-12);
    }
}

TEST(FocalTversky, TwoPixelWorkedExample) {
    const double loss = focal_tversky_loss(TD({1, 2}, 0.5), tensor_of({1, 0}, {1, 2})).item();
    const double ti = (0.5 + 1e-5) / (0.5 + 0.7 * 0.5 + 0.3 * 0.5 + 1e-5);
    EXPECT_DOUBLE_EQ(loss, std::pow(1 - ti, 4.0 / 3.0));
    EXPECT_NEAR(loss, 0.39685, 1e-5);
}

TEST(FocalTversky, PerfectAndTotalMiss) {
    const TD t = tensor_of({1, 0, 1, 0, 0, 1}, {2, 3});
    EXPECT_LT(focal_tversky_loss(t, t).item(), 1e-4);
    const TD miss = tensor_of({0, 1, 0, 1, 1, 0}, {2, 3});
    EXPECT_NEAR(focal_tversky_loss(miss, t).item(), 1.0, 1e-4);
}

TEST(TverskyParams, Invariants) {
    TverskyParams p;
    p.alpha = 0.6;
    EXPECT_THROW(p.validate(), std::invalid_argument);
    p.alpha = 0.7;
    p.gamma = 0;
    EXPECT_THROW(p.validate(), std::invalid_argument);
}

TEST(Composite, DegenerateWeightsReproduceSingleTerms) {
    for (std::uint64_t s = 0; s < 20; ++s) {
        const Case c = random_case(s);
        const TD p = tensor_of(c.p, {8, 8}), t = tensor_of(c.t, {8, 8});
        EXPECT_EQ(composite_loss(p, t, {1, 0, 0}).total.item(), bce_loss(p, t).item());
        EXPECT_EQ(composite_loss(p, t, {0, 1, 0}).total.item(), soft_dice_loss(p, t).item());
        EXPECT_EQ(composite_loss(p, t, {0, 0, 1}).total.item(), focal_tversky_loss(p, t).item());
    }
}

TEST(Composite, DefaultsAreAdditiveAndReportTerms) {
    const TD p({1, 2}, 0.5), t = tensor_of({1, 0}, {1, 2});
    const auto l = composite_loss(p, t);
    const double sum = bce_loss(p, t).item() + soft_dice_loss(p, t).item() + focal_tversky_loss(p, t).item();
    EXPECT_NEAR(l.total.item(), sum, 1e-15);
    EXPECT_DOUBLE_EQ(l.bce, bce_loss(p, t).item());
    EXPECT_DOUBLE_EQ(l.dice, soft_dice_loss(p, t).item());
    EXPECT_DOUBLE_EQ(l.ftl, focal_tversky_loss(p, t).item());
}

TEST(Composite, NegativeWeightThrows) {
    EXPECT_THROW(composite_loss(TD({2, 2}, 0.5), TD({2, 2}, 0.0), {1, -1, 1}), std::invalid_argument);
}

TEST(Oracle, ThousandRandomCasesMatchScalarLoops) {
    double worst = 0;
    for (std::uint64_t s = 0; s < 1000; ++s) {
        const Case c = random_case(s);
        const TD p = tensor_of(c.p, {8, 8}), t = tensor_of(c.t, {8, 8});
        worst = std::max(worst, std::abs(bce_loss(p, t).item() - oracle::bce(c.p, c.t)));
        worst = std::max(worst, std::abs(soft_dice_loss(p, t).item() - oracle::soft_dice(c.p, c.t)));
        worst = std::max(worst, std::abs(focal_tversky_loss(p, t).item() - oracle::focal_tversky(c.p, c.t)));
    }
    EXPECT_LT(worst, 1e-10);
}

TEST(Bounds, AllLossesStayInRange) {
    for (std::uint64_t s = 0; s < 200; ++s) {
        const Case c = random_case(s);
        const TD p = tensor_of(c.p, {8, 8}), t = tensor_of(c.t, {8, 8});
        const auto l = composite_loss(p, t);
        EXPECT_GE(l.bce, 0);
        EXPECT_LE(l.bce, -std::log(1e-7));
        EXPECT_GE(l.dice, 0);
        EXPECT_LE(l.dice, 1);
        EXPECT_GE(l.ftl, 0);
        EXPECT_LE(l.ftl, 1);
        EXPECT_LE(l.total.item(), -std::log(1e-7) + 2);
    }
}

TEST(GradCheck, EveryLossOnRandom8x8IncludingEmptyTargets) {
    for (std::uint64_t s = 0; s < 10; ++s) {
        Case c = random_case(s);
        // Keep probabilities away from the clamp, where the derivative jumps.
        for (auto &v : c.p) v = 0.02 + 0.96 * v;
        const TD p = tensor_of(c.p, {8, 8}), t = tensor_of(c.t, {8, 8});
        const TD zeros({8, 8}, 0.0);
        for (const TD &target : {t, zeros}) {
            EXPECT_LT(gradient_check([&](const TD &x) { return bce_loss(x, target); }, p), 1e-4);
            EXPECT_LT(gradient_check([&](const TD &x) { return soft_dice_loss(x, target); }, p), 1e-4);
            EXPECT_LT(gradient_check([&](const TD &x) { return focal_tversky_loss(x, target); }, p), 1e-4);
            EXPECT_LT(gradient_check([&](const TD &x) { return composite_loss(x, target).total; }, p), 1e-4);
        }
    }
}

} // namespace
} // namespace loraseg
