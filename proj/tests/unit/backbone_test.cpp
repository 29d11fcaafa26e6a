#include <cmath>
#include <set>
#include <string>

#include <gtest/gtest.h>

#include "loraseg/backbone.hpp"
#include "loraseg/gradcheck.hpp"
#include "loraseg/losses.hpp"
#include "loraseg/ops.hpp"
#include "loraseg/tape.hpp"
#include "test_util.hpp"

namespace loraseg {
namespace {

using testing::random_tensor;

ModelConfig tiny_config(std::uint64_t seed = 1) {
    ModelConfig c;
    c.encoder.stage_dims = {8, 16, 24, 32};
    c.encoder.heads = {1, 2, 2, 4};
    c.encoder.stage_depths = {1, 1, 1, 1};
    c.encoder.window_sizes = {4, 4, 2, 0};
    c.encoder.mlp_ratio = 2;
    c.decoder.token_dim = 32;
    c.decoder.heads = 2;
    c.decoder.mlp_dim = 64;
    c.seed = seed;
    return c;
}

TEST(Encoder, DefaultPyramidShapesAt256) {
    SegmentationModel<float> m;
    const auto f = m.encode_image(random_tensor<float>({3, 256, 256}, 1));
    EXPECT_EQ(f.maps[0].shape(), (Shape{32, 64, 64}));
    EXPECT_EQ(f.maps[1].shape(), (Shape{64, 32, 32}));
    EXPECT_EQ(f.maps[2].shape(), (Shape{128, 16, 16}));
    EXPECT_EQ(f.maps[3].shape(), (Shape{256, 8, 8}));
}

TEST(Encoder, RejectsSidesThatAreNotMultiplesOf32) {
    SegmentationModel<float> m(tiny_config());
    try {
        m.encode_image(Tensor<float>({3, 100, 96}));
        FAIL() << "expected an error";
    } catch (const std::exception &e) {
        EXPECT_NE(std::string(e.what()).find("32"), std::string::npos) << e.what();
    }
}

TEST(Encoder, PaddingPathGivesStrideConsistentShapes) {
    EXPECT_EQ(padded_extent(1000), 1024);
    EXPECT_EQ(padded_extent(1024), 1024);
    EXPECT_EQ(padded_extent(1), 32);
    SegmentationModel<float> m(tiny_config());
    const Tensor<float> y = m.forward(random_tensor<float>({3, 70, 100}, 2), {});
    EXPECT_EQ(y.shape(), (Shape{1, 70, 100}));
}

TEST(Encoder, DoublingImageSizeChangesOnlySpatialDims) {
    SegmentationModel<float> m(tiny_config());
    const auto a = m.encode_image(random_tensor<float>({3, 64, 64}, 3));
    const auto b = m.encode_image(random_tensor<float>({3, 128, 128}, 3));
    for (int i = 0; i < 4; ++i) {
        EXPECT_EQ(a.maps[i].dim(0), b.maps[i].dim(0));
        EXPECT_EQ(2 * a.maps[i].dim(1), b.maps[i].dim(1));
        EXPECT_EQ(2 * a.maps[i].dim(2), b.maps[i].dim(2));
    }
}

TEST(EncoderConfig, RejectsNonIncreasingDims) {
    EncoderConfig c;
    c.stage_dims = {32, 32, 64, 128};
    EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(PromptEncoder, TokenCountRule) {
    SegmentationModel<float> m(tiny_config());
    const ImageSize size{64, 64};
    EXPECT_EQ(m.encode_prompts({}, size).count(), 1);

    PromptSet five_one;
    for (int i = 0; i < 5; ++i) five_one.positive_points.push_back({double(i), double(2 * i)});
    five_one.negative_points.push_back({30, 30});
    // Six points plus the padding token that stands in for a missing box.
    EXPECT_EQ(m.encode_prompts(five_one, size).count(), 7);

    PromptSet box;
    box.boxes.push_back({1, 2, 20, 30});
    EXPECT_EQ(m.encode_prompts(box, size).count(), 2);
}

TEST(PromptEncoder, OutOfBoundsPointNamesItsIndex) {
    SegmentationModel<float> m(tiny_config());
    PromptSet p;
    p.positive_points = {{1, 1}, {2, 2}, {64, 5}};
    try {
        m.encode_prompts(p, {64, 64});
        FAIL() << "expected an error";
    } catch (const std::invalid_argument &e) {
        EXPECT_NE(std::string(e.what()).find("positive point 2"), std::string::npos) << e.what();
    }
}

TEST(PromptEncoder, DegenerateBoxIsRejected) {
    PromptSet p;
    p.boxes.push_back({10, 5, 10, 20});
    EXPECT_THROW(p.validate({64, 64}), std::invalid_argument);
}

TEST(PromptEncoder, PositionalEncodingMatchesClosedForm) {
    const int d = 32, nf = d / 4;
    const double x = 0.3, y = 0.8;
    const auto pe = positional_encoding(x, y, d);
    ASSERT_EQ(pe.size(), std::size_t(d));
    for (int k = 0; k < nf; ++k) {
        const double f = M_PI * std::pow(2.0, 7.0 * k / (nf - 1));
        EXPECT_NEAR(pe[k], std::sin(f * x), 1e-12);
        EXPECT_NEAR(pe[nf + k], std::cos(f * x), 1e-12);
        EXPECT_NEAR(pe[2 * nf + k], std::sin(f * y), 1e-12);
        EXPECT_NEAR(pe[3 * nf + k], std::cos(f * y), 1e-12);
    }
}

TEST(Decoder, OutputShapeAndSigmoidRange) {
    SegmentationModel<float> m(tiny_config());
    PromptSet p;
    p.positive_points.push_back({10, 12});
    const Tensor<float> logits = m.forward(random_tensor<float>({3, 64, 96}, 5), p);
    ASSERT_EQ(logits.shape(), (Shape{1, 64, 96}));
    const Tensor<float> prob = sigmoid(logits);
    for (float v : prob.data()) {
        EXPECT_GT(v, 0.0f);
        EXPECT_LT(v, 1.0f);
    }
}

TEST(Decoder, SameSeedGivesBitIdenticalLogits) {
    const auto img = random_tensor<float>({3, 64, 64}, 6);
    PromptSet p;
    p.boxes.push_back({3, 4, 40, 50});
    const Tensor<float> a = SegmentationModel<float>(tiny_config(9)).forward(img, p);
    const Tensor<float> b = SegmentationModel<float>(tiny_config(9)).forward(img, p);
    ASSERT_EQ(a.numel(), b.numel());
    for (std::size_t i = 0; i < a.numel(); ++i) ASSERT_EQ(a.data()[i], b.data()[i]);
}

TEST(Decoder, PositivePointOrderDoesNotMatter) {
    SegmentationModel<float> m(tiny_config());
    const auto img = random_tensor<float>({3, 64, 64}, 7);
    PromptSet p;
    p.positive_points = {{5, 9}, {40, 12}, {33, 60}, {1, 1}};
    PromptSet q = p;
    std::swap(q.positive_points[0], q.positive_points[3]);
    std::swap(q.positive_points[1], q.positive_points[2]);
    const Tensor<float> a = m.forward(img, p), b = m.forward(img, q);
    for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a.data()[i], b.data()[i], 1e-6);
}

TEST(Model, DefaultParameterCountsAndSites) {
    SegmentationModel<float> m;
    EXPECT_EQ(m.parameter_count(), m.base_parameter_count());
    const auto sites = m.attention_sites();
    const ModelConfig c;
    EXPECT_EQ(int(sites.size()), c.encoder.attention_blocks() + c.decoder.attention_modules());
    int enc = 0;
    for (const auto &s : sites) enc += s.in_encoder;
    EXPECT_EQ(enc, c.encoder.attention_blocks());
}

TEST(Model, ParameterNamesAreUnique) {
    SegmentationModel<float> m(tiny_config());
    std::set<std::string> names;
    for (const auto &p : m.parameters()) EXPECT_TRUE(names.insert(p.name).second) << p.name;
}

TEST(Model, EndToEndGradientCheck) {
    SegmentationModel<double> m(tiny_config(3));
    const Tensor<double> img = random_tensor<double>({3, 64, 64}, 11);
    Tensor<double> target({64, 64});
    for (int y = 20; y < 40; ++y)
        for (int x = 10; x < 50; ++x) target.mutable_data()[y * 64 + x] = 1;
    PromptSet p;
    p.positive_points.push_back({30, 30});
    auto loss = [&](const Tensor<double> &x) {
        const Tensor<double> prob = reshape(sigmoid(m.forward(x, p)), {64, 64});
        return composite_loss(prob, target).total;
    };
    GradCheckOptions opt;
    opt.max_coords = 24;
    opt.seed = 4;
    EXPECT_LT(gradient_check(loss, img, opt), 1e-4);

    // A few weights deep in the encoder and decoder.
    std::vector<Tensor<double>> wrt{m.encoder.stages[2][0].attn.q.weight, m.decoder.final_attn.out.weight,
                                    m.decoder.up1.weight};
    auto loss_w = [&] { return loss(img); };
    EXPECT_LT(gradient_check(loss_w, wrt, opt), 1e-4);
}

} // namespace
} // namespace loraseg
