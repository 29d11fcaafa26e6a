#include <cmath>
#include <filesystem>
#include <fstream>
#include <queue>
#include <random>

#include <gtest/gtest.h>

#include "loraseg/data.hpp"

namespace loraseg {
namespace {

namespace fs = std::filesystem;

double foreground(const Tensor<float> &mask) {
    double s = 0;
    for (float v : mask.data()) s += v;
    return s / double(mask.numel());
}

// Number of 4-connected foreground components, by flood fill.
int components(const Tensor<float> &mask) {
    const int h = int(mask.dim(0)), w = int(mask.dim(1));
    const auto m = mask.data();
    std::vector<char> seen(m.size(), 0);
    int count = 0;
    for (int start = 0; start < h * w; ++start) {
        if (m[start] < 0.5f || seen[start]) continue;
        ++count;
        std::queue<int> q;
        q.push(start);
        seen[start] = 1;
        while (!q.empty()) {
            const int i = q.front();
            q.pop();
            const int y = i / w, x = i % w;
            const int nb[4][2] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
            for (const auto &p : nb) {
                if (p[0] < 0 || p[0] >= h || p[1] < 0 || p[1] >= w) continue;
                const int j = p[0] * w + p[1];
                if (m[j] >= 0.5f && !seen[j]) {
                    seen[j] = 1;
                    q.push(j);
                }
            }
        }
    }
    return count;
}

bool binary(const Tensor<float> &mask) {
    for (float v : mask.data())
        if (v != 0.0f && v != 1.0f) return false;
    return true;
}

bool same(const Tensor<float> &a, const Tensor<float> &b) {
    if (a.shape() != b.shape()) return false;
    for (std::size_t i = 0; i < a.numel(); ++i)
        if (a.data()[i] != b.data()[i]) return false;
    return true;
}

SynthConfig synth(Task task, std::uint64_t seed, int size = 128) {
    SynthConfig c;
    c.task = task;
    c.seed = seed;
    c.size = size;
    return c;
}

class TempDir {
public:
    TempDir() {
        static int counter = 0;
        path_ = fs::temp_directory_path() /
                ("loraseg_data_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    const fs::path &path() const { return path_; }

private:
    fs::path path_;
};

TEST(Generator, SameSeedIsBitIdentical) {
    for (Task t : {Task::vessel, Task::disc}) {
        const SegSample a = generate_sample(synth(t, 42));
        const SegSample b = generate_sample(synth(t, 42));
        EXPECT_TRUE(same(a.image, b.image));
        EXPECT_TRUE(same(a.mask, b.mask));
        EXPECT_FALSE(same(a.mask, generate_sample(synth(t, 43)).mask));
    }
}

TEST(Generator, VesselForegroundFractionInRangeOver100Seeds) {
    for (int size : {256, 128}) {
        for (std::uint64_t s = 0; s < 100; ++s) {
            const double f = foreground(generate_sample(synth(Task::vessel, s, size)).mask);
            EXPECT_GE(f, 0.02) << "size " << size << " seed " << s;
            EXPECT_LE(f, 0.15) << "size " << size << " seed " << s;
        }
    }
}

TEST(Generator, DiscIsOneFourConnectedComponent) {
    for (std::uint64_t s = 0; s < 100; ++s)
        EXPECT_EQ(components(generate_sample(synth(Task::disc, s)).mask), 1) << "seed " << s;
}

TEST(Generator, SamplesSatisfyInvariants) {
    for (Task t : {Task::vessel, Task::disc}) {
        const SegSample s = generate_sample(synth(t, 7, 64));
        EXPECT_NO_THROW(s.validate());
        EXPECT_EQ(s.image.shape(), (Shape{3, 64, 64}));
        EXPECT_TRUE(binary(s.mask));
    }
}

TEST(Generator, RejectsBadConfigs) {
    SynthConfig c;
    c.size = 100;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = SynthConfig{};
    c.disc_radius_range = {0.1, 0.5};
    EXPECT_THROW(c.validate(), std::invalid_argument);
    EXPECT_THROW(task_from_string("cup"), std::invalid_argument);
}

TEST(Generator, DatasetMatchesPerSampleDerivedSeeds) {
    SynthConfig base = synth(Task::vessel, 5, 64);
    const auto ds = generate_dataset(base, 4);
    ASSERT_EQ(ds.size(), 4u);
    for (int i = 0; i < 4; ++i) {
        SynthConfig c = base;
        c.seed = derive_seed(5, std::uint64_t(i));
        EXPECT_TRUE(same(ds[i].mask, generate_sample(c).mask));
    }
}

TEST(Normalize, ZeroMeanUnitVariancePerChannel) {
    for (std::uint64_t s = 0; s < 10; ++s) {
        const SegSample x = generate_sample(synth(s % 2 ? Task::disc : Task::vessel, s));
        const std::size_t plane = x.mask.numel();
        for (int c = 0; c < 3; ++c) {
            double mean = 0, var = 0;
            for (std::size_t i = 0; i < plane; ++i) mean += x.image.data()[c * plane + i];
            mean /= double(plane);
            for (std::size_t i = 0; i < plane; ++i) {
                const double d = x.image.data()[c * plane + i] - mean;
                var += d * d;
            }
            var /= double(plane);
            EXPECT_LT(std::abs(mean), 1e-6);
            EXPECT_LT(std::abs(var - 1), 1e-3);
        }
    }
}

TEST(Augment, HorizontalFlipTwiceRestoresSample) {
    const SegSample s = generate_sample(synth(Task::vessel, 3, 64));
    const GeometricTransform f = hflip(64);
    const SegSample back = f.apply(f.apply(s));
    EXPECT_TRUE(same(back.image, s.image));
    EXPECT_TRUE(same(back.mask, s.mask));
    EXPECT_FALSE(same(f.apply(s).mask, s.mask));
}

TEST(Augment, VerticalFlipTwiceRestoresMask) {
    const SegSample s = generate_sample(synth(Task::disc, 3, 64));
    const GeometricTransform f = vflip(64);
    EXPECT_TRUE(same(f.apply_mask(f.apply_mask(s.mask)), s.mask));
}

TEST(Augment, GeometryKeepsMasksBinaryAndShaped) {
    const SegSample s = generate_sample(synth(Task::vessel, 11, 64));
    const std::array<double, 8> off{3, -2, -4, 1, 2, 5, -3, -1};
    for (const GeometricTransform &g : {rotation(25, 64, 64), resized_crop(0.7, 0.3, 0.8, 64, 64),
                                        perspective(off, 64, 64), hflip(64).then(rotation(-10, 64, 64))}) {
        const SegSample out = g.apply(s);
        EXPECT_EQ(out.mask.shape(), s.mask.shape());
        EXPECT_EQ(out.image.shape(), s.image.shape());
        EXPECT_TRUE(binary(out.mask));
    }
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const SegSample out = augment(s, seed);
        EXPECT_EQ(out.mask.shape(), s.mask.shape());
        EXPECT_TRUE(binary(out.mask));
    }
}

TEST(Augment, DeterministicUnderSeed) {
    const SegSample s = generate_sample(synth(Task::disc, 2, 64));
    AugmentTrace ta, tb;
    const SegSample a = augment(s, 99, {}, &ta), b = augment(s, 99, {}, &tb);
    EXPECT_TRUE(same(a.image, b.image));
    EXPECT_TRUE(same(a.mask, b.mask));
    EXPECT_EQ(ta.geometry.m, tb.geometry.m);
}

TEST(Augment, DisabledProbabilitiesGiveIdentity) {
    AugmentConfig off;
    off.hflip_p = off.vflip_p = off.rotate_p = off.crop_p = off.perspective_p = off.color_p = 0;
    const SegSample s = generate_sample(synth(Task::vessel, 4, 64));
    const SegSample out = augment(s, 5, off);
    EXPECT_TRUE(same(out.image, s.image));
    EXPECT_TRUE(same(out.mask, s.mask));
}

TEST(Augment, ColorOpsAreRareAndLeaveMaskAlone) {
    AugmentConfig only_color;
    only_color.hflip_p = only_color.vflip_p = only_color.rotate_p = only_color.crop_p = only_color.perspective_p = 0;
    const SegSample s = generate_sample(synth(Task::vessel, 6, 64));
    int jitter = 0;
    const int n = 1000;
    for (int seed = 0; seed < n; ++seed) {
        AugmentTrace tr;
        const SegSample out = augment(s, std::uint64_t(seed), only_color, &tr);
        jitter += tr.color_jitter;
        if (seed < 50) EXPECT_TRUE(same(out.mask, s.mask));
    }
    // Binomial(1000, 0.2) has standard deviation about 12.6.
    EXPECT_NEAR(jitter, 200, 60);
}

TEST(Augment, RotationKeepsDiscAreaWithin15PercentOver100Seeds) {
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> angle(-30, 30);
    for (std::uint64_t s = 0; s < 100; ++s) {
        const SegSample x = generate_sample(synth(Task::disc, s));
        const double before = foreground(x.mask);
        const double after = foreground(rotation(angle(rng), 128, 128).apply_mask(x.mask));
        EXPECT_NEAR(after / before, 1.0, 0.15) << "seed " << s;
    }
}

TEST(Augment, TransformAlgebra) {
    const GeometricTransform r = rotation(30, 64, 48);
    const auto p = r.then(rotation(-30, 64, 48)).source_of(10, 20);
    EXPECT_NEAR(p[0], 10, 1e-9);
    EXPECT_NEAR(p[1], 20, 1e-9);
    const auto q = hflip(48).source_of(0, 5);
    EXPECT_NEAR(q[0], 47, 1e-12);
    EXPECT_NEAR(q[1], 5, 1e-12);
}

TEST(Png, RoundTripRgbAndGray) {
    TempDir dir;
    Rgb8 rgb{5, 3, {}};
    for (int i = 0; i < 45; ++i) rgb.pixels.push_back(std::uint8_t(i * 5));
    write_png(dir.path() / "a.png", rgb);
    const Rgb8 back = read_png_rgb(dir.path() / "a.png");
    EXPECT_EQ(back.width, 5);
    EXPECT_EQ(back.height, 3);
    EXPECT_EQ(back.pixels, rgb.pixels);

    Gray8 g{4, 2, {0, 10, 127, 128, 200, 255, 1, 254}};
    write_png(dir.path() / "g.png", g);
    EXPECT_EQ(read_png_gray(dir.path() / "g.png").pixels, g.pixels);
}

TEST(Png, UnreadableFileThrows) {
    TempDir dir;
    std::ofstream(dir.path() / "bad.png") << "not a png";
    EXPECT_THROW(read_png_rgb(dir.path() / "bad.png"), std::exception);
}

TEST(MaskFile, GrayIsBinarizedAbove127) {
    const Tensor<float> m = mask_from_gray8(Gray8{4, 1, {0, 127, 128, 255}});
    EXPECT_EQ(m.data()[0], 0.0f);
    EXPECT_EQ(m.data()[1], 0.0f);
    EXPECT_EQ(m.data()[2], 1.0f);
    EXPECT_EQ(m.data()[3], 1.0f);
}

void write_pairs(const fs::path &dir, int n) {
    for (int i = 0; i < n; ++i) {
        RawSample raw = render_sample(synth(Task::disc, std::uint64_t(i), 64));
        raw.source_id = "case" + std::to_string(i);
        write_pair(dir, raw);
    }
}

TEST(LoadDataset, EightPairsSplitSixTwoAndStable) {
    TempDir dir;
    write_pairs(dir.path(), 8);
    const auto train = load_dataset(dir.path(), Split::train, Task::disc);
    const auto test = load_dataset(dir.path(), Split::test, Task::disc);
    EXPECT_EQ(train.samples.size(), 6u);
    EXPECT_EQ(test.samples.size(), 2u);
    EXPECT_TRUE(train.used_random_split);
    EXPECT_EQ(train.split_seed, kDefaultSplitSeed);
    const auto again = load_dataset(dir.path(), Split::test, Task::disc);
    for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(again.samples[i].source_id, test.samples[i].source_id);
    for (const auto &a : train.samples)
        for (const auto &b : test.samples) EXPECT_NE(a.source_id, b.source_id);
}

TEST(LoadDataset, OrphanImageIsSkippedAndCounted) {
    TempDir dir;
    write_pairs(dir.path(), 8);
    fs::remove(dir.path() / "masks" / "case3.png");
    const auto train = load_dataset(dir.path(), Split::train, Task::disc);
    const auto test = load_dataset(dir.path(), Split::test, Task::disc);
    EXPECT_EQ(train.skipped_orphans, 1u);
    EXPECT_EQ(train.samples.size() + test.samples.size(), 7u);
}

TEST(LoadDataset, SplitFileAndExplicitDirectories) {
    TempDir dir;
    write_pairs(dir.path(), 4);
    std::ofstream(dir.path() / "split.txt") << "case1\ncase2\n";
    const auto test = load_dataset(dir.path(), Split::test, Task::disc);
    EXPECT_TRUE(test.used_split_file);
    ASSERT_EQ(test.samples.size(), 2u);
    EXPECT_EQ(test.samples[0].source_id, "case1");

    TempDir dir2;
    write_pairs(dir2.path() / "train", 3);
    write_pairs(dir2.path() / "test", 1);
    EXPECT_EQ(load_dataset(dir2.path(), Split::train).samples.size(), 3u);
    EXPECT_EQ(load_dataset(dir2.path(), Split::test).samples.size(), 1u);
}

TEST(LoadDataset, GrayMaskRoundTripsThroughFiles) {
    TempDir dir;
    write_pairs(dir.path(), 1);
    Gray8 g = read_png_gray(dir.path() / "masks" / "case0.png");
    for (auto &p : g.pixels) p = p ? 128 : 0;
    write_png(dir.path() / "masks" / "case0.png", g);
    std::ofstream(dir.path() / "split.txt") << "case0\n";
    const auto got = load_dataset(dir.path(), Split::test, Task::disc);
    ASSERT_EQ(got.samples.size(), 1u);
    EXPECT_TRUE(same(got.samples[0].mask, render_sample(synth(Task::disc, 0, 64)).mask));
}

TEST(LoadDataset, MissingImagesDirectoryThrows) {
    TempDir dir;
    EXPECT_THROW(load_dataset(dir.path(), Split::train), std::runtime_error);
}

} // namespace
} // namespace loraseg
