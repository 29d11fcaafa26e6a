#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "loraseg/seed.hpp"
#include "loraseg/tensor.hpp"

namespace loraseg {

enum class Task { vessel, disc };

std::string to_string(Task t);
Task task_from_string(const std::string &name);

struct SegSample {
    Tensor<float> image; // [3, H, W], per-channel zero mean, unit variance
    Tensor<float> mask;  // [H, W] with values in {0, 1}
    Task task = Task::vessel;
    std::string source_id;

    int height() const { return static_cast<int>(mask.dim(0)); }
    int width() const { return static_cast<int>(mask.dim(1)); }
    // Throws std::invalid_argument when the sample breaks its invariants.
    void validate() const;
};

// Un-normalised rendering, RGB in [0, 1].
struct RawSample {
    Tensor<float> rgb;  // [3, H, W]
    Tensor<float> mask; // [H, W]
    Task task = Task::vessel;
    std::string source_id;
};

struct SynthConfig {
    std::uint64_t seed = 0;
    int size = 256;
    Task task = Task::vessel;
    int vessel_depth = 6;
    double vessel_width_decay = 0.75;
    // Root vessel width as a fraction of the image side.
    double vessel_root_width = 0.07;
    std::array<double, 2> disc_radius_range{0.08, 0.22};
    double texture_amplitude = 0.06;

    void validate() const;
};

RawSample render_sample(const SynthConfig &cfg);
SegSample generate_sample(const SynthConfig &cfg);

// Samples 0..n-1 with per-sample derived seeds; identical for any thread count.
std::vector<SegSample> generate_dataset(SynthConfig base, int n);

// Per-channel zero mean and unit variance, statistics taken in double.
Tensor<float> normalize_image(const Tensor<float> &rgb);
SegSample normalize(const RawSample &raw);

// ---- augmentation ----------------------------------------------------------

// Maps output pixel coordinates to input pixel coordinates (homogeneous).
struct GeometricTransform {
    std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

    static GeometricTransform identity() { return {}; }
    GeometricTransform then(const GeometricTransform &next) const;
    std::array<double, 2> source_of(double x, double y) const;

    // Image: bilinear, zero outside. Mask: nearest, zero outside, stays binary.
    Tensor<float> apply_image(const Tensor<float> &image) const;
    Tensor<float> apply_mask(const Tensor<float> &mask) const;
    SegSample apply(const SegSample &sample) const;
};

GeometricTransform hflip(int width);
GeometricTransform vflip(int height);
// Rotation by `degrees` about the image centre.
GeometricTransform rotation(double degrees, int height, int width);
// Crop of the given area fraction at an offset in [0, 1]^2, resized back up.
GeometricTransform resized_crop(double area_fraction, double ox, double oy, int height, int width);
// Homography sending the four image corners to corners displaced by `offsets`
// (pixels, order TL, TR, BR, BL, each (dx, dy)).
GeometricTransform perspective(const std::array<double, 8> &offsets, int height, int width);

struct AugmentConfig {
    double hflip_p = 0.5;
    double vflip_p = 0.5;
    double rotate_p = 0.5;
    double max_rotation_deg = 30.0;
    double crop_p = 0.5;
    std::array<double, 2> crop_scale{0.7, 1.0};
    double perspective_p = 0.5;
    double perspective_distortion = 0.2;
    double color_p = 0.2;

    void validate() const;
};

struct AugmentTrace {
    GeometricTransform geometry;
    bool color_jitter = false;
    bool blur = false;
    bool sharpen = false;
};

SegSample augment(const SegSample &sample, std::uint64_t seed, const AugmentConfig &cfg = {},
                  AugmentTrace *trace = nullptr);

// ---- files -----------------------------------------------------------------

struct Gray8 {
    int width = 0, height = 0;
    std::vector<std::uint8_t> pixels;
};

struct Rgb8 {
    int width = 0, height = 0;
    std::vector<std::uint8_t> pixels; // interleaved RGB
};

void write_png(const std::filesystem::path &path, const Rgb8 &img);
void write_png(const std::filesystem::path &path, const Gray8 &img);
// Any PNG colour type, converted to 8-bit RGB / grey.
Rgb8 read_png_rgb(const std::filesystem::path &path);
Gray8 read_png_gray(const std::filesystem::path &path);

Rgb8 to_rgb8(const Tensor<float> &rgb);
Gray8 mask_to_gray8(const Tensor<float> &mask);
// Grey values above 127 are foreground.
Tensor<float> mask_from_gray8(const Gray8 &g);

// Writes <dir>/images/<id>.png and <dir>/masks/<id>.png.
void write_pair(const std::filesystem::path &dir, const RawSample &raw);

enum class Split { train, test };

struct DatasetLoad {
    std::vector<SegSample> samples;
    std::size_t skipped_orphans = 0;
    bool used_split_file = false;
    bool used_random_split = false;
    std::uint64_t split_seed = 0;
};

inline constexpr std::uint64_t kDefaultSplitSeed = 20250101;

// Reads <root>/<split>/{images,masks} when present. Otherwise reads
// <root>/{images,masks} and splits by <root>/split.txt (test stems) or a
// seeded 75/25 shuffle.
DatasetLoad load_dataset(const std::filesystem::path &root, Split split, Task task = Task::vessel,
                         std::uint64_t split_seed = kDefaultSplitSeed);

} // namespace loraseg
