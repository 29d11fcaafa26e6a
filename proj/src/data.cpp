#include "loraseg/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include <png.h>

namespace loraseg {

namespace fs = std::filesystem;

std::string to_string(Task t) { return t == Task::vessel ? "vessel" : "disc"; }

Task task_from_string(const std::string &name) {
    if (name == "vessel") return Task::vessel;
    if (name == "disc") return Task::disc;
    throw std::invalid_argument("unknown task '" + name + "' (expected vessel or disc)");
}

void SegSample::validate() const {
    if (image.rank() != 3 || image.dim(0) != 3 || mask.rank() != 2 || image.dim(1) != mask.dim(0) ||
        image.dim(2) != mask.dim(1))
        throw std::invalid_argument("sample " + source_id + ": image " + shape_str(image.shape()) + " and mask " +
                                    shape_str(mask.shape()) + " are inconsistent");
    if (mask.dim(0) < 64 || mask.dim(1) < 64)
        throw std::invalid_argument("sample " + source_id + ": images must be at least 64x64");
    for (float v : mask.data())
        if (v != 0.0f && v != 1.0f) throw std::invalid_argument("sample " + source_id + ": mask is not binary");
    for (float v : image.data())
        if (!std::isfinite(v)) throw std::invalid_argument("sample " + source_id + ": image has non-finite values");
}

void SynthConfig::validate() const {
    if (size < 64 || size % 32 != 0)
        throw std::invalid_argument("synthetic size must be a multiple of 32 and at least 64, got " +
                                    std::to_string(size));
    if (!(disc_radius_range[0] > 0 && disc_radius_range[0] <= disc_radius_range[1] && disc_radius_range[1] < 0.5))
        throw std::invalid_argument("disc radius fractions must satisfy 0 < lo <= hi < 0.5");
    if (vessel_depth < 1) throw std::invalid_argument("vessel depth must be positive");
    if (!(vessel_width_decay > 0 && vessel_width_decay <= 1))
        throw std::invalid_argument("vessel width decay must be in (0, 1]");
    if (!(vessel_root_width > 0)) throw std::invalid_argument("vessel root width must be positive");
    if (!(texture_amplitude >= 0)) throw std::invalid_argument("texture amplitude must be non-negative");
}

// ---- synthetic rendering ---------------------------------------------------

namespace {

struct Capsule {
    double x0, y0, x1, y1, width;
};

class Canvas {
public:
    explicit Canvas(int size) : n_(size), v_(std::size_t(size) * size, 0.0) {}
    double &at(int y, int x) { return v_[std::size_t(y) * n_ + x]; }
    double at(int y, int x) const { return v_[std::size_t(y) * n_ + x]; }
    int size() const { return n_; }

    // Anti-aliased stroke: coverage falls linearly over one pixel around the
    // edge, so coverage >= 0.5 exactly where the centre lies within width/2.
    void stroke(const Capsule &c) {
        const double r = c.width / 2;
        const int xa = std::max(0, int(std::floor(std::min(c.x0, c.x1) - r - 1)));
        const int xb = std::min(n_ - 1, int(std::ceil(std::max(c.x0, c.x1) + r + 1)));
        const int ya = std::max(0, int(std::floor(std::min(c.y0, c.y1) - r - 1)));
        const int yb = std::min(n_ - 1, int(std::ceil(std::max(c.y0, c.y1) + r + 1)));
        const double dx = c.x1 - c.x0, dy = c.y1 - c.y0, len2 = dx * dx + dy * dy;
        for (int y = ya; y <= yb; ++y)
            for (int x = xa; x <= xb; ++x) {
                double t = len2 > 0 ? ((x - c.x0) * dx + (y - c.y0) * dy) / len2 : 0.0;
                t = std::clamp(t, 0.0, 1.0);
                const double d = std::hypot(x - (c.x0 + t * dx), y - (c.y0 + t * dy));
                const double cov = std::clamp(r - d + 0.5, 0.0, 1.0);
                double &dst = at(y, x);
                dst = std::max(dst, cov);
            }
    }

private:
    int n_;
    std::vector<double> v_;
};

struct TreeParams {
    int depth;
    double decay;
};

void grow(std::vector<Capsule> &out, std::mt19937_64 &rng, double x, double y, double angle, double length,
          double width, int level, const TreeParams &p) {
    std::normal_distribution<double> wiggle(0.0, 0.12);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const int pieces = 6;
    for (int i = 0; i < pieces; ++i) {
        angle += wiggle(rng);
        const double nx = x + std::cos(angle) * length / pieces;
        const double ny = y + std::sin(angle) * length / pieces;
        out.push_back({x, y, nx, ny, width});
        x = nx;
        y = ny;
    }
    if (level + 1 >= p.depth) return;
    const double spread = 0.35 + 0.35 * unit(rng);
    const double tilt = 0.2 * (unit(rng) - 0.5);
    for (int side : {-1, 1}) {
        const double child_len = length * (0.5 + 0.1 * unit(rng));
        grow(out, rng, x, y, angle + side * spread + tilt, child_len, width * p.decay, level + 1, p);
    }
}

struct Field {
    std::array<std::vector<double>, 3> rgb;
    std::vector<bool> inside;
};

// Reddish textured circular field of view with vignetting.
Field make_field(int n, double texture, std::mt19937_64 &rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Field f;
    for (auto &c : f.rgb) c.assign(std::size_t(n) * n, 0.02);
    f.inside.assign(std::size_t(n) * n, false);
    const double base[3] = {0.78 + 0.08 * (unit(rng) - 0.5), 0.36 + 0.06 * (unit(rng) - 0.5),
                            0.18 + 0.04 * (unit(rng) - 0.5)};
    struct Wave {
        double fx, fy, phase, amp;
    };
    std::vector<Wave> waves;
    for (int k = 0; k < 5; ++k) {
        const double freq = (1.0 + 5.0 * unit(rng)) * 2 * std::numbers::pi / n;
        const double dir = unit(rng) * 2 * std::numbers::pi;
        waves.push_back({freq * std::cos(dir), freq * std::sin(dir), unit(rng) * 2 * std::numbers::pi,
                         texture * (0.5 + unit(rng)) / 2.5});
    }
    const double c = (n - 1) / 2.0, radius = 0.47 * n;
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            const double r2 = ((x - c) * (x - c) + (y - c) * (y - c)) / (radius * radius);
            if (r2 > 1) continue;
            const std::size_t i = std::size_t(y) * n + x;
            f.inside[i] = true;
            double t = 0;
            for (const auto &w : waves) t += w.amp * std::sin(w.fx * x + w.fy * y + w.phase);
            const double shade = (1.0 - 0.3 * r2) * (1.0 + t);
            for (int ch = 0; ch < 3; ++ch) f.rgb[ch][i] = base[ch] * shade;
        }
    return f;
}

std::vector<Capsule> vessel_tree(int n, double root_width, const TreeParams &p, double disc_x, double disc_y,
                                 std::mt19937_64 &rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<Capsule> caps;
    const double away = disc_x < n / 2.0 ? 0.0 : std::numbers::pi;
    const double root_len = 0.3 * n;
    for (int side : {-1, 1}) {
        const double angle = away + side * (0.75 + 0.3 * unit(rng));
        grow(caps, rng, disc_x, disc_y, angle, root_len, root_width * n, 0, p);
    }
    return caps;
}

} // namespace

RawSample render_sample(const SynthConfig &cfg) {
    cfg.validate();
    const int n = cfg.size;
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Field field = make_field(n, cfg.texture_amplitude, rng);

    RawSample out;
    out.task = cfg.task;
    out.rgb = Tensor<float>({3, n, n});
    out.mask = Tensor<float>({n, n});
    auto rgb = out.rgb.mutable_data();
    auto mask = out.mask.mutable_data();
    const std::size_t plane = std::size_t(n) * n;

    if (cfg.task == Task::vessel) {
        const bool left = unit(rng) < 0.5;
        const double disc_x = n * (left ? 0.3 + 0.05 * unit(rng) : 0.7 - 0.05 * unit(rng));
        const double disc_y = n * (0.45 + 0.1 * unit(rng));
        Canvas cov(n);
        for (const auto &c : vessel_tree(n, cfg.vessel_root_width, {cfg.vessel_depth, cfg.vessel_width_decay}, disc_x,
                                         disc_y, rng))
            cov.stroke(c);
        const double disc_r = 0.06 * n;
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) {
                const std::size_t i = std::size_t(y) * n + x;
                if (!field.inside[i]) continue;
                const double glow = std::exp(-((x - disc_x) * (x - disc_x) + (y - disc_y) * (y - disc_y)) /
                                             (2 * disc_r * disc_r));
                const double v = cov.at(y, x);
                for (int ch = 0; ch < 3; ++ch) {
                    const double bright = field.rgb[ch][i] + 0.35 * glow;
                    field.rgb[ch][i] = bright * (1.0 - 0.45 * v);
                }
                mask[i] = v >= 0.5 ? 1.0f : 0.0f;
            }
    } else {
        const double r_lo = cfg.disc_radius_range[0], r_hi = cfg.disc_radius_range[1];
        const double rx = n * (r_lo + (r_hi - r_lo) * unit(rng));
        const double ry = rx * (0.85 + 0.3 * unit(rng));
        const double theta = unit(rng) * std::numbers::pi;
        // Keep the whole ellipse inside the field of view.
        const double reach = 0.47 * n - std::max(rx, ry) - 2;
        const double dist = std::max(0.0, reach) * std::sqrt(unit(rng)) * 0.8;
        const double dir = unit(rng) * 2 * std::numbers::pi;
        const double cx = (n - 1) / 2.0 + dist * std::cos(dir), cy = (n - 1) / 2.0 + dist * std::sin(dir);
        Canvas faint(n);
        for (const auto &c : vessel_tree(n, cfg.vessel_root_width * 0.6, {4, cfg.vessel_width_decay}, cx, cy, rng))
            faint.stroke(c);
        const double ct = std::cos(theta), st = std::sin(theta);
        const double yellow[3] = {1.0, 0.88, 0.55};
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) {
                const std::size_t i = std::size_t(y) * n + x;
                if (!field.inside[i]) continue;
                const double u = ((x - cx) * ct + (y - cy) * st) / rx;
                const double w = (-(x - cx) * st + (y - cy) * ct) / ry;
                const double rho = std::sqrt(u * u + w * w);
                const double alpha = std::clamp((1.0 - rho) * std::min(rx, ry) + 0.5, 0.0, 1.0);
                const double fv = 0.15 * faint.at(y, x);
                for (int ch = 0; ch < 3; ++ch) {
                    const double disc = yellow[ch] * (1.0 - 0.35 * std::min(rho * rho, 1.0));
                    const double v = (1 - alpha) * field.rgb[ch][i] + alpha * disc;
                    field.rgb[ch][i] = v * (1.0 - fv);
                }
                mask[i] = rho <= 1.0 ? 1.0f : 0.0f;
            }
    }

    std::normal_distribution<double> noise(0.0, 0.012);
    for (int ch = 0; ch < 3; ++ch)
        for (std::size_t i = 0; i < plane; ++i)
            rgb[ch * plane + i] = static_cast<float>(std::clamp(field.rgb[ch][i] + noise(rng), 0.0, 1.0));
    std::ostringstream id;
    id << to_string(cfg.task) << '_' << std::hex << cfg.seed;
    out.source_id = id.str();
    return out;
}

Tensor<float> normalize_image(const Tensor<float> &rgb) {
    if (rgb.rank() != 3) throw ShapeError("normalize_image expects [C, H, W], got " + shape_str(rgb.shape()));
    Tensor<float> out(rgb.shape());
    const std::size_t plane = std::size_t(rgb.dim(1)) * rgb.dim(2);
    const auto in = rgb.data();
    auto o = out.mutable_data();
    for (std::int64_t c = 0; c < rgb.dim(0); ++c) {
        const float *p = in.data() + c * plane;
        double mean = 0;
        for (std::size_t i = 0; i < plane; ++i) mean += p[i];
        mean /= double(plane);
        double var = 0;
        for (std::size_t i = 0; i < plane; ++i) var += (p[i] - mean) * (p[i] - mean);
        var /= double(plane);
        const double inv = 1.0 / std::sqrt(std::max(var, 1e-12));
        for (std::size_t i = 0; i < plane; ++i) o[c * plane + i] = static_cast<float>((p[i] - mean) * inv);
    }
    return out;
}

SegSample normalize(const RawSample &raw) {
    SegSample s;
    s.image = normalize_image(raw.rgb);
    s.mask = raw.mask.clone();
    s.task = raw.task;
    s.source_id = raw.source_id;
    return s;
}

SegSample generate_sample(const SynthConfig &cfg) { return normalize(render_sample(cfg)); }

std::vector<SegSample> generate_dataset(SynthConfig base, int n) {
    std::vector<SegSample> out(static_cast<std::size_t>(std::max(0, n)));
    const std::uint64_t global = base.seed;
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < n; ++i) {
        SynthConfig c = base;
        c.seed = derive_seed(global, std::uint64_t(i));
        out[i] = generate_sample(c);
    }
    return out;
}

// ---- augmentation ----------------------------------------------------------

GeometricTransform GeometricTransform::then(const GeometricTransform &next) const {
    GeometricTransform r;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double acc = 0;
            for (int k = 0; k < 3; ++k) acc += m[i * 3 + k] * next.m[k * 3 + j];
            r.m[i * 3 + j] = acc;
        }
    return r;
}

std::array<double, 2> GeometricTransform::source_of(double x, double y) const {
    const double w = m[6] * x + m[7] * y + m[8];
    return {(m[0] * x + m[1] * y + m[2]) / w, (m[3] * x + m[4] * y + m[5]) / w};
}

Tensor<float> GeometricTransform::apply_image(const Tensor<float> &image) const {
    if (image.rank() != 3) throw ShapeError("apply_image expects [C, H, W], got " + shape_str(image.shape()));
    const int c = int(image.dim(0)), h = int(image.dim(1)), w = int(image.dim(2));
    Tensor<float> out(image.shape());
    const auto in = image.data();
    auto o = out.mutable_data();
    const std::size_t plane = std::size_t(h) * w;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const auto [sx, sy] = source_of(x, y);
            if (!(sx > -1 && sy > -1 && sx < w && sy < h)) continue;
            const int x0 = int(std::floor(sx)), y0 = int(std::floor(sy));
            const double fx = sx - x0, fy = sy - y0;
            for (int ch = 0; ch < c; ++ch) {
                const float *p = in.data() + ch * plane;
                auto px = [&](int yy, int xx) -> double {
                    return (xx < 0 || yy < 0 || xx >= w || yy >= h) ? 0.0 : p[std::size_t(yy) * w + xx];
                };
                double v = (1 - fy) * ((1 - fx) * px(y0, x0) + (fx > 0 ? fx * px(y0, x0 + 1) : 0.0));
                if (fy > 0) v += fy * ((1 - fx) * px(y0 + 1, x0) + (fx > 0 ? fx * px(y0 + 1, x0 + 1) : 0.0));
                o[ch * plane + std::size_t(y) * w + x] = static_cast<float>(v);
            }
        }
    return out;
}

Tensor<float> GeometricTransform::apply_mask(const Tensor<float> &mask) const {
    if (mask.rank() != 2) throw ShapeError("apply_mask expects [H, W], got " + shape_str(mask.shape()));
    const int h = int(mask.dim(0)), w = int(mask.dim(1));
    Tensor<float> out(mask.shape());
    const auto in = mask.data();
    auto o = out.mutable_data();
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const auto [sx, sy] = source_of(x, y);
            const long xi = std::lround(sx), yi = std::lround(sy);
            if (xi < 0 || yi < 0 || xi >= w || yi >= h) continue;
            o[std::size_t(y) * w + x] = in[std::size_t(yi) * w + xi] >= 0.5f ? 1.0f : 0.0f;
        }
    return out;
}

SegSample GeometricTransform::apply(const SegSample &sample) const {
    SegSample out;
    out.image = apply_image(sample.image);
    out.mask = apply_mask(sample.mask);
    out.task = sample.task;
    out.source_id = sample.source_id;
    return out;
}

GeometricTransform hflip(int width) { return {{-1, 0, double(width - 1), 0, 1, 0, 0, 0, 1}}; }

GeometricTransform vflip(int height) { return {{1, 0, 0, 0, -1, double(height - 1), 0, 0, 1}}; }

GeometricTransform rotation(double degrees, int height, int width) {
    const double a = degrees * std::numbers::pi / 180.0;
    const double c = std::cos(a), s = std::sin(a);
    const double cx = (width - 1) / 2.0, cy = (height - 1) / 2.0;
    // source = R(-a) (p - centre) + centre
    return {{c, s, cx - c * cx - s * cy, -s, c, cy + s * cx - c * cy, 0, 0, 1}};
}

GeometricTransform resized_crop(double area_fraction, double ox, double oy, int height, int width) {
    const double s = std::sqrt(std::clamp(area_fraction, 1e-6, 1.0));
    const double x0 = ox * (1 - s) * (width - 1), y0 = oy * (1 - s) * (height - 1);
    return {{s, 0, x0, 0, s, y0, 0, 0, 1}};
}

GeometricTransform perspective(const std::array<double, 8> &offsets, int height, int width) {
    const double W = width - 1, H = height - 1;
    const double dst[4][2] = {{0, 0}, {W, 0}, {W, H}, {0, H}};
    double src[4][2];
    for (int i = 0; i < 4; ++i) {
        src[i][0] = dst[i][0] + offsets[2 * i];
        src[i][1] = dst[i][1] + offsets[2 * i + 1];
    }
    // Solve for h (8 unknowns, h33 = 1) mapping output corners to source corners.
    double a[8][9] = {};
    for (int i = 0; i < 4; ++i) {
        const double x = dst[i][0], y = dst[i][1], u = src[i][0], v = src[i][1];
        double *r0 = a[2 * i], *r1 = a[2 * i + 1];
        r0[0] = x, r0[1] = y, r0[2] = 1, r0[6] = -u * x, r0[7] = -u * y, r0[8] = u;
        r1[3] = x, r1[4] = y, r1[5] = 1, r1[6] = -v * x, r1[7] = -v * y, r1[8] = v;
    }
    for (int col = 0; col < 8; ++col) {
        int piv = col;
        for (int r = col + 1; r < 8; ++r)
            if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
        std::swap(a[col], a[piv]);
        if (std::abs(a[col][col]) < 1e-12) throw std::invalid_argument("perspective: degenerate corner offsets");
        for (int r = 0; r < 8; ++r) {
            if (r == col) continue;
            const double f = a[r][col] / a[col][col];
            for (int k = col; k < 9; ++k) a[r][k] -= f * a[col][k];
        }
    }
    GeometricTransform t;
    for (int i = 0; i < 8; ++i) t.m[i] = a[i][8] / a[i][i];
    t.m[8] = 1;
    return t;
}

void AugmentConfig::validate() const {
    for (double p : {hflip_p, vflip_p, rotate_p, crop_p, perspective_p, color_p})
        if (!(p >= 0 && p <= 1)) throw std::invalid_argument("augmentation probabilities must lie in [0, 1]");
    if (!(max_rotation_deg >= 0 && max_rotation_deg <= 180))
        throw std::invalid_argument("max rotation must lie in [0, 180] degrees");
    if (!(crop_scale[0] > 0 && crop_scale[0] <= crop_scale[1] && crop_scale[1] <= 1))
        throw std::invalid_argument("crop scale must satisfy 0 < lo <= hi <= 1");
    if (!(perspective_distortion >= 0 && perspective_distortion < 1))
        throw std::invalid_argument("perspective distortion must lie in [0, 1)");
}

namespace {

// 3x3 Gaussian blur per channel with clamped borders.
Tensor<float> blur3(const Tensor<float> &img, double sigma) {
    const int c = int(img.dim(0)), h = int(img.dim(1)), w = int(img.dim(2));
    const double e = std::exp(-1.0 / (2 * sigma * sigma));
    const double k[3] = {e / (1 + 2 * e), 1 / (1 + 2 * e), e / (1 + 2 * e)};
    Tensor<float> tmp(img.shape()), out(img.shape());
    const auto in = img.data();
    auto t = tmp.mutable_data();
    auto o = out.mutable_data();
    const std::size_t plane = std::size_t(h) * w;
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double acc = 0;
                for (int d = -1; d <= 1; ++d) acc += k[d + 1] * in[ch * plane + std::size_t(y) * w + std::clamp(x + d, 0, w - 1)];
                t[ch * plane + std::size_t(y) * w + x] = static_cast<float>(acc);
            }
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double acc = 0;
                for (int d = -1; d <= 1; ++d) acc += k[d + 1] * t[ch * plane + std::size_t(std::clamp(y + d, 0, h - 1)) * w + x];
                o[ch * plane + std::size_t(y) * w + x] = static_cast<float>(acc);
            }
    return out;
}

} // namespace

SegSample augment(const SegSample &sample, std::uint64_t seed, const AugmentConfig &cfg, AugmentTrace *trace) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const int h = sample.height(), w = sample.width();

    GeometricTransform g;
    if (unit(rng) < cfg.hflip_p) g = g.then(hflip(w));
    if (unit(rng) < cfg.vflip_p) g = g.then(vflip(h));
    if (unit(rng) < cfg.rotate_p) g = g.then(rotation((2 * unit(rng) - 1) * cfg.max_rotation_deg, h, w));
    if (unit(rng) < cfg.crop_p) {
        const double area = cfg.crop_scale[0] + (cfg.crop_scale[1] - cfg.crop_scale[0]) * unit(rng);
        const double ox = unit(rng), oy = unit(rng);
        g = g.then(resized_crop(area, ox, oy, h, w));
    }
    if (unit(rng) < cfg.perspective_p) {
        const double dx = cfg.perspective_distortion * (w - 1) / 2, dy = cfg.perspective_distortion * (h - 1) / 2;
        const double sx[4] = {1, -1, -1, 1}, sy[4] = {1, 1, -1, -1};
        std::array<double, 8> off{};
        for (int i = 0; i < 4; ++i) {
            off[2 * i] = sx[i] * dx * unit(rng);
            off[2 * i + 1] = sy[i] * dy * unit(rng);
        }
        g = g.then(perspective(off, h, w));
    }

    SegSample out = g.apply(sample);
    AugmentTrace tr;
    tr.geometry = g;
    if (unit(rng) < cfg.color_p) {
        tr.color_jitter = true;
        auto d = out.image.mutable_data();
        const std::size_t plane = std::size_t(h) * w;
        for (int ch = 0; ch < 3; ++ch) {
            const double gain = 0.8 + 0.4 * unit(rng), shift = 0.4 * (unit(rng) - 0.5);
            for (std::size_t i = 0; i < plane; ++i) d[ch * plane + i] = static_cast<float>(d[ch * plane + i] * gain + shift);
        }
    }
    if (unit(rng) < cfg.color_p) {
        tr.blur = true;
        out.image = blur3(out.image, 0.3 + 0.7 * unit(rng));
    }
    if (unit(rng) < cfg.color_p) {
        tr.sharpen = true;
        const double amount = 0.3 + 0.7 * unit(rng);
        const Tensor<float> soft = blur3(out.image, 1.0);
        auto d = out.image.mutable_data();
        const auto s = soft.data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<float>(d[i] + amount * (d[i] - s[i]));
    }
    if (trace) *trace = tr;
    return out;
}

// ---- PNG -------------------------------------------------------------------

namespace {

template <typename Img>
Img read_png_as(const fs::path &path, png_uint_32 format, int channels) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.string().c_str()))
        throw std::runtime_error("cannot read PNG " + path.string() + ": " + image.message);
    image.format = format;
    Img out;
    out.width = int(image.width);
    out.height = int(image.height);
    out.pixels.resize(std::size_t(image.width) * image.height * channels);
    if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
        const std::string msg = image.message;
        png_image_free(&image);
        throw std::runtime_error("cannot decode PNG " + path.string() + ": " + msg);
    }
    return out;
}

void write_png_raw(const fs::path &path, int width, int height, png_uint_32 format, const std::uint8_t *data) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = png_uint_32(width);
    image.height = png_uint_32(height);
    image.format = format;
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    if (!png_image_write_to_file(&image, path.string().c_str(), 0, data, 0, nullptr))
        throw std::runtime_error("cannot write PNG " + path.string() + ": " + image.message);
}

} // namespace

void write_png(const fs::path &path, const Rgb8 &img) {
    write_png_raw(path, img.width, img.height, PNG_FORMAT_RGB, img.pixels.data());
}

void write_png(const fs::path &path, const Gray8 &img) {
    write_png_raw(path, img.width, img.height, PNG_FORMAT_GRAY, img.pixels.data());
}

Rgb8 read_png_rgb(const fs::path &path) { return read_png_as<Rgb8>(path, PNG_FORMAT_RGB, 3); }

Gray8 read_png_gray(const fs::path &path) { return read_png_as<Gray8>(path, PNG_FORMAT_GRAY, 1); }

Rgb8 to_rgb8(const Tensor<float> &rgb) {
    if (rgb.rank() != 3 || rgb.dim(0) != 3) throw ShapeError("to_rgb8 expects [3, H, W], got " + shape_str(rgb.shape()));
    Rgb8 out;
    out.height = int(rgb.dim(1));
    out.width = int(rgb.dim(2));
    const std::size_t plane = std::size_t(out.height) * out.width;
    out.pixels.resize(plane * 3);
    const auto d = rgb.data();
    for (std::size_t i = 0; i < plane; ++i)
        for (int c = 0; c < 3; ++c)
            out.pixels[i * 3 + c] = static_cast<std::uint8_t>(std::lround(std::clamp(d[c * plane + i], 0.0f, 1.0f) * 255));
    return out;
}

Gray8 mask_to_gray8(const Tensor<float> &mask) {
    Gray8 out;
    out.height = int(mask.dim(0));
    out.width = int(mask.dim(1));
    out.pixels.resize(mask.numel());
    const auto d = mask.data();
    for (std::size_t i = 0; i < d.size(); ++i) out.pixels[i] = d[i] >= 0.5f ? 255 : 0;
    return out;
}

Tensor<float> mask_from_gray8(const Gray8 &g) {
    Tensor<float> out({g.height, g.width});
    auto d = out.mutable_data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = g.pixels[i] > 127 ? 1.0f : 0.0f;
    return out;
}

void write_pair(const fs::path &dir, const RawSample &raw) {
    write_png(dir / "images" / (raw.source_id + ".png"), to_rgb8(raw.rgb));
    write_png(dir / "masks" / (raw.source_id + ".png"), mask_to_gray8(raw.mask));
}

namespace {

std::map<std::string, fs::path> png_stems(const fs::path &dir) {
    std::map<std::string, fs::path> out;
    if (!fs::is_directory(dir)) return out;
    for (const auto &e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".png") out[e.path().stem().string()] = e.path();
    return out;
}

SegSample load_pair(const fs::path &image_path, const fs::path &mask_path, Task task, const std::string &id) {
    const Rgb8 img = read_png_rgb(image_path);
    const Gray8 m = read_png_gray(mask_path);
    if (img.width != m.width || img.height != m.height)
        throw std::runtime_error("image " + image_path.string() + " and mask " + mask_path.string() +
                                 " differ in size");
    Tensor<float> rgb({3, img.height, img.width});
    auto d = rgb.mutable_data();
    const std::size_t plane = std::size_t(img.width) * img.height;
    for (std::size_t i = 0; i < plane; ++i)
        for (int c = 0; c < 3; ++c) d[c * plane + i] = img.pixels[i * 3 + c] / 255.0f;
    RawSample raw{rgb, mask_from_gray8(m), task, id};
    SegSample s = normalize(raw);
    s.validate();
    return s;
}

} // namespace

DatasetLoad load_dataset(const fs::path &root, Split split, Task task, std::uint64_t split_seed) {
    const std::string split_name = split == Split::train ? "train" : "test";
    DatasetLoad out;
    fs::path base = root / split_name;
    const bool explicit_dirs = fs::is_directory(base / "images");
    if (!explicit_dirs) base = root;
    if (!fs::is_directory(base / "images"))
        throw std::runtime_error("no images directory under " + root.string() + " (looked for " + split_name +
                                 "/images and images)");
    const auto images = png_stems(base / "images");
    const auto masks = png_stems(base / "masks");

    std::vector<std::string> stems;
    for (const auto &[stem, path] : images) {
        if (masks.count(stem)) stems.push_back(stem);
        else ++out.skipped_orphans;
    }

    if (!explicit_dirs) {
        std::set<std::string> test;
        const fs::path split_file = root / "split.txt";
        if (fs::exists(split_file)) {
            out.used_split_file = true;
            std::ifstream in(split_file);
            std::string line;
            while (std::getline(in, line)) {
                line.erase(line.find_last_not_of(" \t\r\n") + 1);
                if (!line.empty()) test.insert(line);
            }
        } else {
            out.used_random_split = true;
            out.split_seed = split_seed;
            std::vector<std::string> order = stems;
            std::mt19937_64 rng(split_seed);
            std::shuffle(order.begin(), order.end(), rng);
            const std::size_t n_test = static_cast<std::size_t>(std::lround(order.size() * 0.25));
            test.insert(order.begin(), order.begin() + std::ptrdiff_t(n_test));
        }
        std::vector<std::string> kept;
        for (const auto &s : stems)
            if ((test.count(s) > 0) == (split == Split::test)) kept.push_back(s);
        stems = std::move(kept);
    }

    for (const auto &stem : stems) out.samples.push_back(load_pair(images.at(stem), masks.at(stem), task, stem));
    return out;
}

} // namespace loraseg
