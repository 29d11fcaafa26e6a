#include "loraseg/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <boost/math/distributions/students_t.hpp>

namespace loraseg {

namespace {

void check_pair(const Tensor<float> &pred, const Tensor<float> &target, const char *name) {
    if (pred.shape() != target.shape())
        throw ShapeError(std::string(name) + ": prediction " + shape_str(pred.shape()) + " and target " +
                         shape_str(target.shape()) + " differ");
}

} // namespace

double dice_score(const Tensor<float> &pred, const Tensor<float> &target, double threshold) {
    check_pair(pred, target, "dice_score");
    std::size_t inter = 0, np = 0, nt = 0;
    const auto p = pred.data(), t = target.data();
    for (std::size_t i = 0; i < p.size(); ++i) {
        const bool a = p[i] >= threshold, b = t[i] >= 0.5f;
        np += a;
        nt += b;
        inter += a && b;
    }
    if (np + nt == 0) return 1.0;
    return 2.0 * double(inter) / double(np + nt);
}

double auc_score(const Tensor<float> &pred, const Tensor<float> &target) {
    check_pair(pred, target, "auc_score");
    const auto p = pred.data(), t = target.data();
    const std::size_t n = p.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
    double rank_sum = 0;
    std::size_t n_pos = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && p[order[j]] == p[order[i]]) ++j;
        const double midrank = (double(i + 1) + double(j)) / 2.0;
        for (std::size_t k = i; k < j; ++k)
            if (t[order[k]] >= 0.5f) {
                rank_sum += midrank;
                ++n_pos;
            }
        i = j;
    }
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) throw UndefinedMetric("AUC undefined: target contains a single class");
    const double u = rank_sum - double(n_pos) * double(n_pos + 1) / 2.0;
    return u / (double(n_pos) * double(n_neg));
}

PromptMode prompt_mode_from_index(int i) {
    if (i < 0 || i >= kPromptModeCount) throw std::invalid_argument("prompt mode index out of range: " + std::to_string(i));
    return static_cast<PromptMode>(i);
}

std::string to_string(PromptMode m) { return "eval-" + std::to_string(static_cast<int>(m)); }

PromptMode prompt_mode_from_string(const std::string &name) {
    for (int i = 0; i < kPromptModeCount; ++i)
        if (name == to_string(prompt_mode_from_index(i)) || name == std::to_string(i)) return prompt_mode_from_index(i);
    throw std::invalid_argument("unknown prompt mode '" + name + "' (expected eval-0 ... eval-6)");
}

std::optional<Box> foreground_box(const Tensor<float> &mask) {
    if (mask.rank() != 2) throw ShapeError("foreground_box expects [H, W], got " + shape_str(mask.shape()));
    const int h = int(mask.dim(0)), w = int(mask.dim(1));
    int x0 = w, y0 = h, x1 = -1, y1 = -1;
    const auto d = mask.data();
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (d[std::size_t(y) * w + x] >= 0.5f) {
                x0 = std::min(x0, x);
                x1 = std::max(x1, x);
                y0 = std::min(y0, y);
                y1 = std::max(y1, y);
            }
    if (x1 < 0) return std::nullopt;
    return Box{double(x0), double(y0), double(x1), double(y1)};
}

PromptSet sample_prompts(const Tensor<float> &mask, PromptMode mode, std::uint64_t seed,
                         const PromptSampling &sampling) {
    if (mask.rank() != 2) throw ShapeError("sample_prompts expects [H, W], got " + shape_str(mask.shape()));
    PromptSet out;
    if (mode == PromptMode::none) return out;
    const int h = int(mask.dim(0)), w = int(mask.dim(1));
    std::vector<std::size_t> fg, bg;
    const auto d = mask.data();
    for (std::size_t i = 0; i < d.size(); ++i) (d[i] >= 0.5f ? fg : bg).push_back(i);
    if (fg.empty()) throw EmptyMaskError("cannot sample " + to_string(mode) + " prompts on an empty mask");

    std::mt19937_64 rng(seed);
    auto pick = [&](const std::vector<std::size_t> &pool) {
        std::uniform_int_distribution<std::size_t> dist(0, pool.size() - 1);
        const std::size_t i = pool[dist(rng)];
        return Point{double(i % w), double(i / w)};
    };
    int n_pos = 0, n_neg = 0;
    bool box = false;
    switch (mode) {
    case PromptMode::none: break;
    case PromptMode::one_point: n_pos = 1; break;
    case PromptMode::two_points: n_pos = 2; break;
    case PromptMode::five_points: n_pos = 5; break;
    case PromptMode::five_points_one_negative: n_pos = 5, n_neg = 1; break;
    case PromptMode::box: box = true; break;
    case PromptMode::five_points_box: n_pos = 5, box = true; break;
    }
    if (n_neg > 0 && bg.empty()) throw EmptyMaskError("cannot sample a negative point: mask has no background");
    for (int i = 0; i < n_pos; ++i) out.positive_points.push_back(pick(fg));
    for (int i = 0; i < n_neg; ++i) out.negative_points.push_back(pick(bg));
    if (box) {
        const Box tight = *foreground_box(mask);
        const double bw = tight.x_max - tight.x_min, bh = tight.y_max - tight.y_min;
        std::uniform_real_distribution<double> jit(-sampling.box_jitter, sampling.box_jitter);
        Box b{tight.x_min + jit(rng) * bw, tight.y_min + jit(rng) * bh, tight.x_max + jit(rng) * bw,
              tight.y_max + jit(rng) * bh};
        b.x_min = std::clamp(b.x_min, 0.0, double(w - 1));
        b.x_max = std::clamp(b.x_max, 0.0, double(w - 1));
        b.y_min = std::clamp(b.y_min, 0.0, double(h - 1));
        b.y_max = std::clamp(b.y_max, 0.0, double(h - 1));
        // A single-pixel-wide structure gives a zero-width box; widen it by one pixel.
        if (!(b.x_min < b.x_max)) {
            b.x_min = std::max(0.0, tight.x_min - 0.5);
            b.x_max = std::min(double(w - 1), tight.x_max + 0.5);
        }
        if (!(b.y_min < b.y_max)) {
            b.y_min = std::max(0.0, tight.y_min - 0.5);
            b.y_max = std::min(double(h - 1), tight.y_max + 0.5);
        }
        out.boxes.push_back(b);
    }
    return out;
}

AblationMode ablation_from_index(int i) {
    if (i < 0 || i >= kAblationCount) throw std::invalid_argument("ablation index out of range: " + std::to_string(i));
    return static_cast<AblationMode>(i);
}

std::string to_string(AblationMode m) { return "abl-" + std::to_string(static_cast<int>(m)); }

AblationMode ablation_from_string(const std::string &name) {
    for (int i = 0; i < kAblationCount; ++i)
        if (name == to_string(ablation_from_index(i)) || name == std::to_string(i)) return ablation_from_index(i);
    throw std::invalid_argument("unknown ablation '" + name + "' (expected abl-0 ... abl-5)");
}

AblationSetup ablation_setup(AblationMode m) {
    AblationSetup s;
    switch (m) {
    case AblationMode::full: break;
    case AblationMode::bce_only: s.weights = {1, 0, 0}; break;
    case AblationMode::ftl_only: s.weights = {0, 0, 1}; break;
    case AblationMode::dice_only: s.weights = {0, 1, 0}; break;
    case AblationMode::encoder_only: s.apply_to_decoder = false; break;
    case AblationMode::decoder_only: s.apply_to_encoder = false; break;
    }
    return s;
}

LoraConfig apply_ablation(LoraConfig cfg, AblationMode m) {
    const AblationSetup s = ablation_setup(m);
    cfg.apply_to_encoder = s.apply_to_encoder;
    cfg.apply_to_decoder = s.apply_to_decoder;
    return cfg;
}

TTestResult paired_t_test(const std::vector<double> &a, const std::vector<double> &b) {
    if (a.size() != b.size())
        throw std::invalid_argument("paired_t_test: lengths differ (" + std::to_string(a.size()) + " vs " +
                                    std::to_string(b.size()) + ")");
    if (a.size() < 2) throw std::invalid_argument("paired_t_test: need at least two pairs");
    const std::size_t n = a.size();
    std::vector<double> d(n);
    for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
    const MeanStd ms = mean_std(d);
    TTestResult r;
    r.dof = int(n) - 1;
    r.mean_diff = ms.mean;
    if (ms.std == 0) {
        if (ms.mean == 0) return r;
        r.degenerate = true;
        r.t = ms.mean > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
        r.p = 0;
        r.ci_low = r.ci_high = ms.mean;
        return r;
    }
    const double se = ms.std / std::sqrt(double(n));
    r.t = ms.mean / se;
    const boost::math::students_t dist(double(r.dof));
    r.p = 2 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
    const double crit = boost::math::quantile(boost::math::complement(dist, 0.025));
    r.ci_low = ms.mean - crit * se;
    r.ci_high = ms.mean + crit * se;
    return r;
}

MeanStd mean_std(const std::vector<double> &values) {
    MeanStd out;
    if (values.empty()) return out;
    double s = 0;
    for (double v : values) s += v;
    out.mean = s / double(values.size());
    if (values.size() < 2) return out;
    double ss = 0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    out.std = std::sqrt(ss / double(values.size() - 1));
    return out;
}

} // namespace loraseg
