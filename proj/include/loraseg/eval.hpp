#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "loraseg/backbone.hpp"
#include "loraseg/losses.hpp"
#include "loraseg/lora.hpp"
#include "loraseg/tensor.hpp"

namespace loraseg {

// Foreground where pred >= threshold. Empty prediction and empty target
// score 1.
double dice_score(const Tensor<float> &pred, const Tensor<float> &target, double threshold = 0.5);

class UndefinedMetric : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

// Exact ROC area with midrank tie handling (Mann-Whitney U / (n_pos n_neg)).
// Throws UndefinedMetric when the target holds a single class.
double auc_score(const Tensor<float> &pred, const Tensor<float> &target);

enum class PromptMode { none = 0, one_point, two_points, five_points, five_points_one_negative, box, five_points_box };

inline constexpr int kPromptModeCount = 7;
PromptMode prompt_mode_from_index(int i);
std::string to_string(PromptMode m); // "eval-0" ... "eval-6"
PromptMode prompt_mode_from_string(const std::string &name);

struct PromptSampling {
    double box_jitter = 0.05;
};

class EmptyMaskError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Positive points are uniform over foreground pixels, negative points uniform
// over background pixels, the box is the tight foreground box with each edge
// moved by up to box_jitter of its side length. Throws EmptyMaskError for
// prompted modes on an empty mask.
PromptSet sample_prompts(const Tensor<float> &mask, PromptMode mode, std::uint64_t seed,
                         const PromptSampling &sampling = {});

// Tight box around the foreground (pixel indices), nullopt when empty.
std::optional<Box> foreground_box(const Tensor<float> &mask);

enum class AblationMode { full = 0, bce_only, ftl_only, dice_only, encoder_only, decoder_only };

inline constexpr int kAblationCount = 6;
AblationMode ablation_from_index(int i);
std::string to_string(AblationMode m); // "abl-0" ... "abl-5"
AblationMode ablation_from_string(const std::string &name);

struct AblationSetup {
    CompositeWeights weights;
    bool apply_to_encoder = true;
    bool apply_to_decoder = true;
};

AblationSetup ablation_setup(AblationMode m);
// Base LoRA config with the ablation's placement applied.
LoraConfig apply_ablation(LoraConfig cfg, AblationMode m);

struct TTestResult {
    double t = 0;
    double p = 1;
    double ci_low = 0;
    double ci_high = 0;
    double mean_diff = 0;
    int dof = 0;
    // Set when the differences have zero variance but a non-zero mean.
    bool degenerate = false;
};

// Two-sided paired t-test on a - b with a 95% interval for the mean
// difference. All-zero differences give t = 0, p = 1 and a [0, 0] interval.
TTestResult paired_t_test(const std::vector<double> &a, const std::vector<double> &b);

struct MeanStd {
    double mean = 0;
    double std = 0; // sample standard deviation, 0 for fewer than two values
};

MeanStd mean_std(const std::vector<double> &values);

} // namespace loraseg
