#pragma once

#include <functional>
#include <ostream>
#include <vector>

#include "loraseg/backbone.hpp"
#include "loraseg/data.hpp"
#include "loraseg/eval.hpp"
#include "loraseg/losses.hpp"
#include "loraseg/optim.hpp"

namespace loraseg {

struct TrainSetup {
    TrainConfig train;
    CompositeWeights weights;
    TverskyParams tversky;
    bool augment = true;
    AugmentConfig augmentation;
    // Each sample draws its prompt mode uniformly from this list per step.
    std::vector<PromptMode> prompt_modes{PromptMode::none,
                                         PromptMode::one_point,
                                         PromptMode::two_points,
                                         PromptMode::five_points,
                                         PromptMode::five_points_one_negative,
                                         PromptMode::box,
                                         PromptMode::five_points_box};

    void validate() const;
};

struct StepRecord {
    int step = 0;
    double lr = 0;
    double total = 0;
    double bce = 0;
    double dice = 0;
    double ftl = 0;
};

struct TrainHooks {
    // Receives the CSV header and one row per step.
    std::ostream *step_log = nullptr;
    // Called every `check_every` steps (after the update) with the number of
    // completed steps; returning true stops training.
    int check_every = 0;
    std::function<bool(int)> should_stop;
    // Called every `checkpoint_every` completed steps.
    int checkpoint_every = 0;
    std::function<void(int)> checkpoint;
};

struct TrainResult {
    std::vector<StepRecord> log;
    int steps_run = 0;
    bool stopped_early = false;
};

inline constexpr const char *kStepLogHeader = "step,lr,total,bce,dice,ftl";

// Optimises every requires_grad parameter of the model on `data`. Throws
// NonFiniteError naming the step if the loss or a gradient stops being finite.
TrainResult train(SegmentationModel<float> &model, const std::vector<SegSample> &data, const TrainSetup &setup,
                  const TrainHooks &hooks = {});

// Foreground probabilities [H, W] without recording a tape.
Tensor<float> predict(const SegmentationModel<float> &model, const Tensor<float> &image, const PromptSet &prompts);

} // namespace loraseg
