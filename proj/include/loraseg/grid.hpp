#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "loraseg/adapters.hpp"
#include "loraseg/data.hpp"
#include "loraseg/eval.hpp"
#include "loraseg/train.hpp"

namespace loraseg {

struct GridDataset {
    std::string name;
    Task task = Task::vessel;
    std::vector<SegSample> train;
    std::vector<SegSample> test;
};

struct GridConfig {
    ModelConfig model;
    // Rank and placement are overridden per cell.
    LoraConfig lora;
    // Loss weights are overridden per cell.
    TrainSetup training;
    std::vector<int> ranks{8, 16, 32, 64};
    std::vector<AblationMode> ablations{AblationMode::full,         AblationMode::bce_only,
                                        AblationMode::ftl_only,     AblationMode::dice_only,
                                        AblationMode::encoder_only, AblationMode::decoder_only};
    std::vector<PromptMode> prompt_modes{PromptMode::none,       PromptMode::one_point,
                                         PromptMode::two_points, PromptMode::five_points,
                                         PromptMode::five_points_one_negative, PromptMode::box,
                                         PromptMode::five_points_box};
    PromptSampling sampling;
    std::uint64_t seed = 0;
    double threshold = 0.5;

    std::filesystem::path checkpoint_dir = "checkpoints";
    // When false a missing checkpoint is an error instead of a training run.
    bool train_missing = true;
    // Cells trained or evaluated concurrently; results do not depend on it.
    int workers = 1;
    // One overlay PNG per evaluated sample and prompt mode when set.
    std::optional<std::filesystem::path> overlay_dir;
    // Per-cell CSV step logs next to the checkpoints.
    bool write_step_logs = true;

    void validate() const;
};

// Predictions and metrics of one model on one sample list under one prompt mode.
struct PromptEval {
    std::vector<std::string> ids;
    std::vector<double> dice;
    // NaN where AUC is undefined for that sample.
    std::vector<double> auc;
    std::size_t excluded = 0;
    std::size_t auc_undefined = 0;
};

// Prompts for sample i come from derive_seed(derive_seed(seed, mode), i), so
// every model sees the same prompts. Samples with an empty mask are excluded
// from prompted modes.
PromptEval evaluate(const SegmentationModel<float> &model, const std::vector<SegSample> &samples, PromptMode mode,
                    std::uint64_t seed, const PromptSampling &sampling = {}, double threshold = 0.5,
                    const std::optional<std::filesystem::path> &overlay_dir = std::nullopt);

struct ReportRow {
    std::string dataset;
    Task task = Task::vessel;
    int rank = 0;
    AblationMode ablation = AblationMode::full;
    PromptMode prompt_mode = PromptMode::none;
    std::size_t n_samples = 0;
    std::size_t n_excluded = 0;
    MeanStd dice;
    // Over samples with a defined AUC; NaN when none has one.
    MeanStd auc;
    std::size_t n_auc_undefined = 0;
    std::uint64_t seed = 0;
    std::string config_hash;
    std::vector<double> per_sample_dice;
};

struct EvalReport {
    std::vector<ReportRow> rows;
    std::size_t cells_trained = 0;
    std::size_t cells_loaded = 0;
};

inline constexpr const char *kReportHeader = "dataset,task,rank,ablation,prompt_mode,n_samples,n_excluded,dice_mean,"
                                             "dice_std,auc_mean,auc_std,seed,config_hash,n_auc_undefined";

void write_report_csv(std::ostream &os, const EvalReport &report);

std::filesystem::path checkpoint_path(const std::filesystem::path &dir, const std::string &dataset, int rank,
                                      AblationMode ablation);

class MissingCheckpoint : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Everything that determines a cell's results, as canonical JSON text.
std::string cell_config_text(const GridConfig &cfg, const GridDataset &dataset, int rank, AblationMode ablation);

// Rows are ordered dataset, rank, ablation, prompt mode, whatever the worker count.
EvalReport run_grid(const GridConfig &cfg, const std::vector<GridDataset> &datasets);

// Image with the ground-truth contour in green and the prediction contour in red.
Rgb8 overlay_image(const Tensor<float> &image, const Tensor<float> &mask, const Tensor<float> &prob,
                   double threshold = 0.5);

} // namespace loraseg
