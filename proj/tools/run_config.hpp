#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "loraseg/backbone.hpp"
#include "loraseg/config_io.hpp"
#include "loraseg/eval.hpp"
#include "loraseg/train.hpp"

namespace loraseg::cli {

// Everything a command needs, resolved from defaults, the optional preset,
// the config file and finally command-line flags.
struct RunConfig {
    SynthConfig synth;
    int n_samples = 16;
    std::uint64_t model_seed = 0;
    LoraConfig lora;
    AblationMode ablation = AblationMode::full;
    TrainSetup training;
    // Adapter snapshots during training; 0 keeps only the final one.
    int checkpoint_every = 500;
    PromptSampling sampling;
    double threshold = 0.5;
    std::vector<int> ranks{8, 16, 32, 64};
    std::vector<AblationMode> ablations{AblationMode::full,         AblationMode::bce_only,
                                        AblationMode::ftl_only,     AblationMode::dice_only,
                                        AblationMode::encoder_only, AblationMode::decoder_only};
    std::vector<PromptMode> prompt_modes{PromptMode::none,       PromptMode::one_point,
                                         PromptMode::two_points, PromptMode::five_points,
                                         PromptMode::five_points_one_negative, PromptMode::box,
                                         PromptMode::five_points_box};
    std::uint64_t eval_seed = 0;
    std::uint64_t split_seed = kDefaultSplitSeed;

    ModelConfig model() const;
    void validate() const;
};

nlohmann::json to_json(const RunConfig &c);
// Layers the keys present in `j` over `c`; unknown keys throw ConfigError.
void update(RunConfig &c, const nlohmann::json &j);
RunConfig load_run_config(const std::filesystem::path &path, RunConfig base);
void write_run_config(const std::filesystem::path &path, const RunConfig &c);

// Full-resolution, long-schedule defaults.
void apply_paper_scale(RunConfig &c);

// Output root: $LORASEG_OUT when set, else "runs".
std::filesystem::path default_output_root();

} // namespace loraseg::cli
