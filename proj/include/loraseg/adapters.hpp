#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "loraseg/backbone.hpp"
#include "loraseg/lora.hpp"

namespace loraseg {

template <typename T>
struct AdapterRegistry {
    struct Entry {
        std::string name; // e.g. "encoder.stage2.block1.attn.q"
        bool in_encoder;
        Projection projection;
        Linear<T> *layer;
    };
    LoraConfig config;
    std::vector<Entry> entries;

    std::size_t size() const { return entries.size(); }
    std::size_t parameter_count() const;
    std::size_t count_in_decoder() const;
};

// Attaches adapters to every selected attention projection and freezes all
// other parameters. Throws std::logic_error when adapters are already present
// and std::invalid_argument on an invalid config.
template <typename T>
AdapterRegistry<T> inject(SegmentationModel<T> &model, const LoraConfig &cfg);

template <typename T>
bool has_adapters(SegmentationModel<T> &model);

// Folds every attached adapter into its base weight and detaches it.
// Throws when nothing is attached.
template <typename T>
std::size_t merge_all(SegmentationModel<T> &model);

// requires_grad parameters over base (non-adapter) parameters.
template <typename T>
double trainable_fraction(SegmentationModel<T> &model);

// ModelConfig as JSON text, round-trippable.
std::string model_config_to_text(const ModelConfig &cfg);
ModelConfig model_config_from_text(const std::string &text);

inline constexpr const char *kLoraConfigEntry = "__lora_config__";
inline constexpr const char *kModelConfigEntry = "__model_config__";
inline constexpr const char *kRunConfigEntry = "__run_config__";

// Adapter factors plus the LoRA and base-model configs. A non-empty
// `run_note` (free text, typically the resolved run config) is stored too.
template <typename T>
void save_adapters(SegmentationModel<T> &model, const LoraConfig &cfg, const std::filesystem::path &path,
                   const std::string &run_note = {});

struct AdapterCheckpoint {
    ModelConfig model;
    LoraConfig lora;
    std::string run_note;
};

AdapterCheckpoint read_adapter_header(const std::filesystem::path &path);

// Injects adapters into a model built from the stored base config and loads
// their factors. The model must not carry adapters yet.
template <typename T>
LoraConfig load_adapters(SegmentationModel<T> &model, const std::filesystem::path &path);

// Every parameter (adapters included) plus the model config.
template <typename T>
void save_model(SegmentationModel<T> &model, const std::filesystem::path &path);
template <typename T>
void load_model_weights(SegmentationModel<T> &model, const std::filesystem::path &path);

} // namespace loraseg
