#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

#include <json.hpp>

#include "loraseg/data.hpp"
#include "loraseg/eval.hpp"
#include "loraseg/losses.hpp"
#include "loraseg/lora.hpp"
#include "loraseg/optim.hpp"

// JSON views of the configuration structs. `update` overwrites only the keys
// present in the object and rejects unknown ones, so partial files layer on
// top of defaults.

namespace loraseg {

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

nlohmann::json to_json(const SynthConfig &c);
nlohmann::json to_json(const TrainConfig &c);
nlohmann::json to_json(const LoraConfig &c);
nlohmann::json to_json(const CompositeWeights &c);
nlohmann::json to_json(const TverskyParams &c);
nlohmann::json to_json(const AugmentConfig &c);
nlohmann::json to_json(const PromptSampling &c);

// `where` names the section in error messages, e.g. "train".
void update(SynthConfig &c, const nlohmann::json &j, std::string_view where);
void update(TrainConfig &c, const nlohmann::json &j, std::string_view where);
void update(LoraConfig &c, const nlohmann::json &j, std::string_view where);
void update(CompositeWeights &c, const nlohmann::json &j, std::string_view where);
void update(TverskyParams &c, const nlohmann::json &j, std::string_view where);
void update(AugmentConfig &c, const nlohmann::json &j, std::string_view where);
void update(PromptSampling &c, const nlohmann::json &j, std::string_view where);

// 64-bit FNV-1a, rendered as 16 lowercase hex digits.
std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t v);

} // namespace loraseg
