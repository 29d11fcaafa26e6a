#include "run_config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>

namespace loraseg::cli {

using nlohmann::json;

ModelConfig RunConfig::model() const {
    ModelConfig m;
    m.seed = model_seed;
    return m;
}

void RunConfig::validate() const {
    synth.validate();
    if (n_samples < 1) throw ConfigError("n_samples must be positive");
    lora.validate();
    training.validate();
    if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be non-negative");
    if (!(threshold > 0 && threshold < 1)) throw ConfigError("threshold must be in (0, 1)");
    if (ranks.empty() || ablations.empty() || prompt_modes.empty())
        throw ConfigError("ranks, ablations and prompt_modes must be non-empty");
    for (int r : ranks)
        if (r < 1) throw ConfigError("ranks must be positive");
}

namespace {

template <typename E>
json names(const std::vector<E> &v) {
    json out = json::array();
    for (auto e : v) out.push_back(to_string(e));
    return out;
}

template <typename E, typename Parse>
std::vector<E> parse_names(const json &j, Parse parse, const char *key) {
    if (!j.is_array()) throw ConfigError(std::string("'") + key + "' must be an array of names");
    std::vector<E> out;
    for (const auto &e : j) out.push_back(parse(e.get<std::string>()));
    return out;
}

} // namespace

json to_json(const RunConfig &c) {
    json j;
    j["synth"] = loraseg::to_json(c.synth);
    j["n_samples"] = c.n_samples;
    j["model_seed"] = c.model_seed;
    j["lora"] = loraseg::to_json(c.lora);
    j["ablation"] = to_string(c.ablation);
    j["train"] = loraseg::to_json(c.training.train);
    j["weights"] = loraseg::to_json(c.training.weights);
    j["tversky"] = loraseg::to_json(c.training.tversky);
    j["augment"] = c.training.augment;
    j["augmentation"] = loraseg::to_json(c.training.augmentation);
    j["train_prompt_modes"] = names(c.training.prompt_modes);
    j["checkpoint_every"] = c.checkpoint_every;
    j["sampling"] = loraseg::to_json(c.sampling);
    j["threshold"] = c.threshold;
    j["ranks"] = c.ranks;
    j["ablations"] = names(c.ablations);
    j["prompt_modes"] = names(c.prompt_modes);
    j["eval_seed"] = c.eval_seed;
    j["split_seed"] = c.split_seed;
    return j;
}

void update(RunConfig &c, const json &j) {
    if (!j.is_object()) throw ConfigError("run config must be a JSON object");
    static const std::set<std::string> known{
        "synth",    "n_samples",    "model_seed",         "lora",             "ablation", "train",
        "weights",  "tversky",      "augment",            "augmentation",     "train_prompt_modes",
        "checkpoint_every",         "sampling",           "threshold",        "ranks",    "ablations",
        "prompt_modes",             "eval_seed",          "split_seed"};
    for (const auto &[key, _] : j.items())
        if (!known.count(key)) throw ConfigError("unknown key '" + key + "' in run config");
    try {
        if (j.contains("synth")) update(c.synth, j["synth"], "synth");
        if (j.contains("n_samples")) c.n_samples = j["n_samples"].get<int>();
        if (j.contains("model_seed")) c.model_seed = j["model_seed"].get<std::uint64_t>();
        if (j.contains("lora")) update(c.lora, j["lora"], "lora");
        if (j.contains("ablation")) c.ablation = ablation_from_string(j["ablation"].get<std::string>());
        if (j.contains("train")) update(c.training.train, j["train"], "train");
        if (j.contains("weights")) update(c.training.weights, j["weights"], "weights");
        if (j.contains("tversky")) update(c.training.tversky, j["tversky"], "tversky");
        if (j.contains("augment")) c.training.augment = j["augment"].get<bool>();
        if (j.contains("augmentation")) update(c.training.augmentation, j["augmentation"], "augmentation");
        if (j.contains("train_prompt_modes"))
            c.training.prompt_modes =
                parse_names<PromptMode>(j["train_prompt_modes"], prompt_mode_from_string, "train_prompt_modes");
        if (j.contains("checkpoint_every")) c.checkpoint_every = j["checkpoint_every"].get<int>();
        if (j.contains("sampling")) update(c.sampling, j["sampling"], "sampling");
        if (j.contains("threshold")) c.threshold = j["threshold"].get<double>();
        if (j.contains("ranks")) c.ranks = j["ranks"].get<std::vector<int>>();
        if (j.contains("ablations"))
            c.ablations = parse_names<AblationMode>(j["ablations"], ablation_from_string, "ablations");
        if (j.contains("prompt_modes"))
            c.prompt_modes = parse_names<PromptMode>(j["prompt_modes"], prompt_mode_from_string, "prompt_modes");
        if (j.contains("eval_seed")) c.eval_seed = j["eval_seed"].get<std::uint64_t>();
        if (j.contains("split_seed")) c.split_seed = j["split_seed"].get<std::uint64_t>();
    } catch (const json::exception &e) {
        throw ConfigError(std::string("bad run config value: ") + e.what());
    }
}

RunConfig load_run_config(const std::filesystem::path &path, RunConfig base) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error &e) {
        throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
    }
    update(base, j);
    return base;
}

void write_run_config(const std::filesystem::path &path, const RunConfig &c) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << to_json(c).dump(2) << '\n';
}

void apply_paper_scale(RunConfig &c) {
    // 1000 px padded up to the next multiple of 32.
    c.synth.size = 1024;
    c.training.train.total_steps = 20000;
    c.training.train.batch_size = 3;
}

std::filesystem::path default_output_root() {
    const char *env = std::getenv("LORASEG_OUT");
    return env && *env ? std::filesystem::path(env) : std::filesystem::path("runs");
}

} // namespace loraseg::cli
