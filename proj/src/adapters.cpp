#include "loraseg/adapters.hpp"

#include <map>
#include <stdexcept>

#include <json.hpp>

#include "loraseg/checkpoint.hpp"
#include "loraseg/seed.hpp"

namespace loraseg {

namespace {

bool is_adapter_name(const std::string &name) { return name.ends_with(".lora_A") || name.ends_with(".lora_B"); }

template <typename T>
std::vector<float> as_float(const Tensor<T> &t) {
    return {t.data().begin(), t.data().end()};
}

template <typename T>
void assign(Tensor<T> &dst, const CheckpointEntry &e) {
    if (e.kind != CheckpointEntry::Kind::f32 || e.shape != dst.shape())
        throw CheckpointError("entry " + e.name + " has shape " + shape_str(e.shape) + ", expected " +
                              shape_str(dst.shape()));
    auto d = dst.mutable_data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<T>(e.values[i]);
}

const CheckpointEntry &find_note(const std::vector<CheckpointEntry> &entries, const char *name,
                                 const std::filesystem::path &path) {
    for (const auto &e : entries)
        if (e.name == name && e.kind == CheckpointEntry::Kind::text) return e;
    throw CheckpointError(path.string() + " has no " + name + " entry");
}

} // namespace

template <typename T>
std::size_t AdapterRegistry<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto &e : entries) n += e.layer->adapter().parameter_count();
    return n;
}

template <typename T>
std::size_t AdapterRegistry<T>::count_in_decoder() const {
    std::size_t n = 0;
    for (const auto &e : entries) n += !e.in_encoder;
    return n;
}

template <typename T>
bool has_adapters(SegmentationModel<T> &model) {
    for (auto &site : model.attention_sites())
        for (auto p : {Projection::q, Projection::k, Projection::v, Projection::out})
            if (site.attention->projection(p).has_adapter()) return true;
    return false;
}

template <typename T>
AdapterRegistry<T> inject(SegmentationModel<T> &model, const LoraConfig &cfg) {
    cfg.validate();
    if (has_adapters(model)) throw std::logic_error("inject: model already carries adapters");
    model.freeze_all();
    AdapterRegistry<T> reg;
    reg.config = cfg;
    std::uint64_t index = 0;
    for (auto &site : model.attention_sites()) {
        if (site.in_encoder ? !cfg.apply_to_encoder : !cfg.apply_to_decoder) continue;
        for (Projection p : cfg.targets) {
            Linear<T> &layer = site.attention->projection(p);
            layer.attach(LoraAdapter<T>(layer.in_features(), layer.out_features(), cfg.rank, cfg.effective_alpha(),
                                        cfg.init_std, derive_seed(cfg.seed, index++)));
            reg.entries.push_back({site.name + "." + to_string(p), site.in_encoder, p, &layer});
        }
    }
    return reg;
}

template <typename T>
std::size_t merge_all(SegmentationModel<T> &model) {
    std::size_t n = 0;
    for (auto &site : model.attention_sites())
        for (auto p : {Projection::q, Projection::k, Projection::v, Projection::out}) {
            Linear<T> &layer = site.attention->projection(p);
            if (!layer.has_adapter()) continue;
            layer.merge_adapter();
            ++n;
        }
    if (n == 0) throw std::logic_error("merge: no adapters attached (already merged or never injected)");
    return n;
}

template <typename T>
double trainable_fraction(SegmentationModel<T> &model) {
    std::size_t trainable = 0, base = 0;
    for (const auto &p : model.parameters()) {
        if (p.tensor->requires_grad()) trainable += p.tensor->numel();
        if (!is_adapter_name(p.name)) base += p.tensor->numel();
    }
    return base ? double(trainable) / double(base) : 0.0;
}

std::string model_config_to_text(const ModelConfig &cfg) {
    nlohmann::json j;
    j["encoder"] = {{"patch_stride", cfg.encoder.patch_stride},   {"stage_depths", cfg.encoder.stage_depths},
                    {"stage_dims", cfg.encoder.stage_dims},       {"window_sizes", cfg.encoder.window_sizes},
                    {"heads", cfg.encoder.heads},                 {"mlp_ratio", cfg.encoder.mlp_ratio}};
    j["decoder"] = {{"num_attention_blocks", cfg.decoder.num_attention_blocks},
                    {"token_dim", cfg.decoder.token_dim},
                    {"heads", cfg.decoder.heads},
                    {"mlp_dim", cfg.decoder.mlp_dim},
                    {"cross_attention_downsample", cfg.decoder.cross_attention_downsample},
                    {"num_mask_tokens", cfg.decoder.num_mask_tokens}};
    j["seed"] = cfg.seed;
    return j.dump();
}

ModelConfig model_config_from_text(const std::string &text) {
    const auto j = nlohmann::json::parse(text);
    ModelConfig c;
    const auto &e = j.at("encoder");
    c.encoder.patch_stride = e.at("patch_stride").get<int>();
    c.encoder.stage_depths = e.at("stage_depths").get<std::vector<int>>();
    c.encoder.stage_dims = e.at("stage_dims").get<std::vector<int>>();
    c.encoder.window_sizes = e.at("window_sizes").get<std::vector<int>>();
    c.encoder.heads = e.at("heads").get<std::vector<int>>();
    c.encoder.mlp_ratio = e.at("mlp_ratio").get<int>();
    const auto &d = j.at("decoder");
    c.decoder.num_attention_blocks = d.at("num_attention_blocks").get<int>();
    c.decoder.token_dim = d.at("token_dim").get<int>();
    c.decoder.heads = d.at("heads").get<int>();
    c.decoder.mlp_dim = d.at("mlp_dim").get<int>();
    c.decoder.cross_attention_downsample = d.at("cross_attention_downsample").get<int>();
    c.decoder.num_mask_tokens = d.at("num_mask_tokens").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.validate();
    return c;
}

template <typename T>
void save_adapters(SegmentationModel<T> &model, const LoraConfig &cfg, const std::filesystem::path &path,
                   const std::string &run_note) {
    std::vector<CheckpointEntry> entries;
    entries.push_back(CheckpointEntry::note(kLoraConfigEntry, cfg.to_text()));
    entries.push_back(CheckpointEntry::note(kModelConfigEntry, model_config_to_text(model.config())));
    if (!run_note.empty()) entries.push_back(CheckpointEntry::note(kRunConfigEntry, run_note));
    const std::size_t n_notes = entries.size();
    for (const auto &p : model.parameters()) {
        if (!is_adapter_name(p.name)) continue;
        if (p.tensor->shape()[p.name.ends_with(".lora_A") ? 0 : 1] != cfg.rank)
            throw std::invalid_argument("save_adapters: " + p.name + " does not have rank " + std::to_string(cfg.rank));
        entries.push_back(CheckpointEntry::tensor(p.name, p.tensor->shape(), as_float(*p.tensor)));
    }
    if (entries.size() == n_notes) throw std::logic_error("save_adapters: model carries no adapters");
    write_checkpoint(path, entries);
}

AdapterCheckpoint read_adapter_header(const std::filesystem::path &path) {
    const auto entries = read_checkpoint(path);
    AdapterCheckpoint out{model_config_from_text(find_note(entries, kModelConfigEntry, path).text),
                          LoraConfig::from_text(find_note(entries, kLoraConfigEntry, path).text),
                          {}};
    for (const auto &e : entries)
        if (e.name == kRunConfigEntry && e.kind == CheckpointEntry::Kind::text) out.run_note = e.text;
    return out;
}

template <typename T>
LoraConfig load_adapters(SegmentationModel<T> &model, const std::filesystem::path &path) {
    const auto entries = read_checkpoint(path);
    const LoraConfig cfg = LoraConfig::from_text(find_note(entries, kLoraConfigEntry, path).text);
    inject(model, cfg);
    std::map<std::string, const CheckpointEntry *> by_name;
    for (const auto &e : entries) by_name[e.name] = &e;
    for (auto &p : model.parameters()) {
        if (!is_adapter_name(p.name)) continue;
        const auto it = by_name.find(p.name);
        if (it == by_name.end()) throw CheckpointError(path.string() + " lacks adapter tensor " + p.name);
        assign(*p.tensor, *it->second);
    }
    return cfg;
}

template <typename T>
void save_model(SegmentationModel<T> &model, const std::filesystem::path &path) {
    std::vector<CheckpointEntry> entries;
    entries.push_back(CheckpointEntry::note(kModelConfigEntry, model_config_to_text(model.config())));
    for (const auto &p : model.parameters())
        entries.push_back(CheckpointEntry::tensor(p.name, p.tensor->shape(), as_float(*p.tensor)));
    write_checkpoint(path, entries);
}

template <typename T>
void load_model_weights(SegmentationModel<T> &model, const std::filesystem::path &path) {
    const auto entries = read_checkpoint(path);
    std::map<std::string, const CheckpointEntry *> by_name;
    for (const auto &e : entries)
        if (e.kind == CheckpointEntry::Kind::f32) by_name[e.name] = &e;
    std::size_t used = 0;
    for (auto &p : model.parameters()) {
        const auto it = by_name.find(p.name);
        if (it == by_name.end()) throw CheckpointError(path.string() + " lacks parameter " + p.name);
        assign(*p.tensor, *it->second);
        ++used;
    }
    if (used != by_name.size()) throw CheckpointError(path.string() + " holds tensors the model does not have");
}

#define LORASEG_INSTANTIATE_ADAPTERS(T)                                                        \
    template struct AdapterRegistry<T>;                                                        \
    template bool has_adapters(SegmentationModel<T> &);                                        \
    template AdapterRegistry<T> inject(SegmentationModel<T> &, const LoraConfig &);            \
    template std::size_t merge_all(SegmentationModel<T> &);                                    \
    template double trainable_fraction(SegmentationModel<T> &);                                \
    template void save_adapters(SegmentationModel<T> &, const LoraConfig &, const std::filesystem::path &,      \
                                const std::string &);                                                          \
    template LoraConfig load_adapters(SegmentationModel<T> &, const std::filesystem::path &);  \
    template void save_model(SegmentationModel<T> &, const std::filesystem::path &);           \
    template void load_model_weights(SegmentationModel<T> &, const std::filesystem::path &);

LORASEG_INSTANTIATE_ADAPTERS(float)
LORASEG_INSTANTIATE_ADAPTERS(double)

} // namespace loraseg
