#include "loraseg/config_io.hpp"

#include <cstdio>
#include <set>

namespace loraseg {

using nlohmann::json;

namespace {

// Each config lists its fields once; the same list drives both directions.
template <typename C, typename F>
void synth_fields(C &c, F &&f) {
    f("seed", c.seed);
    f("size", c.size);
    f("task", c.task);
    f("vessel_depth", c.vessel_depth);
    f("vessel_width_decay", c.vessel_width_decay);
    f("vessel_root_width", c.vessel_root_width);
    f("disc_radius_range", c.disc_radius_range);
    f("texture_amplitude", c.texture_amplitude);
}

template <typename C, typename F>
void train_fields(C &c, F &&f) {
    f("lr", c.lr);
    f("weight_decay", c.weight_decay);
    f("beta1", c.beta1);
    f("beta2", c.beta2);
    f("adam_eps", c.adam_eps);
    f("warmup_steps", c.warmup_steps);
    f("total_steps", c.total_steps);
    f("batch_size", c.batch_size);
    f("seed", c.seed);
    f("restart_period", c.restart_period);
    f("restart_mult", c.restart_mult);
    f("min_lr", c.min_lr);
    f("clip_norm", c.clip_norm);
}

template <typename C, typename F>
void lora_fields(C &c, F &&f) {
    f("rank", c.rank);
    f("alpha", c.alpha);
    f("apply_to_encoder", c.apply_to_encoder);
    f("apply_to_decoder", c.apply_to_decoder);
    f("targets", c.targets);
    f("init_std", c.init_std);
    f("seed", c.seed);
}

template <typename C, typename F>
void weight_fields(C &c, F &&f) {
    f("bce", c.bce);
    f("dice", c.dice);
    f("ftl", c.ftl);
}

template <typename C, typename F>
void tversky_fields(C &c, F &&f) {
    f("alpha", c.alpha);
    f("beta", c.beta);
    f("gamma", c.gamma);
}

template <typename C, typename F>
void augment_fields(C &c, F &&f) {
    f("hflip_p", c.hflip_p);
    f("vflip_p", c.vflip_p);
    f("rotate_p", c.rotate_p);
    f("max_rotation_deg", c.max_rotation_deg);
    f("crop_p", c.crop_p);
    f("crop_scale", c.crop_scale);
    f("perspective_p", c.perspective_p);
    f("perspective_distortion", c.perspective_distortion);
    f("color_p", c.color_p);
}

template <typename C, typename F>
void sampling_fields(C &c, F &&f) {
    f("box_jitter", c.box_jitter);
}

template <typename V>
json encode(const V &v) {
    return json(v);
}
json encode(Task t) { return to_string(t); }
json encode(const std::optional<double> &v) { return v ? json(*v) : json(nullptr); }
json encode(const std::set<Projection> &s) {
    json out = json::array();
    for (auto p : s) out.push_back(to_string(p));
    return out;
}

template <typename V>
void decode(const json &j, V &v) {
    v = j.get<V>();
}
void decode(const json &j, Task &t) { t = task_from_string(j.get<std::string>()); }
void decode(const json &j, std::optional<double> &v) {
    if (j.is_null())
        v.reset();
    else
        v = j.get<double>();
}
void decode(const json &j, std::set<Projection> &s) {
    s.clear();
    for (const auto &e : j) s.insert(projection_from_string(e.get<std::string>()));
}

template <typename C, typename Fields>
json dump(const C &c, Fields fields) {
    json j = json::object();
    fields(c, [&](const char *name, const auto &v) { j[name] = encode(v); });
    return j;
}

template <typename C, typename Fields>
void load(C &c, const json &j, std::string_view where, Fields fields) {
    if (!j.is_object()) throw ConfigError("config section '" + std::string(where) + "' must be an object");
    std::set<std::string> known;
    fields(c, [&](const char *name, auto &) { known.insert(name); });
    for (const auto &[key, _] : j.items())
        if (!known.count(key)) throw ConfigError("unknown key '" + key + "' in config section '" + std::string(where) + "'");
    fields(c, [&](const char *name, auto &v) {
        const auto it = j.find(name);
        if (it == j.end()) return;
        try {
            decode(*it, v);
        } catch (const json::exception &e) {
            throw ConfigError("bad value for '" + std::string(where) + "." + name + "': " + e.what());
        } catch (const std::invalid_argument &e) {
            throw ConfigError("bad value for '" + std::string(where) + "." + name + "': " + e.what());
        }
    });
}

} // namespace

#define LORASEG_CONFIG_IO(Type, fields)                                                                      \
    json to_json(const Type &c) { return dump(c, [](auto &x, auto &&f) { fields(x, f); }); }                \
    void update(Type &c, const json &j, std::string_view where) {                                           \
        load(c, j, where, [](auto &x, auto &&f) { fields(x, f); });                                         \
    }

LORASEG_CONFIG_IO(SynthConfig, synth_fields)
LORASEG_CONFIG_IO(TrainConfig, train_fields)
LORASEG_CONFIG_IO(LoraConfig, lora_fields)
LORASEG_CONFIG_IO(CompositeWeights, weight_fields)
LORASEG_CONFIG_IO(TverskyParams, tversky_fields)
LORASEG_CONFIG_IO(AugmentConfig, augment_fields)
LORASEG_CONFIG_IO(PromptSampling, sampling_fields)

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

} // namespace loraseg
