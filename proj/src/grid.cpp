#include "loraseg/grid.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <limits>
#include <thread>

#include "loraseg/checkpoint.hpp"
#include "loraseg/config_io.hpp"
#include "loraseg/seed.hpp"

namespace loraseg {

namespace fs = std::filesystem;

void GridConfig::validate() const {
    lora.validate();
    training.validate();
    if (ranks.empty() || ablations.empty() || prompt_modes.empty())
        throw std::invalid_argument("grid needs at least one rank, ablation and prompt mode");
    for (int r : ranks)
        if (r < 1) throw std::invalid_argument("grid rank must be positive, got " + std::to_string(r));
    if (workers < 1) throw std::invalid_argument("grid needs at least one worker");
    if (!(threshold > 0 && threshold < 1)) throw std::invalid_argument("dice threshold must be in (0, 1)");
}

Rgb8 overlay_image(const Tensor<float> &image, const Tensor<float> &mask, const Tensor<float> &prob,
                   double threshold) {
    const int h = int(mask.dim(0)), w = int(mask.dim(1));
    // Min-max stretch per channel so normalised images stay viewable.
    Tensor<float> rgb({3, h, w});
    const std::size_t plane = std::size_t(h) * w;
    for (int c = 0; c < 3; ++c) {
        const float *src = image.data().data() + c * plane;
        float lo = src[0], hi = src[0];
        for (std::size_t i = 0; i < plane; ++i) lo = std::min(lo, src[i]), hi = std::max(hi, src[i]);
        const float span = hi > lo ? hi - lo : 1.0f;
        float *dst = rgb.mutable_data().data() + c * plane;
        for (std::size_t i = 0; i < plane; ++i) dst[i] = (src[i] - lo) / span;
    }
    Rgb8 out = to_rgb8(rgb);
    auto on = [&](const Tensor<float> &m, double t, int y, int x) { return m.data()[std::size_t(y) * w + x] >= t; };
    auto edge = [&](const Tensor<float> &m, double t, int y, int x) {
        if (!on(m, t, y, x)) return false;
        return y == 0 || x == 0 || y == h - 1 || x == w - 1 || !on(m, t, y - 1, x) || !on(m, t, y + 1, x) ||
               !on(m, t, y, x - 1) || !on(m, t, y, x + 1);
    };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            std::uint8_t *px = &out.pixels[(std::size_t(y) * w + x) * 3];
            if (edge(mask, 0.5, y, x)) px[0] = 0, px[1] = 255, px[2] = 0;
            if (edge(prob, threshold, y, x)) px[0] = 255, px[1] = 0, px[2] = 0;
        }
    return out;
}

PromptEval evaluate(const SegmentationModel<float> &model, const std::vector<SegSample> &samples, PromptMode mode,
                    std::uint64_t seed, const PromptSampling &sampling, double threshold,
                    const std::optional<fs::path> &overlay_dir) {
    PromptEval out;
    const std::uint64_t mode_seed = derive_seed(seed, std::uint64_t(mode));
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const SegSample &s = samples[i];
        PromptSet prompts;
        try {
            prompts = sample_prompts(s.mask, mode, derive_seed(mode_seed, i), sampling);
        } catch (const EmptyMaskError &) {
            ++out.excluded;
            continue;
        }
        const Tensor<float> prob = predict(model, s.image, prompts);
        const std::string id = s.source_id.empty() ? "sample" + std::to_string(i) : s.source_id;
        out.ids.push_back(id);
        out.dice.push_back(dice_score(prob, s.mask, threshold));
        try {
            out.auc.push_back(auc_score(prob, s.mask));
        } catch (const UndefinedMetric &) {
            out.auc.push_back(std::numeric_limits<double>::quiet_NaN());
            ++out.auc_undefined;
        }
        if (overlay_dir) write_png(*overlay_dir / (id + ".png"), overlay_image(s.image, s.mask, prob, threshold));
    }
    return out;
}

fs::path checkpoint_path(const fs::path &dir, const std::string &dataset, int rank, AblationMode ablation) {
    return dir / dataset / ("r" + std::to_string(rank) + "-" + to_string(ablation) + ".sl2l");
}

namespace {

struct Cell {
    std::size_t dataset;
    int rank;
    AblationMode ablation;
};

std::uint64_t cell_seed(std::uint64_t seed, const std::string &dataset, int rank, AblationMode ablation) {
    const std::string key = dataset + "/" + std::to_string(rank) + "/" + to_string(ablation);
    return derive_seed(seed, fnv1a64(key));
}

LoraConfig cell_lora(const GridConfig &cfg, const std::string &dataset, int rank, AblationMode ablation) {
    LoraConfig l = apply_ablation(cfg.lora, ablation);
    l.rank = rank;
    if (cfg.lora.alpha) l.alpha = *cfg.lora.alpha * rank / cfg.lora.rank;
    l.seed = cell_seed(cfg.seed, dataset, rank, ablation);
    return l;
}

TrainSetup cell_training(const GridConfig &cfg, const std::string &dataset, int rank, AblationMode ablation) {
    TrainSetup t = cfg.training;
    t.weights = ablation_setup(ablation).weights;
    t.train.seed = derive_seed(cell_seed(cfg.seed, dataset, rank, ablation), 1);
    return t;
}

std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10f", v);
    return buf;
}

MeanStd defined_mean_std(const std::vector<double> &values) {
    std::vector<double> kept;
    for (double v : values)
        if (!std::isnan(v)) kept.push_back(v);
    if (kept.empty()) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
    return mean_std(kept);
}

struct CellOutcome {
    std::vector<ReportRow> rows;
    bool trained = false;
};

CellOutcome run_cell(const GridConfig &cfg, const GridDataset &ds, int rank, AblationMode ablation) {
    const fs::path ckpt = checkpoint_path(cfg.checkpoint_dir, ds.name, rank, ablation);
    const LoraConfig lora = cell_lora(cfg, ds.name, rank, ablation);
    SegmentationModel<float> model(cfg.model);
    CellOutcome out;
    if (fs::exists(ckpt)) {
        const AdapterCheckpoint header = read_adapter_header(ckpt);
        if (header.lora.rank != lora.rank || header.lora.apply_to_encoder != lora.apply_to_encoder ||
            header.lora.apply_to_decoder != lora.apply_to_decoder)
            throw CheckpointError(ckpt.string() + " was trained with a different rank or adapter placement");
        if (model_config_to_text(header.model) != model_config_to_text(cfg.model))
            throw CheckpointError(ckpt.string() + " was trained on a different base model");
        load_adapters(model, ckpt);
    } else if (!cfg.train_missing) {
        throw MissingCheckpoint("missing checkpoint for " + ds.name + " rank " + std::to_string(rank) + " " +
                                to_string(ablation) + ": expected " + ckpt.string());
    } else {
        inject(model, lora);
        std::ofstream log;
        TrainHooks hooks;
        if (cfg.write_step_logs) {
            fs::create_directories(ckpt.parent_path());
            log.open(fs::path(ckpt).replace_extension(".csv"));
            hooks.step_log = &log;
        }
        train(model, ds.train, cell_training(cfg, ds.name, rank, ablation), hooks);
        save_adapters(model, lora, ckpt);
        out.trained = true;
    }

    const std::string hash = hex64(fnv1a64(cell_config_text(cfg, ds, rank, ablation)));
    for (PromptMode mode : cfg.prompt_modes) {
        std::optional<fs::path> overlays;
        if (cfg.overlay_dir) {
            overlays = *cfg.overlay_dir / ds.name / ("r" + std::to_string(rank) + "-" + to_string(ablation)) /
                       to_string(mode);
            fs::create_directories(*overlays);
        }
        const PromptEval ev = evaluate(model, ds.test, mode, cfg.seed, cfg.sampling, cfg.threshold, overlays);
        ReportRow row;
        row.dataset = ds.name;
        row.task = ds.task;
        row.rank = rank;
        row.ablation = ablation;
        row.prompt_mode = mode;
        row.n_samples = ev.dice.size();
        row.n_excluded = ev.excluded;
        row.dice = ev.dice.empty() ? MeanStd{std::numeric_limits<double>::quiet_NaN(), 0.0} : mean_std(ev.dice);
        row.auc = defined_mean_std(ev.auc);
        row.n_auc_undefined = ev.auc_undefined;
        row.seed = cfg.seed;
        row.config_hash = hash;
        row.per_sample_dice = ev.dice;
        out.rows.push_back(std::move(row));
    }
    return out;
}

} // namespace

std::string cell_config_text(const GridConfig &cfg, const GridDataset &dataset, int rank, AblationMode ablation) {
    const TrainSetup t = cell_training(cfg, dataset.name, rank, ablation);
    nlohmann::json j;
    j["model"] = nlohmann::json::parse(model_config_to_text(cfg.model));
    j["lora"] = to_json(cell_lora(cfg, dataset.name, rank, ablation));
    j["train"] = to_json(t.train);
    j["weights"] = to_json(t.weights);
    j["tversky"] = to_json(t.tversky);
    j["augment"] = t.augment;
    j["augmentation"] = to_json(t.augmentation);
    std::vector<std::string> modes;
    for (auto m : t.prompt_modes) modes.push_back(to_string(m));
    j["train_prompt_modes"] = modes;
    j["sampling"] = to_json(cfg.sampling);
    j["threshold"] = cfg.threshold;
    j["seed"] = cfg.seed;
    j["dataset"] = {{"name", dataset.name},
                    {"task", to_string(dataset.task)},
                    {"n_train", dataset.train.size()},
                    {"n_test", dataset.test.size()}};
    return j.dump();
}

EvalReport run_grid(const GridConfig &cfg, const std::vector<GridDataset> &datasets) {
    cfg.validate();
    std::vector<Cell> cells;
    for (std::size_t d = 0; d < datasets.size(); ++d)
        for (int r : cfg.ranks)
            for (AblationMode a : cfg.ablations) cells.push_back({d, r, a});

    std::vector<CellOutcome> outcomes(cells.size());
    std::vector<std::exception_ptr> errors(cells.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < cells.size();) {
            try {
                outcomes[i] = run_cell(cfg, datasets[cells[i].dataset], cells[i].rank, cells[i].ablation);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const int n_threads = std::min<int>(cfg.workers, int(cells.size()));
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    }
    for (auto &e : errors)
        if (e) std::rethrow_exception(e);

    EvalReport report;
    for (auto &o : outcomes) {
        (o.trained ? report.cells_trained : report.cells_loaded) += 1;
        for (auto &row : o.rows) report.rows.push_back(std::move(row));
    }
    return report;
}

void write_report_csv(std::ostream &os, const EvalReport &report) {
    os << kReportHeader << '\n';
    for (const auto &r : report.rows)
        os << r.dataset << ',' << to_string(r.task) << ',' << r.rank << ',' << to_string(r.ablation) << ','
           << to_string(r.prompt_mode) << ',' << r.n_samples << ',' << r.n_excluded << ',' << fmt(r.dice.mean) << ','
           << fmt(r.dice.std) << ',' << fmt(r.auc.mean) << ',' << fmt(r.auc.std) << ',' << r.seed << ','
           << r.config_hash << ',' << r.n_auc_undefined << '\n';
}

} // namespace loraseg
