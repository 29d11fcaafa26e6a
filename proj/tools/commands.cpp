#include "commands.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <random>

#include <CLI11.hpp>

#include "loraseg/adapters.hpp"
#include "loraseg/checkpoint.hpp"
#include "loraseg/grid.hpp"
#include "loraseg/ops.hpp"
#include "run_config.hpp"

namespace loraseg::cli {

namespace fs = std::filesystem;

namespace {

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

bool non_empty_dir(const fs::path &p) { return fs::is_directory(p) && !fs::is_empty(p); }

void require_fresh(const fs::path &dir, bool force) {
    if (non_empty_dir(dir) && !force)
        throw UsageError("output directory " + dir.string() + " is not empty (pass --force to overwrite)");
}

std::string dataset_name(const fs::path &dir) {
    fs::path p = dir.lexically_normal();
    if (p.filename().empty()) p = p.parent_path();
    return p.filename().string();
}

// Synthetic train and test sets come from independent derived seeds.
std::vector<SegSample> synthetic_split(const SynthConfig &synth, int n, Split split) {
    SynthConfig c = synth;
    c.seed = derive_seed(synth.seed, split == Split::train ? 0 : 1);
    return generate_dataset(c, n);
}

std::vector<SegSample> load_split(const fs::path &dir, const std::string &split, Task task, std::uint64_t split_seed,
                                  std::ostream &out) {
    auto load = [&](Split s) {
        DatasetLoad d = load_dataset(dir, s, task, split_seed);
        if (d.skipped_orphans)
            out << "warning: skipped " << d.skipped_orphans << " image(s) without a mask in " << dir.string() << '\n';
        if (d.used_random_split) out << "split: seeded 75/25 split, seed " << d.split_seed << '\n';
        return d.samples;
    };
    if (split == "train") return load(Split::train);
    if (split == "test") return load(Split::test);
    if (split == "all") {
        auto a = load(Split::train), b = load(Split::test);
        a.insert(a.end(), b.begin(), b.end());
        return a;
    }
    throw UsageError("--split must be train, test or all, got '" + split + "'");
}

template <typename E, typename Parse>
std::vector<E> parse_list(const std::vector<std::string> &names, Parse parse) {
    std::vector<E> out;
    for (const auto &n : names) out.push_back(parse(n));
    return out;
}

AblationMode infer_ablation(const AdapterCheckpoint &h) {
    if (!h.run_note.empty()) {
        const auto j = nlohmann::json::parse(h.run_note, nullptr, false);
        if (j.is_object() && j.contains("ablation")) return ablation_from_string(j["ablation"].get<std::string>());
    }
    if (!h.lora.apply_to_decoder) return AblationMode::encoder_only;
    if (!h.lora.apply_to_encoder) return AblationMode::decoder_only;
    return AblationMode::full;
}

// Flags shared by several subcommands. Each is applied only when given, on
// top of the preset and the config file.
struct Flags {
    std::string config;
    bool paper_scale = false;

    std::string task;
    int n = 0;
    int size = 0;
    std::uint64_t seed = 0;
    std::uint64_t data_seed = 0;
    int rank = 0;
    double alpha = 0;
    std::string ablation;
    int steps = 0;
    int warmup = 0;
    double lr = 0;
    int batch = 0;
    bool no_augment = false;
    int checkpoint_every = 0;
    std::vector<int> ranks;
    std::vector<std::string> ablations;
    std::vector<std::string> prompt_modes;

    // The same flag may be registered on several subcommands.
    std::map<std::string, std::vector<CLI::Option *>> opts;

    bool given(const std::string &name) const {
        const auto it = opts.find(name);
        if (it == opts.end()) return false;
        for (const auto *o : it->second)
            if (o->count() > 0) return true;
        return false;
    }
};

RunConfig resolve(const Flags &f) {
    RunConfig c;
    if (f.paper_scale) apply_paper_scale(c);
    if (!f.config.empty()) c = load_run_config(f.config, c);
    if (f.given("task")) c.synth.task = task_from_string(f.task);
    if (f.given("n")) c.n_samples = f.n;
    if (f.given("size")) c.synth.size = f.size;
    if (f.given("data-seed")) c.synth.seed = f.data_seed;
    if (f.given("rank")) c.lora.rank = f.rank;
    if (f.given("alpha")) c.lora.alpha = f.alpha;
    if (f.given("ablation")) c.ablation = ablation_from_string(f.ablation);
    if (f.given("steps")) c.training.train.total_steps = f.steps;
    if (f.given("warmup")) c.training.train.warmup_steps = f.warmup;
    if (f.given("lr")) c.training.train.lr = f.lr;
    if (f.given("batch")) c.training.train.batch_size = f.batch;
    if (f.given("no-augment")) c.training.augment = false;
    if (f.given("checkpoint-every")) c.checkpoint_every = f.checkpoint_every;
    if (f.given("ranks")) c.ranks = f.ranks;
    if (f.given("ablations")) c.ablations = parse_list<AblationMode>(f.ablations, ablation_from_string);
    if (f.given("prompt-modes")) c.prompt_modes = parse_list<PromptMode>(f.prompt_modes, prompt_mode_from_string);
    // A training warm-up longer than the run is shortened rather than rejected.
    if (c.training.train.warmup_steps >= c.training.train.total_steps && !f.given("warmup"))
        c.training.train.warmup_steps = c.training.train.total_steps / 10;
    c.validate();
    return c;
}

CLI::Option *add_option(CLI::App &app, Flags &f, const std::string &name, auto &var, const std::string &help) {
    CLI::Option *o = app.add_option("--" + name, var, help);
    f.opts[name].push_back(o);
    return o;
}

// ---- generate --------------------------------------------------------------

int cmd_generate(const Flags &f, const fs::path &out_flag, bool force, std::ostream &out) {
    RunConfig c = resolve(f);
    if (f.given("seed")) c.synth.seed = f.seed;
    const fs::path dir = out_flag.empty() ? default_output_root() / "data" /
                                                (to_string(c.synth.task) + "-n" + std::to_string(c.n_samples) +
                                                 "-s" + std::to_string(c.synth.seed))
                                          : out_flag;
    require_fresh(dir, force);
    if (force) {
        fs::remove_all(dir / "images");
        fs::remove_all(dir / "masks");
    }
    std::vector<RawSample> raws(static_cast<std::size_t>(c.n_samples));
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < c.n_samples; ++i) {
        SynthConfig s = c.synth;
        s.seed = derive_seed(c.synth.seed, std::uint64_t(i));
        raws[i] = render_sample(s);
        char id[32];
        std::snprintf(id, sizeof id, "%s_%04d", to_string(c.synth.task).c_str(), i);
        raws[i].source_id = id;
    }
    for (const auto &r : raws) write_pair(dir, r);
    write_run_config(dir / "config.json", c);
    out << "wrote " << c.n_samples << " " << to_string(c.synth.task) << " samples to " << dir.string() << '\n';
    return 0;
}

// ---- train -----------------------------------------------------------------

struct TrainFlags {
    std::string data;
    std::string split = "train";
    std::string out;
    bool force = false;
};

int cmd_train(const Flags &f, const TrainFlags &t, std::ostream &out, std::ostream &err) {
    RunConfig c = resolve(f);
    if (f.given("seed")) {
        c.training.train.seed = f.seed;
        c.lora.seed = f.seed;
    }
    const LoraConfig lora = apply_ablation(c.lora, c.ablation);
    c.training.weights = ablation_setup(c.ablation).weights;

    const fs::path dir = t.out.empty() ? default_output_root() / "train" /
                                             (to_string(c.synth.task) + "-r" + std::to_string(lora.rank) + "-" +
                                              to_string(c.ablation))
                                       : fs::path(t.out);
    require_fresh(dir, t.force);
    fs::create_directories(dir);

    const std::vector<SegSample> data = t.data.empty()
                                            ? synthetic_split(c.synth, c.n_samples, Split::train)
                                            : load_split(t.data, t.split, c.synth.task, c.split_seed, out);
    if (data.empty()) throw std::runtime_error("no training samples found");

    SegmentationModel<float> model(c.model());
    const AdapterRegistry<float> reg = inject(model, lora);
    write_run_config(dir / "config.json", c);
    const std::string note = to_json(c).dump();
    const fs::path ckpt = dir / "adapters.sl2l";

    std::ofstream log(dir / "steps.csv");
    TrainHooks hooks;
    hooks.step_log = &log;
    int last_saved = 0;
    if (c.checkpoint_every > 0) {
        hooks.checkpoint_every = c.checkpoint_every;
        hooks.checkpoint = [&](int step) {
            save_adapters(model, lora, ckpt, note);
            last_saved = step;
        };
    }
    out << "training " << data.size() << " samples, " << reg.size() << " adapters, "
        << c.training.train.total_steps << " steps\n";
    try {
        train(model, data, c.training, hooks);
    } catch (const NonFiniteError &e) {
        log.flush();
        err << "error: " << e.what() << '\n';
        if (last_saved > 0)
            err << "last good checkpoint (" << last_saved << " completed steps) kept at " << ckpt.string() << '\n';
        else
            err << "no checkpoint was written before the failure\n";
        return 3;
    }
    save_adapters(model, lora, ckpt, note);

    double dice = 0;
    for (PromptMode m : c.prompt_modes) {
        const PromptEval ev = evaluate(model, data, m, c.eval_seed, c.sampling, c.threshold);
        dice += ev.dice.empty() ? 0.0 : mean_std(ev.dice).mean;
    }
    out << "checkpoint " << ckpt.string() << '\n';
    out << "train_dice " << dice / double(c.prompt_modes.size()) << '\n';
    out << "trainable_fraction " << trainable_fraction(model) << '\n';
    return 0;
}

// ---- eval ------------------------------------------------------------------

struct EvalFlags {
    std::string checkpoint;
    std::string data;
    std::string split = "test";
    std::string out;
    bool dump_overlays = false;
};

int cmd_eval(const Flags &f, const EvalFlags &e, std::ostream &out) {
    RunConfig c = resolve(f);
    if (f.given("seed")) c.eval_seed = f.seed;
    if (!fs::exists(e.checkpoint)) throw MissingCheckpoint("checkpoint not found: " + e.checkpoint);
    const AdapterCheckpoint header = read_adapter_header(e.checkpoint);
    SegmentationModel<float> model(header.model);
    load_adapters(model, e.checkpoint);

    const std::vector<SegSample> data = e.data.empty()
                                            ? synthetic_split(c.synth, c.n_samples, Split::test)
                                            : load_split(e.data, e.split, c.synth.task, c.split_seed, out);
    const std::string name = e.data.empty() ? "synth-" + to_string(c.synth.task) : dataset_name(e.data);
    const fs::path csv = e.out.empty() ? default_output_root() / "eval" / fs::path(e.checkpoint).stem() / "report.csv"
                                       : fs::path(e.out);
    if (csv.has_parent_path()) fs::create_directories(csv.parent_path());

    nlohmann::json h;
    h["run"] = header.run_note;
    h["lora"] = header.lora.to_text();
    h["model"] = model_config_to_text(header.model);
    h["sampling"] = to_json(c.sampling);
    h["threshold"] = c.threshold;
    h["seed"] = c.eval_seed;
    h["dataset"] = {{"name", name}, {"n", data.size()}};
    const std::string hash = hex64(fnv1a64(h.dump()));

    EvalReport report;
    for (PromptMode m : c.prompt_modes) {
        std::optional<fs::path> overlays;
        if (e.dump_overlays) {
            overlays = csv.parent_path() / "overlays" / to_string(m);
            fs::create_directories(*overlays);
        }
        const PromptEval ev = evaluate(model, data, m, c.eval_seed, c.sampling, c.threshold, overlays);
        ReportRow row;
        row.dataset = name;
        row.task = c.synth.task;
        row.rank = header.lora.rank;
        row.ablation = infer_ablation(header);
        row.prompt_mode = m;
        row.n_samples = ev.dice.size();
        row.n_excluded = ev.excluded;
        row.dice = ev.dice.empty() ? MeanStd{std::nan(""), 0.0} : mean_std(ev.dice);
        std::vector<double> defined;
        for (double a : ev.auc)
            if (!std::isnan(a)) defined.push_back(a);
        row.auc = defined.empty() ? MeanStd{std::nan(""), std::nan("")} : mean_std(defined);
        row.n_auc_undefined = ev.auc_undefined;
        if (ev.auc_undefined)
            out << "warning: AUC undefined for " << ev.auc_undefined << " sample(s) under " << to_string(m) << '\n';
        row.seed = c.eval_seed;
        row.config_hash = hash;
        report.rows.push_back(std::move(row));
    }
    std::ofstream os(csv);
    write_report_csv(os, report);
    write_run_config(csv.parent_path() / "config.json", c);
    out << "wrote " << report.rows.size() << " rows to " << csv.string() << '\n';
    return 0;
}

// ---- sweep -----------------------------------------------------------------

struct SweepFlags {
    std::vector<std::string> data;
    std::vector<std::string> tasks;
    std::string checkpoints;
    std::string out;
    bool train_missing = false;
    bool dump_overlays = false;
    int workers = 1;
};

int cmd_sweep(const Flags &f, const SweepFlags &s, std::ostream &out) {
    RunConfig c = resolve(f);
    if (f.given("seed")) c.eval_seed = f.seed;
    const fs::path dir = s.out.empty() ? default_output_root() / "sweep" : fs::path(s.out);
    fs::create_directories(dir);

    std::vector<GridDataset> datasets;
    for (const auto &d : s.data) {
        GridDataset g;
        g.name = dataset_name(d);
        g.task = c.synth.task;
        g.train = load_split(d, "train", g.task, c.split_seed, out);
        g.test = load_split(d, "test", g.task, c.split_seed, out);
        datasets.push_back(std::move(g));
    }
    std::vector<Task> tasks;
    for (const auto &t : s.tasks) tasks.push_back(task_from_string(t));
    if (s.data.empty() && tasks.empty()) tasks.push_back(c.synth.task);
    for (Task t : tasks) {
        SynthConfig sc = c.synth;
        sc.task = t;
        datasets.push_back({"synth-" + to_string(t), t, synthetic_split(sc, c.n_samples, Split::train),
                            synthetic_split(sc, c.n_samples, Split::test)});
    }

    GridConfig g;
    g.model = c.model();
    g.lora = c.lora;
    g.training = c.training;
    g.ranks = c.ranks;
    g.ablations = c.ablations;
    g.prompt_modes = c.prompt_modes;
    g.sampling = c.sampling;
    g.seed = c.eval_seed;
    g.threshold = c.threshold;
    g.checkpoint_dir = s.checkpoints.empty() ? dir / "checkpoints" : fs::path(s.checkpoints);
    g.train_missing = s.train_missing;
    g.workers = s.workers;
    if (s.dump_overlays) g.overlay_dir = dir / "overlays";

    write_run_config(dir / "config.json", c);
    const EvalReport report = run_grid(g, datasets);
    std::ofstream os(dir / "report.csv");
    write_report_csv(os, report);
    out << "trained " << report.cells_trained << " cell(s), loaded " << report.cells_loaded << '\n';
    out << "wrote " << report.rows.size() << " rows to " << (dir / "report.csv").string() << '\n';
    return 0;
}

// ---- merge -----------------------------------------------------------------

int cmd_merge(const std::string &checkpoint, const std::string &out_path, std::ostream &out) {
    if (!fs::exists(checkpoint)) throw MissingCheckpoint("checkpoint not found: " + checkpoint);
    const AdapterCheckpoint header = read_adapter_header(checkpoint);
    SegmentationModel<float> model(header.model);
    load_adapters(model, checkpoint);

    // Compare merged and unmerged outputs on one random input.
    Tensor<float> probe({3, 64, 64});
    std::mt19937_64 rng(0);
    std::normal_distribution<float> dist(0.0f, 1.0f);
    for (auto &v : probe.mutable_data()) v = dist(rng);
    const Tensor<float> before = model.forward(probe, {});
    const std::size_t n = merge_all(model);
    const Tensor<float> after = model.forward(probe, {});
    double diff = 0;
    for (std::size_t i = 0; i < before.numel(); ++i)
        diff = std::max(diff, double(std::abs(before.data()[i] - after.data()[i])));

    fs::path dst = out_path;
    if (dst.empty()) dst = fs::path(checkpoint).replace_extension(".merged.sl2l");
    save_model(model, dst);
    out << "merged " << n << " adapters into " << dst.string() << '\n';
    out << "max_abs_output_diff " << diff << '\n';
    return 0;
}

} // namespace

int run_cli(int argc, const char *const *argv, std::ostream &out, std::ostream &err) {
    CLI::App app{"Low-rank adapter fine-tuning of a promptable segmentation model"};
    app.require_subcommand(1);
    app.fallthrough();
    Flags f;
    app.add_option("--config", f.config, "JSON run config; flags override its values")->check(CLI::ExistingFile);
    app.add_flag("--paper-scale", f.paper_scale, "Use full-resolution, long-schedule defaults");

    auto data_flags = [&](CLI::App &sub) {
        add_option(sub, f, "task", f.task, "vessel or disc");
        add_option(sub, f, "n", f.n, "Number of synthetic samples");
        add_option(sub, f, "size", f.size, "Synthetic image side (multiple of 32)");
        add_option(sub, f, "data-seed", f.data_seed, "Seed of the synthetic data");
    };

    // generate
    CLI::App *gen = app.add_subcommand("generate", "Write synthetic image/mask PNG pairs");
    std::string gen_out;
    bool gen_force = false;
    data_flags(*gen);
    f.opts["task"].back()->required();
    add_option(*gen, f, "seed", f.seed, "Generator seed");
    gen->add_option("--out", gen_out, "Output directory");
    gen->add_flag("--force", gen_force, "Overwrite a non-empty output directory");

    auto train_flags = [&](CLI::App &sub) {
        add_option(sub, f, "steps", f.steps, "Training steps");
        add_option(sub, f, "warmup", f.warmup, "Warm-up steps");
        add_option(sub, f, "lr", f.lr, "Peak learning rate");
        add_option(sub, f, "batch", f.batch, "Batch size");
        f.opts["no-augment"].push_back(sub.add_flag("--no-augment", f.no_augment, "Disable augmentation"));
    };
    auto eval_flags = [&](CLI::App &sub) {
        f.opts["prompt-modes"].push_back(
            sub.add_option("--prompt-modes", f.prompt_modes, "Prompt modes to evaluate (eval-0 ... eval-6)"));
    };

    // train
    CLI::App *tr = app.add_subcommand("train", "Train adapters on a frozen base model");
    TrainFlags tf;
    data_flags(*tr);
    train_flags(*tr);
    eval_flags(*tr);
    add_option(*tr, f, "seed", f.seed, "Training and adapter-initialisation seed");
    add_option(*tr, f, "rank", f.rank, "Adapter rank");
    add_option(*tr, f, "alpha", f.alpha, "Adapter scaling numerator (default 2 * rank)");
    add_option(*tr, f, "ablation", f.ablation, "abl-0 ... abl-5");
    add_option(*tr, f, "checkpoint-every", f.checkpoint_every, "Snapshot adapters every N steps (0: end only)");
    tr->add_option("--data", tf.data, "Dataset directory (synthetic samples when omitted)");
    tr->add_option("--split", tf.split, "train, test or all");
    tr->add_option("--out", tf.out, "Output directory");
    tr->add_flag("--force", tf.force, "Reuse a non-empty output directory");

    // eval
    CLI::App *ev = app.add_subcommand("eval", "Evaluate one adapter checkpoint over prompt modes");
    EvalFlags ef;
    data_flags(*ev);
    eval_flags(*ev);
    add_option(*ev, f, "seed", f.seed, "Prompt sampling seed");
    ev->add_option("--checkpoint", ef.checkpoint, "Adapter checkpoint")->required();
    ev->add_option("--data", ef.data, "Dataset directory (synthetic samples when omitted)");
    ev->add_option("--split", ef.split, "train, test or all");
    ev->add_option("--out", ef.out, "Report CSV path");
    ev->add_flag("--dump-overlays", ef.dump_overlays, "Write one overlay PNG per evaluated sample");

    // sweep
    CLI::App *sw = app.add_subcommand("sweep", "Train or load a rank x ablation grid and evaluate it");
    SweepFlags sf;
    add_option(*sw, f, "n", f.n, "Number of synthetic samples per split");
    add_option(*sw, f, "size", f.size, "Synthetic image side (multiple of 32)");
    add_option(*sw, f, "data-seed", f.data_seed, "Seed of the synthetic data");
    train_flags(*sw);
    eval_flags(*sw);
    add_option(*sw, f, "seed", f.seed, "Grid seed");
    add_option(*sw, f, "ranks", f.ranks, "Adapter ranks");
    add_option(*sw, f, "ablations", f.ablations, "Ablation modes");
    sw->add_option("--data", sf.data, "Dataset directories");
    sw->add_option("--task", sf.tasks, "Synthetic tasks to include (vessel, disc)");
    sw->add_option("--checkpoints", sf.checkpoints, "Checkpoint directory");
    sw->add_option("--out", sf.out, "Output directory");
    sw->add_option("--workers", sf.workers, "Grid cells processed in parallel")->check(CLI::PositiveNumber);
    sw->add_flag("--train-missing", sf.train_missing, "Train cells whose checkpoint is missing");
    sw->add_flag("--dump-overlays", sf.dump_overlays, "Write one overlay PNG per evaluated sample");

    // merge
    CLI::App *mg = app.add_subcommand("merge", "Fold adapters into the base weights");
    std::string merge_ckpt, merge_out;
    mg->add_option("--checkpoint", merge_ckpt, "Adapter checkpoint")->required();
    mg->add_option("--out", merge_out, "Merged model path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        return app.exit(e, out, err);
    }

    try {
        if (gen->parsed()) return cmd_generate(f, gen_out, gen_force, out);
        if (tr->parsed()) return cmd_train(f, tf, out, err);
        if (ev->parsed()) return cmd_eval(f, ef, out);
        if (sw->parsed()) return cmd_sweep(f, sf, out);
        if (mg->parsed()) return cmd_merge(merge_ckpt, merge_out, out);
    } catch (const UsageError &e) {
        err << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception &e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}

} // namespace loraseg::cli
