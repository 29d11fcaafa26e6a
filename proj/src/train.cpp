#include "loraseg/train.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <random>

#include "loraseg/ops.hpp"
#include "loraseg/seed.hpp"
#include "loraseg/tape.hpp"

namespace loraseg {

void TrainSetup::validate() const {
    train.validate();
    weights.validate();
    tversky.validate();
    augmentation.validate();
    if (prompt_modes.empty()) throw std::invalid_argument("training needs at least one prompt mode");
}

namespace {

// Stream tags keep the per-step seeds of different consumers apart.
enum Stream : std::uint64_t { kBatch = 1, kAugment = 2, kPromptMode = 3, kPrompt = 4 };

std::uint64_t stream_seed(std::uint64_t seed, Stream s, std::uint64_t index) {
    return derive_seed(derive_seed(seed, s), index);
}

void write_row(std::ostream &os, const StepRecord &r) {
    os << r.step << ',' << std::setprecision(9) << r.lr << ',' << r.total << ',' << r.bce << ',' << r.dice << ','
       << r.ftl << '\n';
}

} // namespace

TrainResult train(SegmentationModel<float> &model, const std::vector<SegSample> &data, const TrainSetup &setup,
                  const TrainHooks &hooks) {
    setup.validate();
    if (data.empty()) throw std::invalid_argument("train: empty dataset");
    const TrainConfig &cfg = setup.train;
    std::vector<Tensor<float>> params = trainable_tensors(model.parameters());
    if (params.empty()) throw std::invalid_argument("train: model has no trainable parameters");
    AdamW<float> opt(params, cfg);

    if (hooks.step_log) *hooks.step_log << kStepLogHeader << '\n';
    TrainResult result;

    std::vector<std::size_t> order(data.size());
    std::size_t cursor = order.size();
    std::uint64_t epoch = 0;

    for (int step = 0; step < cfg.total_steps; ++step) {
        const double lr = lr_at(step, cfg);
        StepRecord rec;
        rec.step = step;
        rec.lr = lr;

        Tape<float> tape;
        Tensor<float> total;
        {
            TapeScope<float> scope(tape);
            std::vector<Tensor<float>> losses;
            for (int b = 0; b < cfg.batch_size; ++b) {
                if (cursor == order.size()) {
                    std::iota(order.begin(), order.end(), std::size_t{0});
                    std::mt19937_64 rng(stream_seed(cfg.seed, kBatch, epoch++));
                    std::shuffle(order.begin(), order.end(), rng);
                    cursor = 0;
                }
                const SegSample &raw = data[order[cursor++]];
                const std::uint64_t item = std::uint64_t(step) * cfg.batch_size + b;
                const SegSample s =
                    setup.augment ? augment(raw, stream_seed(cfg.seed, kAugment, item), setup.augmentation) : raw;

                const bool has_fg = std::any_of(s.mask.data().begin(), s.mask.data().end(), [](float v) { return v >= 0.5f; });
                PromptMode mode = PromptMode::none;
                if (has_fg) {
                    std::mt19937_64 rng(stream_seed(cfg.seed, kPromptMode, item));
                    std::uniform_int_distribution<std::size_t> pick(0, setup.prompt_modes.size() - 1);
                    mode = setup.prompt_modes[pick(rng)];
                }
                const PromptSet prompts = sample_prompts(s.mask, mode, stream_seed(cfg.seed, kPrompt, item));
                const Tensor<float> logits = model.forward(s.image, prompts);
                const Tensor<float> prob = reshape(sigmoid(logits), s.mask.shape());
                const LossBreakdown<float> l = composite_loss(prob, s.mask, setup.weights, setup.tversky);
                rec.bce += l.bce / cfg.batch_size;
                rec.dice += l.dice / cfg.batch_size;
                rec.ftl += l.ftl / cfg.batch_size;
                losses.push_back(l.total);
            }
            total = losses[0];
            for (std::size_t i = 1; i < losses.size(); ++i) total = add(total, losses[i]);
            total = mul_scalar(total, 1.0f / float(cfg.batch_size));
        }
        rec.total = total.item();
        if (!std::isfinite(rec.total))
            throw NonFiniteError("non-finite loss at step " + std::to_string(step), step);
        if (total.requires_grad()) {
            for (auto &p : params) p.clear_grad();
            tape.backward(total);
            clip_grad_norm(params, cfg.clip_norm);
            try {
                opt.step(lr);
            } catch (const NonFiniteError &) {
                throw NonFiniteError("non-finite gradient at step " + std::to_string(step), step);
            }
        }
        result.log.push_back(rec);
        if (hooks.step_log) write_row(*hooks.step_log, rec);
        result.steps_run = step + 1;

        if (hooks.checkpoint_every > 0 && hooks.checkpoint && result.steps_run % hooks.checkpoint_every == 0)
            hooks.checkpoint(result.steps_run);
        if (hooks.check_every > 0 && hooks.should_stop && result.steps_run % hooks.check_every == 0 &&
            hooks.should_stop(result.steps_run)) {
            result.stopped_early = true;
            break;
        }
    }
    return result;
}

Tensor<float> predict(const SegmentationModel<float> &model, const Tensor<float> &image, const PromptSet &prompts) {
    const Tensor<float> logits = model.forward(image, prompts);
    return reshape(sigmoid(logits), {logits.dim(1), logits.dim(2)});
}

} // namespace loraseg
