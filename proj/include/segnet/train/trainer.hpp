#pragma once

// Staged training: an RGB-only network, then a depth-only network, then the
// fused network with both backbones frozen, training the fusion block and
// pyramid head. Batch size is one; each stage runs epochs x |dataset| steps.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "segnet/data/augment.hpp"
#include "segnet/data/sample.hpp"
#include "segnet/eval/metrics.hpp"
#include "segnet/model/meta.hpp"
#include "segnet/model/network.hpp"
#include "segnet/nn/loss.hpp"
#include "segnet/train/optim.hpp"

namespace segnet::train {

enum class StageKind { rgb, depth, fusion };

inline std::string to_string(StageKind k) {
    switch (k) {
        case StageKind::rgb: return "rgb";
        case StageKind::depth: return "depth";
        case StageKind::fusion: return "fusion";
    }
    return "?";
}

inline StageKind parse_stage_kind(const std::string& s) {
    if (s == "rgb") return StageKind::rgb;
    if (s == "depth") return StageKind::depth;
    if (s == "fusion") return StageKind::fusion;
    throw ValueError("unknown stage '" + s + "' (expected rgb, depth or fusion)");
}

/// Changes applied from `epoch` (1-based) onwards.
struct ScheduleEvent {
    std::size_t epoch = 140;
    std::optional<double> base_lr;
    std::optional<double> weight_decay;
    std::string decay_group = "head";  // group receiving weight_decay
};

struct StageSpec {
    StageKind kind = StageKind::rgb;
    std::size_t epochs = 200;
    std::optional<double> base_lr;
    std::vector<std::string> frozen_groups;
    std::map<std::string, double> lr_multipliers;
    std::vector<ScheduleEvent> events;
    std::optional<bool> bn_frozen;  // every BN layer in frozen mode; default: fusion stage only

    bool all_bn_frozen() const { return bn_frozen.value_or(kind == StageKind::fusion); }

    /// Groups with a zero multiplier; the fusion stage always freezes both backbones.
    std::vector<std::string> frozen() const {
        std::vector<std::string> out = frozen_groups;
        if (kind == StageKind::fusion)
            for (const char* g : {"rgb", "depth"})
                if (std::find(out.begin(), out.end(), g) == out.end()) out.push_back(g);
        for (const auto& [g, m] : lr_multipliers)
            if (m == 0.0 && std::find(out.begin(), out.end(), g) == out.end()) out.push_back(g);
        return out;
    }
};

/// The literal late-training change: base lr 5e-4, pyramid-head decay 0.999.
inline ScheduleEvent late_schedule_event() { return {140, 5e-4, 0.999, "head"}; }

struct StagePlan {
    std::vector<StageSpec> stages;

    /// rgb, depth, fusion; `epochs` each, with the epoch-140 event when it falls inside the stage.
    static StagePlan standard(std::size_t epochs = 200) {
        StagePlan p;
        for (auto k : {StageKind::rgb, StageKind::depth, StageKind::fusion}) {
            StageSpec s;
            s.kind = k;
            s.epochs = epochs;
            if (epochs >= late_schedule_event().epoch) s.events.push_back(late_schedule_event());
            p.stages.push_back(s);
        }
        return p;
    }

    static StagePlan compressed(std::size_t rgb_epochs, std::size_t depth_epochs, std::size_t fusion_epochs) {
        StagePlan p;
        p.stages = {{StageKind::rgb, rgb_epochs, {}, {}, {}, {}},
                    {StageKind::depth, depth_epochs, {}, {}, {}, {}},
                    {StageKind::fusion, fusion_epochs, {}, {}, {}, {}}};
        return p;
    }

    void validate() const {
        if (stages.empty()) throw ValueError("stage plan is empty");
        for (const auto& s : stages) {
            if (s.epochs == 0) throw ValueError("stage " + to_string(s.kind) + " has zero epochs");
            for (const auto& e : s.events)
                if (e.epoch == 0) throw ValueError("schedule events use 1-based epochs");
        }
    }
};

struct TrainOptions {
    double base_lr = 5e-5;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    double power = 0.9;
    bool augment = true;
    data::AugmentParams augmentation;
    std::string checkpoint_dir = "checkpoints";
    std::size_t checkpoint_every = 0;  // epochs between "-last" snapshots; 0: stage end only
    std::string depth_init = "rgb";    // "rgb": depth backbone starts from the RGB stage; "random"
    std::uint64_t seed = 0;
};

class TrainLog {
public:
    struct Step {
        std::string stage;
        std::size_t iter, epoch;
        double lr, loss;
    };
    struct Epoch {
        std::string stage;
        std::size_t epoch;
        double mean_loss, pixel_accuracy;
    };

    explicit TrainLog(std::ostream* out = nullptr) : out_(out) {}

    void step(const Step& s) {
        steps_.push_back(s);
        if (out_) {
            char buf[160];
            std::snprintf(buf, sizeof buf, "iter=%zu epoch=%zu lr=%.6g loss=%.6f", s.iter, s.epoch, s.lr, s.loss);
            *out_ << buf << '\n';
        }
    }
    void epoch(const Epoch& e) {
        epochs_.push_back(e);
        if (out_) {
            char buf[160];
            std::snprintf(buf, sizeof buf, "# stage=%s epoch=%zu mean_loss=%.6f pixel_acc=%.4f", e.stage.c_str(),
                          e.epoch, e.mean_loss, e.pixel_accuracy);
            *out_ << buf << '\n';
        }
    }
    void note(const std::string& msg) {
        if (out_) *out_ << "# " << msg << '\n';
    }
    void warn(const std::string& msg) {
        warnings_.push_back(msg);
        if (out_) *out_ << "# warning: " << msg << '\n';
    }
    void flush() {
        if (out_) out_->flush();
    }

    const std::vector<Step>& steps() const { return steps_; }
    const std::vector<Epoch>& epochs() const { return epochs_; }
    const std::vector<std::string>& warnings() const { return warnings_; }

private:
    std::ostream* out_;
    std::vector<Step> steps_;
    std::vector<Epoch> epochs_;
    std::vector<std::string> warnings_;
};

inline model::ModelConfig stage_model_config(model::ModelConfig cfg, StageKind kind) {
    cfg.rgb_branch = kind != StageKind::depth;
    cfg.depth_branch = kind != StageKind::rgb;
    return cfg;
}

inline std::string stage_checkpoint(const TrainOptions& opts, StageKind kind) {
    return (std::filesystem::path(opts.checkpoint_dir) / (to_string(kind) + ".ckpt")).string();
}

inline std::string stage_snapshot(const TrainOptions& opts, StageKind kind) {
    return (std::filesystem::path(opts.checkpoint_dir) / (to_string(kind) + "-last.ckpt")).string();
}

/// Hyperparameters in force during a 1-based epoch.
struct EpochSettings {
    double base_lr;
    std::map<std::string, double> group_weight_decay;
};

inline EpochSettings epoch_settings(const StageSpec& stage, const TrainOptions& opts, std::size_t epoch) {
    EpochSettings s{stage.base_lr.value_or(opts.base_lr), {}};
    for (const auto& e : stage.events) {
        if (epoch < e.epoch) continue;
        if (e.base_lr) s.base_lr = *e.base_lr;
        if (e.weight_decay) s.group_weight_decay[e.decay_group] = *e.weight_decay;
    }
    return s;
}

/// Flags event values that look implausible; returns the messages.
inline std::vector<std::string> schedule_warnings(const StageSpec& stage, const TrainOptions& opts) {
    std::vector<std::string> out;
    const double initial = stage.base_lr.value_or(opts.base_lr);
    for (const auto& e : stage.events) {
        if (e.base_lr && *e.base_lr > initial) {
            char buf[200];
            std::snprintf(buf, sizeof buf, "epoch %zu raises the base learning rate from %g to %g", e.epoch, initial,
                          *e.base_lr);
            out.emplace_back(buf);
        }
        if (e.weight_decay && *e.weight_decay >= 0.1) {
            char buf[200];
            std::snprintf(buf, sizeof buf, "epoch %zu sets weight decay of group '%s' to %g, far above usual values",
                          e.epoch, e.decay_group.c_str(), *e.weight_decay);
            out.emplace_back(buf);
        }
    }
    return out;
}

/// Model for a stage, initialized from earlier stage checkpoints where the
/// protocol calls for it.
inline model::SegNet<float> build_stage_model(const StageSpec& stage, const model::ModelConfig& base,
                                              const TrainOptions& opts) {
    const auto cfg = stage_model_config(base, stage.kind);
    model::SegNet<float> net(cfg, derive_seed(opts.seed, "model." + to_string(stage.kind)));
    auto need = [&](StageKind k) {
        const auto path = stage_checkpoint(opts, k);
        if (!std::filesystem::exists(path))
            throw IoError("stage " + to_string(stage.kind) + " needs the " + to_string(k) + " stage checkpoint " + path);
        return Checkpoint::load(path);
    };
    if (stage.kind == StageKind::depth && opts.depth_init == "rgb") {
        net.load_state_dict(model::rgb_entries_as_depth(need(StageKind::rgb)), {.strict = true, .prefixes = {"depth."}});
    } else if (stage.kind == StageKind::depth && opts.depth_init != "random") {
        throw ValueError("depth_init must be 'rgb' or 'random', got '" + opts.depth_init + "'");
    }
    if (stage.kind == StageKind::fusion) {
        net.load_state_dict(need(StageKind::rgb), {.strict = true, .prefixes = {"rgb."}});
        net.load_state_dict(need(StageKind::depth), {.strict = true, .prefixes = {"depth."}});
    }
    return net;
}

inline void save_training_checkpoint(const model::SegNet<float>& net, const OptimState& st, std::size_t stage_index,
                                     const std::string& path) {
    Checkpoint ck = net.state_dict();
    model::write_model_meta(net.config(), ck);
    std::map<std::string, Shape> shapes;
    for (const auto& p : net.parameters()) shapes[p.path] = p.tensor.shape();
    write_optim_state(st, stage_index, ck, shapes);
    ck.save(path);
}

struct StageResult {
    StageKind kind;
    std::string checkpoint;
    std::size_t steps = 0;  // optimizer steps taken in this call
    double final_loss = 0;
    std::optional<double> final_pixel_accuracy;
};

/// Runs stage `index` of `plan`. With `resume`, training continues from the
/// iteration stored in that checkpoint, which must belong to the same stage.
inline StageResult run_stage(const StagePlan& plan, std::size_t index, const model::ModelConfig& base,
                             const data::Dataset& train, const TrainOptions& opts, TrainLog& log,
                             const std::string& resume = "") {
    plan.validate();
    opts.augmentation.validate();
    if (index >= plan.stages.size()) throw ValueError("stage index out of range");
    if (train.empty()) throw ValueError("training split is empty");
    const StageSpec& stage = plan.stages[index];
    const std::string name = to_string(stage.kind);
    std::error_code ec;
    std::filesystem::create_directories(opts.checkpoint_dir, ec);
    if (ec) throw IoError("cannot create checkpoint directory " + opts.checkpoint_dir + ": " + ec.message());

    model::SegNet<float> net = build_stage_model(stage, base, opts);
    OptimState st;
    st.momentum = opts.momentum;
    st.weight_decay = opts.weight_decay;
    st.power = opts.power;
    st.max_iter = stage.epochs * train.size();
    for (const auto& [g, m] : stage.lr_multipliers) st.group_lr_multipliers[g] = m;
    for (const auto& g : stage.frozen()) st.group_lr_multipliers[g] = 0.0;

    if (!resume.empty()) {
        const Checkpoint ck = Checkpoint::load(resume);
        const std::size_t stored = checkpoint_stage(ck);
        if (stored != index)
            throw ValueError("checkpoint " + resume + " belongs to stage " + std::to_string(stored + 1) +
                             ", not stage " + std::to_string(index + 1));
        net.load_state_dict(ck, {.strict = true});
        const std::size_t max_iter = st.max_iter;
        read_optim_state(ck, st);
        if (st.max_iter != max_iter)
            throw ValueError("checkpoint " + resume + " was trained with max_iter " + std::to_string(st.max_iter) +
                             ", this run has " + std::to_string(max_iter));
    }

    net.set_bn_mode(nn::BnMode::train);
    net.set_trainable(true);
    for (const auto& g : stage.frozen()) {
        net.set_trainable(g, false);
        net.set_bn_mode(g, nn::BnMode::frozen);
    }
    if (stage.all_bn_frozen()) net.set_bn_mode(nn::BnMode::frozen);
    const auto params = net.parameters();

    log.note("stage " + std::to_string(index + 1) + " (" + name + "): " + std::to_string(train.size()) +
             " samples, " + std::to_string(stage.epochs) + " epochs, max_iter=" + std::to_string(st.max_iter) +
             (st.iter ? ", resuming at iter=" + std::to_string(st.iter) : std::string()));
    for (const auto& w : schedule_warnings(stage, opts)) log.warn(w);

    StageResult result{stage.kind, stage_checkpoint(opts, stage.kind)};
    const std::size_t n = train.size();
    const std::size_t first_epoch = st.iter / n;
    for (std::size_t epoch = first_epoch; epoch < stage.epochs; ++epoch) {
        const EpochSettings settings = epoch_settings(stage, opts, epoch + 1);
        st.base_lr = settings.base_lr;
        st.group_weight_decay = settings.group_weight_decay;

        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng order_rng(derive_seed(opts.seed, "train.order." + name, epoch));
        order_rng.shuffle(std::span<std::size_t>(order));

        eval::ConfusionMatrix cm(net.config().num_classes);
        double loss_sum = 0;
        std::size_t loss_count = 0;
        for (std::size_t pos = st.iter - epoch * n; pos < n; ++pos) {
            data::Sample s = train.load(order[pos]);
            if (opts.augment) {
                Rng aug_rng(derive_seed(opts.seed, "train.augment." + name, st.iter));
                data::AugmentParams ap = opts.augmentation;
                ap.jitter = ap.jitter && stage.kind != StageKind::depth;
                s = data::augment(s, ap, aug_rng);
            }
            nn::LossStats stats;
            double loss_value = 0;
            {
                GradientTape<float> tape;
                const bool use_rgb = stage.kind != StageKind::depth, use_depth = stage.kind != StageKind::rgb;
                const Tensor<float> logits =
                    net.forward(use_rgb ? s.rgb_batch() : Tensor<float>{}, use_depth ? s.depth_batch() : Tensor<float>{});
                const Tensor<float> loss = nn::softmax_cross_entropy(logits, s.labels, kIgnoreId, &stats);
                loss_value = loss.item();
                if (!stats.all_ignored()) tape.backward(loss);
                cm.accumulate(s.labels, nn::argmax_channels(logits));
            }
            const double lr = st.lr();
            sgd_step(params, st, stats.all_ignored());
            log.step({name, st.iter, epoch + 1, lr, loss_value});
            loss_sum += loss_value;
            ++loss_count;
            result.final_loss = loss_value;
            ++result.steps;
        }
        const auto acc = cm.pixel_accuracy();
        log.epoch({name, epoch + 1, loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0, acc.value_or(0.0)});
        result.final_pixel_accuracy = acc;
        if (opts.checkpoint_every && (epoch + 1) % opts.checkpoint_every == 0 && epoch + 1 < stage.epochs)
            save_training_checkpoint(net, st, index, stage_snapshot(opts, stage.kind));
        log.flush();
    }
    save_training_checkpoint(net, st, index, result.checkpoint);
    log.note("stage " + name + " checkpoint: " + result.checkpoint);
    return result;
}

/// Runs the plan from `first` (0-based) to the end.
inline std::vector<StageResult> run_stages(const StagePlan& plan, const model::ModelConfig& base,
                                           const data::Dataset& train, const TrainOptions& opts, TrainLog& log,
                                           std::size_t first = 0, const std::string& resume = "") {
    std::vector<StageResult> out;
    for (std::size_t i = first; i < plan.stages.size(); ++i)
        out.push_back(run_stage(plan, i, base, train, opts, log, i == first ? resume : std::string()));
    return out;
}

}  // namespace segnet::train
