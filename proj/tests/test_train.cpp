#include <gtest/gtest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "segnet/data/synthetic.hpp"
#include "segnet/train/optim.hpp"
#include "segnet/train/trainer.hpp"

using namespace segnet;
using namespace segnet::train;
using model::NamedParam;
using model::ParamKind;
using TD = Tensor<double>;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    fs::path d = fs::temp_directory_path() / ("segnet_test_train_" + std::to_string(::getpid())) / name;
    fs::create_directories(d);
    return d;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), {}};
}

// d(loss)/dw = g for every element
void set_grad(TD& w, double g) {
    w.drop_grad();
    w.set_requires_grad(true);
    GradientTape<double> tape;
    tape.backward(scale(sum(w), g));
}

OptimState plain(double lr, double momentum, double wd) {
    OptimState st;
    st.base_lr = lr;
    st.momentum = momentum;
    st.weight_decay = wd;
    st.power = 0.0;
    st.max_iter = 100;
    return st;
}

model::ModelConfig tiny_config() {
    model::ModelConfig c = model::ModelConfig::toy(5);
    c.block_depths = {1, 1, 1, 1};
    c.width_multiplier = 0.0625;
    return c;
}

const data::Dataset& tiny_dataset() {
    static const data::Dataset ds = [] {
        data::SynthParams p;
        p.count = 4;
        p.image_size = 32;
        p.val_fraction = 0;
        const auto manifest = data::gen_synthetic(p, scratch("dataset").string());
        return data::Dataset::open(manifest, data::identity_class_map(5));
    }();
    return ds;
}

TrainOptions tiny_options(const fs::path& dir) {
    TrainOptions o;
    o.base_lr = 0.01;
    o.checkpoint_dir = dir.string();
    o.augmentation.crop = 32;
    return o;
}

}  // namespace

TEST(PolyLr, Endpoints) {
    EXPECT_EQ(poly_lr(5e-5, 0, 1000, 0.9), 5e-5);
    EXPECT_EQ(poly_lr(5e-5, 1000, 1000, 0.9), 0.0);
    EXPECT_NEAR(poly_lr(5e-5, 500, 1000, 0.9), 2.67943365634073291e-5, 2.7e-5 * 1e-12);
    EXPECT_THROW(poly_lr(1, 0, 0, 0.9), ValueError);
    EXPECT_THROW(poly_lr(1, 11, 10, 0.9), ValueError);
}

TEST(PolyLr, StrictlyDecreasing) {
    for (double power : {0.5, 0.9, 2.0}) {
        double prev = poly_lr(0.01, 0, 257, power);
        for (std::size_t i = 1; i <= 257; ++i) {
            const double v = poly_lr(0.01, i, 257, power);
            EXPECT_LT(v, prev);
            EXPECT_GE(v, 0.0);
            prev = v;
        }
    }
}

TEST(Sgd, VanillaStep) {
    TD w({1}, {1.0});
    set_grad(w, 0.5);
    OptimState st = plain(0.1, 0.0, 0.0);
    sgd_step<double>({{"head.w", w, ParamKind::conv_weight}}, st);
    EXPECT_NEAR(w.item(), 0.95, 1e-12);
    EXPECT_FALSE(w.has_grad());
    EXPECT_EQ(st.iter, 1u);
}

TEST(Sgd, MomentumRecurrence) {
    TD w({1}, {0.0});
    OptimState st = plain(0.1, 0.9, 0.0);
    std::vector<NamedParam<double>> params{{"head.w", w, ParamKind::conv_weight}};
    set_grad(w, 1.0);
    sgd_step(params, st);
    EXPECT_NEAR(w.item(), -0.1, 1e-7);
    set_grad(w, 1.0);
    sgd_step(params, st);
    EXPECT_NEAR(st.velocity["head.w"][0], 1.9, 1e-6);
    EXPECT_NEAR(w.item(), -0.29, 1e-6);
}

TEST(Sgd, FrozenGroupIsBitwiseUnchanged) {
    Rng rng(1);
    TD frozen = TD::uniform({4, 3}, 1.0, rng), live = TD::uniform({4, 3}, 1.0, rng);
    const TD before = frozen.clone();
    OptimState st = plain(0.1, 0.9, 5e-4);
    st.group_lr_multipliers["rgb"] = 0.0;
    std::vector<NamedParam<double>> params{{"rgb.a", frozen, ParamKind::conv_weight},
                                           {"head.b", live, ParamKind::conv_weight}};
    for (int k = 0; k < 5; ++k) {
        set_grad(frozen, 0.3);
        set_grad(live, 0.3);
        sgd_step(params, st);
    }
    EXPECT_EQ(std::memcmp(before.data().data(), frozen.data().data(), 12 * sizeof(double)), 0);
    EXPECT_EQ(st.velocity.count("rgb.a"), 0u);
    EXPECT_EQ(st.velocity.count("head.b"), 1u);
}

TEST(Sgd, WeightDecayOnConvWeightsOnly) {
    TD w({1}, {2.0}), b({1}, {2.0}), g({1}, {2.0});
    set_grad(w, 0.0);
    set_grad(b, 0.0);
    set_grad(g, 0.0);
    OptimState st = plain(0.1, 0.0, 0.5);
    sgd_step<double>({{"head.w", w, ParamKind::conv_weight}, {"head.b", b, ParamKind::bias},
                      {"head.g", g, ParamKind::bn_scale}},
                     st);
    EXPECT_NEAR(w.item(), 2.0 - 0.1 * 0.5 * 2.0, 1e-12);
    EXPECT_EQ(b.item(), 2.0);
    EXPECT_EQ(g.item(), 2.0);
}

TEST(Sgd, Errors) {
    TD w({1}, {1.0});
    OptimState st = plain(0.1, 0.0, 0.0);
    std::vector<NamedParam<double>> params{{"head.w", w, ParamKind::conv_weight}};
    EXPECT_THROW(sgd_step(params, st), TapeError);
    EXPECT_NO_THROW(sgd_step(params, st, true));
    EXPECT_EQ(w.item(), 1.0);
    st.iter = st.max_iter;
    set_grad(w, 1.0);
    EXPECT_THROW(sgd_step(params, st), ValueError);
}

TEST(Sgd, SmallStepDecreasesLoss) {
    model::ModelConfig cfg = model::ModelConfig::toy(4);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        model::SegNet<double> net(cfg, seed);
        net.set_trainable(true);
        Rng rng(derive_seed(seed, "test.descent"));
        TD rgb = TD::uniform({1, 3, 32, 32}, 1.0, rng), depth = TD::uniform({1, 1, 32, 32}, 1.0, rng);
        LabelMap labels(1, 32, 32);
        for (auto& id : labels.ids) id = static_cast<std::uint8_t>(rng.below(4));
        double before = 0;
        {
            GradientTape<double> tape;
            TD loss = nn::softmax_cross_entropy(net.forward(rgb, depth), labels);
            before = loss.item();
            tape.backward(loss);
        }
        OptimState st = plain(1e-6, 0.0, 0.0);
        sgd_step(net.parameters(), st);
        const double after = nn::softmax_cross_entropy(net.forward(rgb, depth), labels).item();
        EXPECT_LT(after, before) << "seed " << seed;
    }
}

TEST(Schedule, StandardPlanCarriesLateEvent) {
    const auto plan = StagePlan::standard();
    ASSERT_EQ(plan.stages.size(), 3u);
    EXPECT_EQ(plan.stages[2].kind, StageKind::fusion);
    const auto& fusion = plan.stages[2];
    EXPECT_EQ(fusion.epochs, 200u);
    TrainOptions opts;
    EXPECT_EQ(epoch_settings(fusion, opts, 139).base_lr, 5e-5);
    EXPECT_TRUE(epoch_settings(fusion, opts, 139).group_weight_decay.empty());
    EXPECT_EQ(epoch_settings(fusion, opts, 140).base_lr, 5e-4);
    EXPECT_EQ(epoch_settings(fusion, opts, 140).group_weight_decay.at("head"), 0.999);
    EXPECT_EQ(schedule_warnings(fusion, opts).size(), 2u);
    EXPECT_TRUE(StagePlan::standard(100).stages[0].events.empty());
    const auto frozen = fusion.frozen();
    EXPECT_NE(std::find(frozen.begin(), frozen.end(), "rgb"), frozen.end());
    EXPECT_NE(std::find(frozen.begin(), frozen.end(), "depth"), frozen.end());
    EXPECT_TRUE(plan.stages[0].frozen().empty());
    EXPECT_TRUE(fusion.all_bn_frozen());
    EXPECT_FALSE(plan.stages[0].all_bn_frozen());
}

TEST(Schedule, Validation) {
    auto plan = StagePlan::compressed(1, 0, 1);
    EXPECT_THROW(plan.validate(), ValueError);
    plan = StagePlan::compressed(1, 1, 1);
    plan.stages[0].events.push_back({0, 1.0, {}, "head"});
    EXPECT_THROW(plan.validate(), ValueError);
    EXPECT_THROW(StagePlan{}.validate(), ValueError);
}

TEST(Stages, OneEpochLogsOneStepPerSample) {
    const auto dir = scratch("count");
    std::ostringstream text;
    TrainLog log(&text);
    auto res = run_stage(StagePlan::compressed(1, 1, 1), 0, tiny_config(), tiny_dataset(), tiny_options(dir), log);
    EXPECT_EQ(res.steps, 4u);
    EXPECT_EQ(log.steps().size(), 4u);
    std::size_t lines = 0;
    std::istringstream in(text.str());
    for (std::string l; std::getline(in, l);) {
        if (l.rfind("iter=", 0) != 0) continue;
        ++lines;
        std::size_t it = 0, ep = 0;
        double lr = 0, loss = 0;
        EXPECT_EQ(std::sscanf(l.c_str(), "iter=%zu epoch=%zu lr=%lf loss=%lf", &it, &ep, &lr, &loss), 4) << l;
        EXPECT_EQ(it, lines);
        EXPECT_EQ(ep, 1u);
    }
    EXPECT_EQ(lines, 4u);
    EXPECT_TRUE(fs::exists(res.checkpoint));
    EXPECT_TRUE(std::isfinite(res.final_loss));
}

TEST(Stages, FusionStageLeavesBackbonesUntouched) {
    const auto dir = scratch("freeze");
    TrainLog log;
    auto results = run_stages(StagePlan::compressed(1, 1, 2), tiny_config(), tiny_dataset(), tiny_options(dir), log);
    ASSERT_EQ(results.size(), 3u);
    const Checkpoint rgb = Checkpoint::load(results[0].checkpoint), depth = Checkpoint::load(results[1].checkpoint),
                     fused = Checkpoint::load(results[2].checkpoint);
    std::size_t compared = 0;
    for (const auto& [path, e] : fused.entries()) {
        const Checkpoint* src = path.rfind("rgb.", 0) == 0 ? &rgb : path.rfind("depth.", 0) == 0 ? &depth : nullptr;
        if (!src) continue;
        ASSERT_TRUE(src->contains(path)) << path;
        EXPECT_EQ(std::memcmp(e.values.data(), src->at(path).values.data(), e.values.size() * sizeof(float)), 0) << path;
        ++compared;
    }
    EXPECT_GT(compared, 50u);
    bool head_moved = false;
    const auto depth_head = depth.at("head.logits.weight").values, fused_head = fused.at("head.logits.weight").values;
    head_moved = depth_head.size() != fused_head.size() || depth_head != fused_head;
    EXPECT_TRUE(head_moved);
}

TEST(Stages, DepthStageStartsFromRgb) {
    const auto dir = scratch("depth_init");
    TrainLog log;
    auto plan = StagePlan::compressed(1, 1, 1);
    EXPECT_THROW(run_stage(plan, 1, tiny_config(), tiny_dataset(), tiny_options(dir), log), IoError);
    run_stage(plan, 0, tiny_config(), tiny_dataset(), tiny_options(dir), log);
    const auto net = build_stage_model(plan.stages[1], tiny_config(), tiny_options(dir));
    const Checkpoint rgb = Checkpoint::load(stage_checkpoint(tiny_options(dir), StageKind::rgb));
    EXPECT_EQ(net.find("depth.res5.0.conv2.weight")->tensor.values(), rgb.at("rgb.res5.0.conv2.weight").values);
}

TEST(Stages, RunsAreReproducible) {
    const auto a = scratch("repro_a"), b = scratch("repro_b");
    TrainLog la, lb;
    auto ra = run_stage(StagePlan::compressed(2, 1, 1), 0, tiny_config(), tiny_dataset(), tiny_options(a), la);
    auto rb = run_stage(StagePlan::compressed(2, 1, 1), 0, tiny_config(), tiny_dataset(), tiny_options(b), lb);
    EXPECT_EQ(ra.final_loss, rb.final_loss);
    EXPECT_EQ(slurp(ra.checkpoint), slurp(rb.checkpoint));
}

TEST(Stages, ResumeMatchesUninterruptedRun) {
    const auto full = scratch("resume_full"), part = scratch("resume_part");
    auto opts = tiny_options(full);
    opts.checkpoint_every = 1;
    TrainLog lf;
    auto plan = StagePlan::compressed(3, 1, 1);
    auto rf = run_stage(plan, 0, tiny_config(), tiny_dataset(), opts, lf);
    const std::string reference = slurp(rf.checkpoint);
    const std::string snapshot = (part / "snapshot.ckpt").string();
    fs::copy_file(stage_snapshot(opts, StageKind::rgb), snapshot);
    auto ropts = tiny_options(part);
    ropts.checkpoint_every = 1;
    TrainLog lr;
    auto rr = run_stage(plan, 0, tiny_config(), tiny_dataset(), ropts, lr, snapshot);
    EXPECT_EQ(rr.steps, 4u);
    EXPECT_EQ(slurp(rr.checkpoint), reference);
    EXPECT_THROW(run_stage(plan, 1, tiny_config(), tiny_dataset(), ropts, lr, snapshot), ValueError);
}
