#include <gtest/gtest.h>

#include <unistd.h>

#include <algorithm>
#include <filesystem>
#include <numeric>

#include "segnet/data/synthetic.hpp"
#include "segnet/eval/evaluate.hpp"
#include "segnet/eval/metrics.hpp"

using namespace segnet;
using namespace segnet::eval;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    fs::path d = fs::temp_directory_path() / ("segnet_test_eval_" + std::to_string(::getpid())) / name;
    fs::create_directories(d);
    return d;
}

LabelMap random_labels(std::size_t h, std::size_t w, std::size_t k, Rng& rng, double ignore_p = 0.1) {
    LabelMap m(1, h, w);
    for (auto& id : m.ids) id = rng.bernoulli(ignore_p) ? kIgnoreId : static_cast<std::uint8_t>(rng.below(k));
    return m;
}

LabelMap random_prediction(const LabelMap& like, std::size_t k, Rng& rng) {
    LabelMap m(like.n, like.h, like.w);
    for (auto& id : m.ids) id = static_cast<std::uint8_t>(rng.below(k));
    return m;
}

}  // namespace

TEST(Confusion, WorkedExample) {
    ConfusionMatrix cm(2);
    cm.accumulate(LabelMap(1, 2, 2, std::vector<std::uint8_t>{0, 0, 1, 1}),
                  LabelMap(1, 2, 2, std::vector<std::uint8_t>{0, 1, 1, 1}));
    EXPECT_EQ(cm.counts(), (std::vector<std::uint64_t>{1, 1, 0, 2}));
    auto r = iou(cm);
    EXPECT_DOUBLE_EQ(*r.per_class[0], 0.5);
    EXPECT_DOUBLE_EQ(*r.per_class[1], 2.0 / 3.0);
    EXPECT_NEAR(*r.mean, 7.0 / 12.0, 1e-15);
    EXPECT_DOUBLE_EQ(*cm.pixel_accuracy(), 0.75);
}

TEST(Confusion, PerfectAndIgnored) {
    Rng rng(1);
    LabelMap gt = random_labels(8, 9, 4, rng, 0.0);
    ConfusionMatrix cm(4);
    cm.accumulate(gt, gt);
    for (std::size_t g = 0; g < 4; ++g)
        for (std::size_t p = 0; p < 4; ++p)
            if (g != p) EXPECT_EQ(cm(g, p), 0u);
    auto r = iou(cm);
    for (const auto& v : r.per_class)
        if (v) EXPECT_EQ(*v, 1.0);
    EXPECT_EQ(*r.mean, 1.0);
    const auto before = cm;
    cm.accumulate(LabelMap(1, 8, 9, kIgnoreId), random_prediction(gt, 4, rng));
    EXPECT_EQ(cm, before);
}

TEST(Confusion, Errors) {
    ConfusionMatrix cm(3);
    EXPECT_THROW(cm.accumulate(LabelMap(1, 2, 2), LabelMap(1, 2, 3)), ShapeError);
    EXPECT_THROW(cm.accumulate(LabelMap(1, 1, 1, std::uint8_t{0}), LabelMap(1, 1, 1, std::uint8_t{3})), ValueError);
    EXPECT_THROW(cm.accumulate(LabelMap(1, 1, 1, std::uint8_t{4}), LabelMap(1, 1, 1, std::uint8_t{0})), ValueError);
    ConfusionMatrix other(4);
    EXPECT_THROW(cm.merge(other), ShapeError);
}

TEST(Iou, AbsentClassesAreExcluded) {
    ConfusionMatrix cm(4);
    cm(0, 0) = 3;
    cm(2, 2) = 1;
    cm(2, 0) = 1;
    auto r = iou(cm);
    EXPECT_FALSE(r.per_class[1].has_value());
    EXPECT_FALSE(r.per_class[3].has_value());
    EXPECT_EQ(r.evaluated, 2u);
    EXPECT_DOUBLE_EQ(*r.mean, (0.75 + 0.5) / 2);
    auto empty = iou(ConfusionMatrix(5));
    EXPECT_FALSE(empty.mean.has_value());
    EXPECT_EQ(empty.evaluated, 0u);
    EXPECT_FALSE(ConfusionMatrix(5).pixel_accuracy().has_value());
}

TEST(Iou, ConstantPredictionOnBalancedSplit) {
    LabelMap gt(1, 4, 4);
    for (std::size_t i = 8; i < 16; ++i) gt.ids[i] = 1;
    ConfusionMatrix cm(2);
    cm.accumulate(gt, LabelMap(1, 4, 4, std::uint8_t{0}));
    auto r = iou(cm);
    EXPECT_DOUBLE_EQ(*r.per_class[0], 0.5);
    EXPECT_DOUBLE_EQ(*r.per_class[1], 0.0);
    EXPECT_DOUBLE_EQ(*r.mean, 0.25);
}

TEST(IouProperties, StreamingEqualsOneShot) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed);
        const std::size_t k = 2 + rng.below(6), s = 1 + rng.below(5);
        LabelMap all_gt(s, 6, 7), all_pred(s, 6, 7);
        ConfusionMatrix stream(k);
        for (std::size_t i = 0; i < s; ++i) {
            LabelMap gt = random_labels(6, 7, k, rng), pred = random_prediction(gt, k, rng);
            stream.accumulate(gt, pred);
            std::copy(gt.ids.begin(), gt.ids.end(), all_gt.ids.begin() + static_cast<long>(i * 42));
            std::copy(pred.ids.begin(), pred.ids.end(), all_pred.ids.begin() + static_cast<long>(i * 42));
        }
        ConfusionMatrix once(k);
        once.accumulate(all_gt, all_pred);
        EXPECT_EQ(stream, once);
        std::size_t valid = 0;
        for (auto id : all_gt.ids) valid += id != kIgnoreId;
        EXPECT_EQ(once.total(), valid);
    }
}

TEST(IouProperties, MergeIsCommutativeAndAssociative) {
    Rng rng(3);
    std::vector<ConfusionMatrix> m;
    for (int i = 0; i < 3; ++i) {
        ConfusionMatrix c(5);
        LabelMap gt = random_labels(10, 10, 5, rng);
        c.accumulate(gt, random_prediction(gt, 5, rng));
        m.push_back(c);
    }
    EXPECT_EQ(m[0] + m[1], m[1] + m[0]);
    EXPECT_EQ((m[0] + m[1]) + m[2], m[0] + (m[1] + m[2]));
    const auto merged = iou(m[0] + m[1]);
    ConfusionMatrix direct(5);
    direct.merge(m[0]);
    direct.merge(m[1]);
    EXPECT_EQ(merged.mean, iou(direct).mean);
}

TEST(IouProperties, BoundedAndPermutationEquivariant) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed + 100);
        const std::size_t k = 3 + rng.below(5);
        LabelMap gt = random_labels(9, 11, k, rng), pred = random_prediction(gt, k, rng);
        std::vector<std::uint8_t> perm(k);
        std::iota(perm.begin(), perm.end(), std::uint8_t{0});
        rng.shuffle(std::span<std::uint8_t>(perm));
        LabelMap pg = gt, pp = pred;
        for (auto& id : pg.ids)
            if (id != kIgnoreId) id = perm[id];
        for (auto& id : pp.ids) id = perm[id];
        ConfusionMatrix a(k), b(k);
        a.accumulate(gt, pred);
        b.accumulate(pg, pp);
        auto ra = iou(a), rb = iou(b);
        for (std::size_t c = 0; c < k; ++c) {
            ASSERT_EQ(ra.per_class[c].has_value(), rb.per_class[perm[c]].has_value());
            if (!ra.per_class[c]) continue;
            EXPECT_GE(*ra.per_class[c], 0.0);
            EXPECT_LE(*ra.per_class[c], 1.0);
            EXPECT_DOUBLE_EQ(*ra.per_class[c], *rb.per_class[perm[c]]);
        }
        EXPECT_NEAR(*ra.mean, *rb.mean, 1e-15);
    }
}

TEST(IouProperties, ArgmaxIgnoresPerPixelShift) {
    Rng rng(5);
    Tensor<double> logits = Tensor<double>::uniform({2, 4, 5, 6}, 3.0, rng);
    Tensor<double> shifted = logits.clone();
    auto d = shifted.mutable_data();
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t p = 0; p < 30; ++p) {
            const double c = static_cast<double>(rng.below(64));
            for (std::size_t k = 0; k < 4; ++k) d[(n * 4 + k) * 30 + p] += c;
        }
    EXPECT_EQ(nn::argmax_channels(logits).ids, nn::argmax_channels(shifted).ids);
}

TEST(Report, CityscapesTableHasNineteenRowsAndMean) {
    const auto names = data::cityscapes_class_map().class_names();
    ConfusionMatrix cm(19);
    for (std::size_t c = 0; c < 19; ++c) cm(c, c) = c + 1;
    Report rep{names, cm, iou(cm), 3};
    std::istringstream in(rep.text());
    std::vector<std::string> lines;
    for (std::string l; std::getline(in, l);) lines.push_back(l);
    ASSERT_EQ(lines.size(), 21u);
    EXPECT_EQ(lines[1].rfind("road", 0), 0u);
    EXPECT_EQ(lines[19].rfind("bicycle", 0), 0u);
    EXPECT_NE(lines[20].find("Mean IoU"), std::string::npos);
    EXPECT_NE(lines[20].find("100.00"), std::string::npos);
    const auto j = rep.json();
    EXPECT_EQ(j["classes"].size(), 19u);
    EXPECT_EQ(j["mean_iou"].get<double>(), 1.0);
    EXPECT_EQ(j["samples"].get<std::size_t>(), 3u);
    EXPECT_EQ(j["confusion"][18][18].get<std::uint64_t>(), 19u);
}

TEST(Palette, BundledFileMatchesBuiltIn) {
    const auto file = read_palette(std::string(SEGNET_SOURCE_DIR) + "/data/palettes/cityscapes.txt");
    EXPECT_EQ(file, data::cityscapes_palette());
    EXPECT_EQ(extend_palette(file, 25).size(), 25u);
    const auto bad = scratch("palette") / "bad.txt";
    std::ofstream(bad) << "1 2 300\n";
    EXPECT_THROW(read_palette(bad.string()), ValueError);
}

TEST(Palette, ColourizeDrawsIgnoredBlack) {
    const auto pal = data::cityscapes_palette();
    auto img = colourize(LabelMap(1, 1, 2, std::vector<std::uint8_t>{0, kIgnoreId}), pal);
    EXPECT_EQ(img.samples, (std::vector<std::uint16_t>{128, 64, 128, 0, 0, 0}));
}

TEST(Evaluate, ConstantOracleModel) {
    data::SynthParams sp;
    sp.count = 3;
    sp.image_size = 32;
    sp.val_fraction = 0;
    const auto manifest = data::gen_synthetic(sp, scratch("dataset").string());
    const auto ds = data::Dataset::open(manifest, data::identity_class_map(5));

    model::ModelConfig cfg = model::ModelConfig::toy(5);
    cfg.block_depths = {1, 1, 1, 1};
    cfg.width_multiplier = 0.0625;
    model::SegNet<float> net(cfg, 1);
    for (float& v : net.find("head.logits.weight")->tensor.mutable_data()) v = 0;
    auto bias = net.find("head.logits.bias")->tensor.mutable_data();
    bias[0] = 10.0f;

    ConfusionMatrix expect(5);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto s = ds.load(i);
        expect.accumulate(s.labels, LabelMap(1, s.height(), s.width(), std::uint8_t{0}));
    }
    EvalOptions opts;
    opts.dump_dir = scratch("dump").string();
    Report rep = evaluate(net, ds, opts);
    EXPECT_EQ(rep.matrix, expect);
    EXPECT_EQ(rep.samples, 3u);
    EXPECT_TRUE(fs::exists(fs::path(opts.dump_dir) / "000002.png"));
    const double bg = static_cast<double>(expect(0, 0)) / static_cast<double>(expect.total());
    EXPECT_NEAR(*rep.result.per_class[0], bg, 1e-12);
    EXPECT_NEAR(*rep.result.mean, bg / static_cast<double>(rep.result.evaluated), 1e-12);

    model::ModelConfig wrong = cfg;
    wrong.num_classes = 4;
    model::SegNet<float> mismatch(wrong, 1);
    EXPECT_THROW(evaluate(mismatch, ds), ValueError);
}
