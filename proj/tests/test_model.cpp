#include <gtest/gtest.h>

#include <unistd.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "segnet/model/meta.hpp"
#include "segnet/model/network.hpp"
#include "segnet/nn.hpp"
#include "segnet/rng.hpp"

using namespace segnet;
using namespace segnet::model;
using TF = Tensor<float>;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny(std::size_t os = 8, std::size_t classes = 4) {
    ModelConfig c = ModelConfig::toy(classes);
    c.output_stride = os;
    c.block_depths = {1, 1, 1, 1};
    c.width_multiplier = 0.0625;
    return c;
}

fs::path scratch(const std::string& name) {
    fs::path d = fs::temp_directory_path() / ("segnet_test_model_" + std::to_string(::getpid()));
    fs::create_directories(d);
    return d / name;
}

std::vector<std::pair<std::string, Shape>> param_shapes(const SegNet<float>& m) {
    std::vector<std::pair<std::string, Shape>> out;
    for (const auto& p : m.parameters()) out.emplace_back(p.path, p.tensor.shape());
    return out;
}

bool bitwise_equal(const TF& a, const TF& b) {
    if (a.shape() != b.shape()) return false;
    return std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(float)) == 0;
}

}  // namespace

TEST(ModelShapes, TopExtentsFollowOutputStride) {
    EXPECT_EQ(trace_shapes(ModelConfig::toy(5), 1, 96, 96).top, (Shape{1, 256, 12, 12}));
    ModelConfig c = ModelConfig::toy(5);
    c.output_stride = 32;
    EXPECT_EQ(trace_shapes(c, 1, 96, 96).top[2], 3u);
}

TEST(ModelShapes, PaperScaleChannels) {
    ModelConfig p = ModelConfig::paper_scale(19);
    EXPECT_EQ(p.top_channels(), 2048u);
    EXPECT_EQ(p.reduced_channels(), 512u);
    EXPECT_EQ(p.head_in_channels(), 1024u);
    auto t = trace_shapes(p, 1, 720, 720);
    EXPECT_EQ(t.top, (Shape{1, 2048, 90, 90}));
    EXPECT_EQ(t.fused, (Shape{1, 1024, 90, 90}));
    EXPECT_EQ(t.logits, (Shape{1, 19, 720, 720}));
    p.fusion_mode = FusionMode::sum;
    EXPECT_EQ(trace_shapes(p, 1, 720, 720).fused, (Shape{1, 512, 90, 90}));
}

TEST(ModelShapes, StageGeometry) {
    EXPECT_EQ(stage_geometry(8).strides, (std::array<std::size_t, 4>{1, 2, 1, 1}));
    EXPECT_EQ(stage_geometry(8).dilations, (std::array<std::size_t, 4>{1, 1, 2, 4}));
    EXPECT_EQ(stage_geometry(16).strides, (std::array<std::size_t, 4>{1, 2, 2, 1}));
    EXPECT_EQ(stage_geometry(16).dilations, (std::array<std::size_t, 4>{1, 1, 1, 2}));
    EXPECT_EQ(stage_geometry(32).strides, (std::array<std::size_t, 4>{1, 2, 2, 2}));
    EXPECT_EQ(stage_geometry(32).dilations, (std::array<std::size_t, 4>{1, 1, 1, 1}));
    EXPECT_THROW(stage_geometry(4), ValueError);
    ModelConfig c = ModelConfig::toy(3);
    c.output_stride = 12;
    EXPECT_THROW(SegNet<float>{c}, ValueError);
}

TEST(ModelShapes, BackboneLayoutCarriesStageDilation) {
    const auto L = backbone_layout(ModelConfig::paper_scale(), 3);
    EXPECT_EQ(L.stem[0].stride_h, 2u);
    EXPECT_EQ(L.stages[2].size(), 23u);
    for (const auto& blk : L.stages[3]) {
        EXPECT_EQ(blk.conv2.dilation, 4u);
        EXPECT_EQ(blk.conv1.kernel_h, 1u);
        EXPECT_EQ(blk.conv3.kernel_h, 1u);
    }
    EXPECT_EQ(L.out_channels, 2048u);
    EXPECT_THROW(backbone_layout(ModelConfig::paper_scale(), 2), ValueError);
}

TEST(ModelShapes, ForwardExtentsForEveryOutputStride) {
    for (std::size_t os : {8, 16, 32}) {
        SegNet<float> net(tiny(os), 1);
        Rng rng(os);
        TF rgb = TF::uniform({1, 3, 64, 96}, 1.0f, rng), depth = TF::uniform({1, 1, 64, 96}, 1.0f, rng);
        auto out = net.forward_all(rgb, depth);
        EXPECT_EQ(out.rgb_top.dim(2), 64 / os);
        EXPECT_EQ(out.rgb_top.dim(3), 96 / os);
        EXPECT_EQ(out.logits.shape(), (Shape{1, 4, 64, 96}));
    }
}

TEST(ModelShapes, IndivisibleInputIsPaddedThenCropped) {
    SegNet<float> net(tiny(8), 2);
    Rng rng(3);
    auto out = net.forward_all(TF::uniform({1, 3, 37, 50}, 1.0f, rng), TF::uniform({1, 1, 37, 50}, 1.0f, rng));
    EXPECT_EQ(out.padded_h, 40u);
    EXPECT_EQ(out.padded_w, 56u);
    EXPECT_EQ(out.logits.shape(), (Shape{1, 4, 37, 50}));
}

TEST(ModelShapes, RgbOnlyAndRgbdAgree) {
    ModelConfig c = tiny();
    c.depth_branch = false;
    SegNet<float> rgb_only(c), rgbd(tiny());
    Rng rng(4);
    TF rgb = TF::uniform({1, 3, 48, 48}, 1.0f, rng);
    EXPECT_EQ(rgb_only.forward(rgb).shape(), (Shape{1, 4, 48, 48}));
    EXPECT_EQ(rgbd.forward(rgb, TF::zeros({1, 1, 48, 48})).shape(), (Shape{1, 4, 48, 48}));
    EXPECT_THROW(rgbd.forward(rgb), ValueError);
    EXPECT_THROW(rgb_only.forward(rgb, TF::zeros({1, 1, 48, 48})), ValueError);
    EXPECT_THROW(rgbd.forward(rgb, TF::zeros({1, 1, 40, 48})), ShapeError);
}

TEST(ModelShapes, ParameterShapesIndependentOfOutputStride) {
    const auto a = param_shapes(SegNet<float>(tiny(8))), b = param_shapes(SegNet<float>(tiny(16))),
               c = param_shapes(SegNet<float>(tiny(32)));
    EXPECT_EQ(a, b);
    EXPECT_EQ(a, c);
    SegNet<float> src(tiny(8), 9), dst(tiny(32), 1);
    EXPECT_TRUE(dst.load_state_dict(src.state_dict()).clean());
}

TEST(DepthInit, ChannelMean) {
    TF w({1, 3, 1, 1}, {0.3f, 0.6f, 0.9f});
    EXPECT_NEAR(init_depth_stem_from_rgb(w).item(), 0.6f, 1e-7);
    TF z = init_depth_stem_from_rgb(TF::zeros({4, 3, 3, 3}));
    for (float v : z.data()) EXPECT_EQ(v, 0.0f);
    EXPECT_THROW(init_depth_stem_from_rgb(TF::zeros({4, 1, 3, 3})), ShapeError);
}

TEST(DepthInit, RandomFiltersMatchPerTapMean) {
    Rng rng(64);
    Tensor<double> w = Tensor<double>::uniform({64, 3, 3, 3}, 1.0, rng);
    auto d = init_depth_stem_from_rgb(w);
    ASSERT_EQ(d.shape(), (Shape{64, 1, 3, 3}));
    for (std::size_t o = 0; o < 64; ++o)
        for (std::size_t l = 0; l < 3; ++l)
            for (std::size_t m = 0; m < 3; ++m) {
                double s = 0;
                for (std::size_t c = 0; c < 3; ++c) s += w.at(o, c, l, m);
                EXPECT_NEAR(d.at(o, 0, l, m), s / 3, 1e-15);
            }
}

TEST(DepthInit, WholeBranchCopiedFromRgb) {
    SegNet<float> net(tiny(), 5);
    net.init_depth_from_rgb();
    std::size_t compared = 0;
    for (const auto& p : net.parameters()) {
        if (p.group() != "depth") continue;
        auto src = net.find("rgb." + p.path.substr(6));
        ASSERT_TRUE(src.has_value()) << p.path;
        if (p.path == "depth.stem.conv1.weight") {
            EXPECT_TRUE(bitwise_equal(p.tensor, init_depth_stem_from_rgb(src->tensor)));
        } else {
            EXPECT_TRUE(bitwise_equal(p.tensor, src->tensor)) << p.path;
        }
        ++compared;
    }
    EXPECT_GT(compared, 20u);
}

TEST(Fusion, ConcatSliceRecoversBranches) {
    ModelConfig c = tiny();
    FusionBlock<float> f(c, 3);
    Rng rng(5);
    TF a = TF::uniform({2, c.top_channels(), 3, 4}, 1.0f, rng), b = TF::uniform({2, c.top_channels(), 3, 4}, 1.0f, rng);
    TF y = f.forward(a, b);
    const std::size_t r = c.reduced_channels();
    ASSERT_EQ(y.shape(), (Shape{2, 2 * r, 3, 4}));
    EXPECT_TRUE(bitwise_equal(slice_channels(y, 0, r), f.last_rgb()));
    EXPECT_TRUE(bitwise_equal(slice_channels(y, r, 2 * r), f.last_depth()));
    EXPECT_THROW(f.forward(a, TF::zeros({2, c.top_channels(), 3, 5})), ShapeError);
}

TEST(Fusion, SumWithSilentDepthEqualsRgb) {
    ModelConfig c = tiny();
    c.fusion_mode = FusionMode::sum;
    SegNet<float> net(c, 6);
    net.set_bn_mode(nn::BnMode::frozen);
    for (float& v : net.find("fusion.depth.conv.weight")->tensor.mutable_data()) v = 0;
    Rng rng(6);
    auto out = net.forward_all(TF::uniform({1, 3, 32, 32}, 1.0f, rng), TF::uniform({1, 1, 32, 32}, 1.0f, rng));
    ASSERT_EQ(out.fused.shape()[1], c.reduced_channels());
    for (float v : net.fusion()->last_depth().data()) EXPECT_EQ(v, 0.0f);
    EXPECT_TRUE(bitwise_equal(out.fused, net.fusion()->last_rgb()));
}

TEST(Fusion, ZeroDepthIsAFixedBiasPattern) {
    ModelConfig c = tiny();
    c.fusion_mode = FusionMode::sum;
    SegNet<float> net(c, 7);
    net.set_bn_mode(nn::BnMode::frozen);
    Rng rng(7);
    TF zeros = TF::zeros({1, 1, 32, 32}), neg_zeros = TF::constant({1, 1, 32, 32}, -0.0f);
    TF rgb1 = TF::uniform({1, 3, 32, 32}, 1.0f, rng), rgb2 = TF::uniform({1, 3, 32, 32}, 1.0f, rng);
    TF l1 = net.forward(rgb1, zeros);
    TF d1 = net.fusion()->last_depth().clone();
    TF l1n = net.forward(rgb1, neg_zeros);
    EXPECT_TRUE(bitwise_equal(l1, l1n));
    net.forward(rgb2, zeros);
    EXPECT_TRUE(bitwise_equal(d1, net.fusion()->last_depth()));
    EXPECT_FALSE(bitwise_equal(l1, net.forward(rgb2, zeros)));
}

TEST(Head, FiveEqualBranchesSumToFiveTimesOne) {
    ModelConfig c = tiny();
    c.pyramid = std::vector<PyramidBranch>(5, PyramidBranch{1, 1});
    SegNet<float> net(c, 8);
    net.set_bn_mode(nn::BnMode::frozen);
    const TF w0 = net.find("head.branch0.conv.weight")->tensor;
    for (int i = 1; i < 5; ++i) {
        auto w = net.find("head.branch" + std::to_string(i) + ".conv.weight")->tensor.mutable_data();
        std::copy(w0.data().begin(), w0.data().end(), w.begin());
    }
    Rng rng(8);
    auto out = net.forward_all(TF::uniform({1, 3, 32, 32}, 1.0f, rng), TF::uniform({1, 1, 32, 32}, 1.0f, rng));
    ConvUnit<float> b0 = net.head().branches()[0];
    TF single = b0.forward(out.fused);
    for (std::size_t i = 0; i < single.numel(); ++i) EXPECT_NEAR(out.pyramid_sum.data()[i], 5 * single.data()[i], 1e-5);
}

TEST(Head, DefaultPyramidTopology) {
    SegNet<float> net(tiny(), 0);
    const auto& br = net.head().branches();
    ASSERT_EQ(br.size(), 5u);
    EXPECT_EQ(br[0].spec.kernel_h, 1u);
    const std::size_t rates[] = {2, 4, 8, 16};
    for (std::size_t i = 1; i < 5; ++i) {
        EXPECT_EQ(br[i].spec.kernel_h, 3u);
        EXPECT_EQ(br[i].spec.dilation, rates[i - 1]);
        EXPECT_EQ(br[i].spec.effective_kernel_h(), 2 * rates[i - 1] + 1);
        EXPECT_TRUE(br[i].has_bn && br[i].has_relu);
    }
    EXPECT_TRUE(net.head().has_global_context());
    EXPECT_TRUE(net.find("head.logits.bias").has_value());
    EXPECT_FALSE(net.find("head.logits.bn.gamma").has_value());
}

TEST(Head, DeeplabBaselineTopology) {
    ModelConfig c = tiny();
    c.depth_branch = false;
    c.apply_pyramid_preset("deeplab-v2");
    SegNet<float> net(c, 0);
    const auto& br = net.head().branches();
    ASSERT_EQ(br.size(), 4u);
    const std::size_t rates[] = {6, 12, 18, 24};
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(br[i].spec.dilation, rates[i]);
    EXPECT_FALSE(net.head().has_global_context());
    EXPECT_EQ(net.fusion(), nullptr);
    for (const auto& p : net.parameters()) EXPECT_TRUE(p.group() == "rgb" || p.group() == "head") << p.path;
    EXPECT_EQ(net.forward(TF::zeros({1, 3, 24, 24})).shape(), (Shape{1, 4, 24, 24}));
}

TEST(ModelProperties, FrozenForwardIsBitwiseDeterministic) {
    SegNet<float> net(tiny(), 11);
    net.set_bn_mode(nn::BnMode::frozen);
    Rng rng(11);
    TF rgb = TF::uniform({2, 3, 40, 40}, 1.0f, rng), depth = TF::uniform({2, 1, 40, 40}, 1.0f, rng);
    EXPECT_TRUE(bitwise_equal(net.forward(rgb, depth), net.forward(rgb, depth)));
    SegNet<float> twin(tiny(), 11);
    twin.set_bn_mode(nn::BnMode::frozen);
    EXPECT_TRUE(bitwise_equal(net.forward(rgb, depth), twin.forward(rgb, depth)));
}

TEST(ModelProperties, GradientReachesEveryLearnable) {
    SegNet<float> net(tiny(8, 3), 12);
    net.set_trainable(true);
    Rng rng(12);
    TF rgb = TF::uniform({2, 3, 32, 32}, 1.0f, rng), depth = TF::uniform({2, 1, 32, 32}, 1.0f, rng);
    LabelMap labels(2, 32, 32);
    for (auto& id : labels.ids) id = static_cast<std::uint8_t>(rng.below(3));
    {
        GradientTape<float> tape;
        tape.backward(nn::softmax_cross_entropy(net.forward(rgb, depth), labels));
    }
    for (const auto& p : net.learnable_parameters()) {
        ASSERT_TRUE(p.tensor.has_grad()) << p.path;
        double mag = 0;
        for (float g : p.tensor.grad()) mag += std::abs(g);
        EXPECT_GT(mag, 0.0) << p.path;
    }
}

TEST(Checkpoint, RoundTripIsBitwise) {
    SegNet<float> a(tiny(), 21), b(tiny(), 22);
    const auto file = scratch("round.sgck");
    a.save(file.string());
    auto rep = b.load(file.string());
    EXPECT_TRUE(rep.clean());
    auto pa = a.parameters(), pb = b.parameters();
    ASSERT_EQ(pa.size(), pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_TRUE(bitwise_equal(pa[i].tensor, pb[i].tensor)) << pa[i].path;
    EXPECT_EQ(Checkpoint::load(file.string()).format_version(), kCheckpointVersion);
}

TEST(Checkpoint, RgbIntoRgbdReportsDepthMissing) {
    ModelConfig c = tiny();
    c.depth_branch = false;
    SegNet<float> rgb(c, 31), rgbd(tiny(), 32);
    auto rep = rgbd.load_state_dict(rgb.state_dict(), {.strict = false});
    EXPECT_FALSE(rep.missing.empty());
    for (const auto& m : rep.missing) EXPECT_TRUE(m.rfind("depth.", 0) == 0 || m.rfind("fusion.", 0) == 0) << m;
    for (const auto& p : rgb.parameters())
        if (p.group() == "rgb") EXPECT_TRUE(bitwise_equal(p.tensor, rgbd.find(p.path)->tensor)) << p.path;
    EXPECT_THROW(rgbd.load_state_dict(rgb.state_dict()), ValueError);
}

TEST(Checkpoint, StrictLoadNamesDeletedEntry) {
    SegNet<float> net(tiny(), 41);
    Checkpoint ck = net.state_dict();
    ck.erase("rgb.res3.0.conv2.weight");
    try {
        net.load_state_dict(ck);
        FAIL() << "strict load accepted a missing entry";
    } catch (const ValueError& e) {
        EXPECT_NE(std::string(e.what()).find("rgb.res3.0.conv2.weight"), std::string::npos);
    }
}

TEST(Checkpoint, MetaAndOptimizerEntriesAreIgnoredOnLoad) {
    SegNet<float> net(tiny(), 42);
    Checkpoint ck = net.state_dict();
    write_model_meta(net.config(), ck);
    ck.put("optim.velocity.rgb.stem.conv1.weight", Shape{1}, {0.5f});
    EXPECT_TRUE(net.load_state_dict(ck).clean());
    ModelConfig back = read_model_meta(ck);
    EXPECT_EQ(back.output_stride, net.config().output_stride);
    EXPECT_EQ(back.block_depths, net.config().block_depths);
    EXPECT_EQ(back.width_multiplier, net.config().width_multiplier);
    EXPECT_EQ(back.pyramid, net.config().pyramid);
    EXPECT_EQ(back.num_classes, net.config().num_classes);
}

TEST(Checkpoint, CorruptFilesAreRejected) {
    SegNet<float> net(tiny(), 51);
    const auto file = scratch("corrupt.sgck");
    net.save(file.string());
    std::string bytes;
    {
        std::ifstream is(file, std::ios::binary);
        bytes.assign(std::istreambuf_iterator<char>(is), {});
    }
    auto write = [&](const std::string& b) {
        std::ofstream os(file, std::ios::binary | std::ios::trunc);
        os.write(b.data(), static_cast<std::streamsize>(b.size()));
    };
    write(bytes.substr(0, bytes.size() / 2));
    EXPECT_THROW(Checkpoint::load(file.string()), IoError);
    std::string v2 = bytes;
    v2[4] = 2;
    write(v2);
    EXPECT_THROW(Checkpoint::load(file.string()), IoError);
    std::string bad = bytes;
    bad[0] = 'X';
    write(bad);
    EXPECT_THROW(Checkpoint::load(file.string()), IoError);
    write(bytes + "junk");
    EXPECT_THROW(Checkpoint::load(file.string()), IoError);
    EXPECT_THROW(Checkpoint::load((file.parent_path() / "absent.sgck").string()), IoError);
}

TEST(Checkpoint, ShapeMismatchIsReported) {
    ModelConfig wide = tiny();
    wide.num_classes = 7;
    SegNet<float> a(wide, 1), b(tiny(), 1);
    auto rep = b.load_state_dict(a.state_dict(), {.strict = false});
    ASSERT_EQ(rep.mismatched.size(), 2u);
    EXPECT_NE(rep.mismatched[0].find("head.logits"), std::string::npos);
}
