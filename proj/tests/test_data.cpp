#include <gtest/gtest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <iterator>

#include "segnet/data/augment.hpp"
#include "segnet/data/class_map.hpp"
#include "segnet/data/sample.hpp"
#include "segnet/data/synthetic.hpp"
#include "segnet/io/png.hpp"

using namespace segnet;
using namespace segnet::data;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    fs::path d = fs::temp_directory_path() / ("segnet_test_data_" + std::to_string(::getpid()));
    fs::create_directories(d);
    return d / name;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), {}};
}

Sample random_sample(std::size_t h, std::size_t w, std::uint64_t seed) {
    Rng rng(seed);
    Sample s;
    std::vector<float> rgb(3 * h * w), depth(h * w);
    for (auto& v : rgb) v = static_cast<float>(rng.below(256)) / 255.0f;
    for (auto& v : depth) v = static_cast<float>(rng.below(256)) / 255.0f;
    s.rgb = Tensor<float>({3, h, w}, std::move(rgb));
    s.depth = Tensor<float>({1, h, w}, std::move(depth));
    s.labels = LabelMap(1, h, w);
    for (auto& id : s.labels.ids) id = static_cast<std::uint8_t>(rng.below(5));
    return s;
}

bool same_values(const Tensor<float>& a, const Tensor<float>& b) {
    return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

bool same_sample(const Sample& a, const Sample& b) {
    return same_values(a.rgb, b.rgb) && same_values(a.depth, b.depth) && a.labels.ids == b.labels.ids &&
           a.labels.h == b.labels.h && a.labels.w == b.labels.w;
}

AugmentParams neutral(long long crop) {
    AugmentParams p;
    p.scale_min = p.scale_max = 1.0;
    p.crop = crop;
    p.hflip_prob = 0.0;
    p.jitter = false;
    return p;
}

void write_gray(const fs::path& p, std::size_t h, std::size_t w, int bits, const std::vector<std::uint16_t>& v) {
    io::Image img(w, h, 1, bits);
    img.samples = v;
    io::write_png(p.string(), img);
}

}  // namespace

TEST(ClassMaps, CityscapesTrainIdsInReportOrder) {
    const auto m = cityscapes_class_map();
    // raw label ids of the official Cityscapes label table, listed in train-id order
    const std::vector<std::pair<int, std::string>> table{
        {7, "road"},           {8, "sidewalk"},      {11, "building"},   {12, "wall"},   {13, "fence"},
        {17, "pole"},          {19, "traffic light"}, {20, "traffic sign"}, {21, "vegetation"}, {22, "terrain"},
        {23, "sky"},           {24, "person"},       {25, "rider"},      {26, "car"},    {27, "truck"},
        {28, "bus"},           {31, "train"},        {32, "motorcycle"}, {33, "bicycle"}};
    ASSERT_EQ(m.num_classes(), 19u);
    for (std::size_t t = 0; t < table.size(); ++t) {
        EXPECT_EQ(m(static_cast<std::uint8_t>(table[t].first)), t) << table[t].second;
        EXPECT_EQ(m.class_names()[t], table[t].second);
    }
    std::size_t ignored = 0;
    for (int raw = 0; raw < 256; ++raw) ignored += m(static_cast<std::uint8_t>(raw)) == kIgnoreId;
    EXPECT_EQ(ignored, 256u - 19u);
}

TEST(ClassMaps, CarlaIgnoresRoadLineAndOthers) {
    const auto m = carla_class_map();
    EXPECT_EQ(m.num_classes(), 10u);
    EXPECT_EQ(m.map_name("road line"), kIgnoreId);
    EXPECT_EQ(m.map_name("others"), kIgnoreId);
    EXPECT_EQ(m.map_name("unlabeled"), kIgnoreId);
    EXPECT_EQ(m.class_names().front(), "Buildings");
    EXPECT_EQ(m.class_names().back(), "Traffic Signs");
    EXPECT_THROW(m.map_name("sky"), ValueError);
}

TEST(ClassMaps, CityscapesToCarlaGroupsVehicles) {
    const auto m = cityscapes_to_carla_map();
    const auto vehicles = carla_class_map().target_id("Vehicles");
    ASSERT_TRUE(vehicles.has_value());
    for (const char* n : {"car", "truck", "bus"}) EXPECT_EQ(m.map_name(n), *vehicles) << n;
    for (const char* n : {"sky", "terrain", "train", "rider"}) EXPECT_EQ(m.map_name(n), kIgnoreId) << n;
    EXPECT_EQ(m.map_name("road"), *carla_class_map().target_id("Roads"));
    EXPECT_EQ(m.num_classes(), 10u);
}

TEST(ClassMaps, TargetsMustBeCovered) {
    EXPECT_THROW(ClassMap("bad", {"a", "b"}, {{0, "a", 0}}), ValueError);
    EXPECT_THROW(ClassMap("bad", {"a"}, {{0, "a", 3}}), ValueError);
    EXPECT_EQ(class_map_by_name("synthetic", 7).num_classes(), 7u);
    EXPECT_THROW(class_map_by_name("kitti", 5), ValueError);
}

TEST(ClassMaps, RemapIsIdempotent) {
    Sample s = random_sample(4, 4, 1);
    for (auto& id : s.labels.ids) id = static_cast<std::uint8_t>(id * 7);
    const auto m = cityscapes_class_map();
    remap(s, m);
    const auto once = s.labels.ids;
    remap(s, m);
    EXPECT_EQ(s.labels.ids, once);
    EXPECT_EQ(s.label_space, "cityscapes");
}

TEST(Io, SixteenBitDepthEndpoint) {
    const auto rgb = scratch("endpoint_rgb.png"), depth = scratch("endpoint_depth.png"),
               label = scratch("endpoint_label.png");
    io::Image colour(2, 1, 3, 8);
    io::write_png(rgb.string(), colour);
    write_gray(depth, 1, 2, 16, {65535, 0});
    write_gray(label, 1, 2, 8, {6, 7});
    Sample s = load_sample(rgb.string(), depth.string(), label.string(), carla_class_map());
    EXPECT_EQ(s.depth.data()[0], 1.0f);
    EXPECT_EQ(s.depth.data()[1], 0.0f);
    EXPECT_EQ(s.labels.ids[0], kIgnoreId);
    EXPECT_EQ(s.labels.ids[1], 4);
    write_gray(depth, 1, 2, 8, {255, 51});
    s = load_sample(rgb.string(), depth.string(), label.string(), carla_class_map());
    EXPECT_EQ(s.depth.data()[0], 1.0f);
    EXPECT_FLOAT_EQ(s.depth.data()[1], 0.2f);
}

TEST(Io, LoadErrors) {
    const auto rgb = scratch("err_rgb.png"), depth = scratch("err_depth.png"), label = scratch("err_label.png");
    io::write_png(rgb.string(), io::Image(3, 2, 3, 8));
    write_gray(depth, 2, 2, 16, std::vector<std::uint16_t>(4, 0));
    write_gray(label, 2, 3, 8, std::vector<std::uint16_t>(6, 0));
    EXPECT_THROW(load_sample(rgb.string(), depth.string(), label.string(), carla_class_map()), ShapeError);
    EXPECT_THROW(load_sample(rgb.string(), scratch("none.png").string(), label.string(), carla_class_map()), IoError);
    std::ofstream(scratch("junk.png")) << "not an image";
    EXPECT_THROW(load_sample(rgb.string(), scratch("junk.png").string(), label.string(), carla_class_map()), IoError);
}

TEST(Io, SaveLoadRoundTripIsExact) {
    Sample s = random_sample(13, 17, 2);
    const auto a = scratch("rt_rgb.png"), b = scratch("rt_depth.png"), c = scratch("rt_label.png");
    save_sample(s, a.string(), b.string(), c.string());
    Sample back = load_sample(a.string(), b.string(), c.string(), identity_class_map(5));
    EXPECT_TRUE(same_sample(s, back));
    save_sample(back, a.string(), b.string(), c.string());
    Sample again = load_sample(a.string(), b.string(), c.string(), identity_class_map(5));
    EXPECT_TRUE(same_sample(back, again));
}

TEST(Io, ManifestRoundTripAndSplits) {
    const auto dir = scratch("manifest");
    fs::create_directories(dir);
    const std::string path = (dir / "m.tsv").string();
    write_manifest(path, {{"a/1.png", "b/1.png", "c/1.png", "train"},
                          {"/abs/2.png", "b/2.png", "c/2.png", "val"},
                          {"a/3.png", "b/3.png", "c/3.png", "train"}});
    auto entries = read_manifest(path);
    ASSERT_EQ(entries.size(), 3u);
    EXPECT_EQ(entries[0].rgb, (dir / "a/1.png").string());
    EXPECT_EQ(entries[1].rgb, "/abs/2.png");
    auto ds = Dataset::open(path, identity_class_map(3));
    EXPECT_EQ(ds.split("train").size(), 2u);
    EXPECT_EQ(Dataset::open(path, identity_class_map(3), "val").size(), 1u);
    std::ofstream(path, std::ios::app) << "only\ttwo\n";
    EXPECT_THROW(read_manifest(path), ValueError);
    EXPECT_THROW(read_manifest((dir / "missing.tsv").string()), IoError);
}

TEST(Augment, NeutralParametersAreIdentity) {
    Sample s = random_sample(20, 20, 3);
    Rng rng(3);
    EXPECT_TRUE(same_sample(augment(s, neutral(20), rng), s));
    EXPECT_THROW(augment(s, neutral(0), rng), ValueError);
}

TEST(Augment, FlipIsAnInvolution) {
    Sample s = random_sample(9, 14, 4);
    EXPECT_TRUE(same_sample(hflip(hflip(s)), s));
    EXPECT_FALSE(same_sample(hflip(s), s));
    EXPECT_EQ(hflip(s).labels.ids[0], s.labels.ids[13]);
}

TEST(Augment, HalfScaleExtents) {
    Sample s;
    s.rgb = Tensor<float>::zeros({3, 1024, 2048});
    s.depth = Tensor<float>::zeros({1, 1024, 2048});
    s.labels = LabelMap(1, 1024, 2048, 1);
    AugmentParams p = neutral(1024);
    p.scale_min = p.scale_max = 0.5;
    Rng rng(5);
    Sample out = augment(s, p, rng);
    ASSERT_EQ(out.height(), 1024u);
    std::size_t labelled_rows = 0;
    for (std::size_t y = 0; y < 1024; ++y) labelled_rows += out.labels.ids[y * 1024] == 1;
    EXPECT_EQ(labelled_rows, 512u);
    for (std::size_t x = 0; x < 1024; ++x) EXPECT_EQ(out.labels.ids[x], 1);
    EXPECT_EQ(resize_sample(s, 512, 1024).rgb.shape(), (Shape{3, 512, 1024}));
}

TEST(Augment, PlanesStayAligned) {
    Sample s;
    const std::size_t n = 48;
    s.rgb = Tensor<float>::zeros({3, n, n});
    s.depth = Tensor<float>::zeros({1, n, n});
    s.labels = LabelMap(1, n, n, 0);
    auto rgb = s.rgb.mutable_data();
    auto depth = s.depth.mutable_data();
    for (std::size_t y = 10; y < 30; ++y)
        for (std::size_t x = 5; x < 21; ++x) {
            s.labels.ids[y * n + x] = 1;
            rgb[y * n + x] = 1.0f;
            depth[y * n + x] = 0.5f;
        }
    AugmentParams p;
    p.crop = 40;
    p.jitter = false;
    std::size_t covered = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        Sample out = augment(s, p, rng);
        const std::size_t h = out.height(), w = out.width();
        std::size_t interior = 0;
        for (std::size_t y = 1; y + 1 < h; ++y)
            for (std::size_t x = 1; x + 1 < w; ++x) {
                bool inside = true;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) inside &= out.labels.ids[(y + dy) * w + x + dx] == 1;
                if (!inside) continue;
                ++interior;
                EXPECT_NEAR(out.rgb.data()[y * w + x], 1.0f, 1e-6);
                EXPECT_NEAR(out.rgb.data()[h * w + y * w + x], 0.0f, 1e-6);
                EXPECT_NEAR(out.depth.data()[y * w + x], 0.5f, 1e-6);
            }
        covered += interior > 0;
    }
    EXPECT_GE(covered, 15u);
}

TEST(Augment, DeterministicAndJitterTouchesRgbOnly) {
    Sample s = random_sample(40, 40, 6);
    AugmentParams p;
    p.crop = 32;
    p.jitter = false;
    AugmentParams pj = p;
    pj.jitter = true;
    Rng a(7), b(7), c(7);
    Sample x = augment(s, pj, a), y = augment(s, pj, b), z = augment(s, p, c);
    EXPECT_TRUE(same_sample(x, y));
    EXPECT_TRUE(same_values(x.depth, z.depth));
    EXPECT_EQ(x.labels.ids, z.labels.ids);
    EXPECT_FALSE(same_values(x.rgb, z.rgb));
    for (float v : x.rgb.data()) {
        EXPECT_GE(v, 0.0f);
        EXPECT_LE(v, 1.0f);
    }
}

TEST(Augment, PaddingUsesZeroAndIgnore) {
    Sample s = random_sample(10, 10, 8);
    for (float& v : s.rgb.mutable_data()) v = 1.0f;
    Rng rng(8);
    Sample out = augment(s, neutral(16), rng);
    EXPECT_EQ(out.labels.ids.back(), kIgnoreId);
    EXPECT_EQ(out.rgb.data().back(), 0.0f);
    EXPECT_EQ(out.depth.data().back(), 0.0f);
}

TEST(Synthetic, AreaScalesWithInverseSquareDistance) {
    for (std::uint8_t cls = 1; cls <= 8; ++cls) {
        SceneShape near, far;
        near.cls = far.cls = cls;
        near.kind = far.kind = shape_kind(cls);
        near.cx = near.cy = far.cx = far.cy = 256;
        near.distance = 2 * physical_size(cls);
        far.distance = 4 * physical_size(cls);
        near.half_extent = on_screen_half_extent(cls, near.distance, 512);
        far.half_extent = on_screen_half_extent(cls, far.distance, 512);
        const double ratio = static_cast<double>(rasterized_area(near, 512)) / static_cast<double>(rasterized_area(far, 512));
        EXPECT_NEAR(ratio, 4.0, 0.8) << int(cls);
    }
}

TEST(Synthetic, ScenesSatisfyPostconditions) {
    SynthParams p;
    p.num_classes = 9;
    for (std::size_t i = 0; i < 20; ++i) {
        Scene s = generate_scene(p, i);
        ASSERT_NO_THROW(s.sample.validate());
        EXPECT_GE(s.shapes.size(), 3u);
        EXPECT_LE(s.shapes.size(), 8u);
        for (auto id : s.sample.labels.ids) EXPECT_TRUE(id < 9 || id == kIgnoreId);
        for (float d : s.sample.depth.data()) {
            EXPECT_GT(d, 0.0f);
            EXPECT_LE(d, 1.0f);
        }
        for (const auto& sh : s.shapes) {
            EXPECT_GE(sh.distance, 1.0);
            EXPECT_LE(sh.distance, 10.0);
        }
        EXPECT_TRUE(scale_depth_consistent(s, p.image_size));
        // within a class, smaller visible area means larger mean depth
        for (std::size_t a = 0; a < s.shapes.size(); ++a)
            for (std::size_t b = 0; b < s.shapes.size(); ++b)
                if (s.shapes[a].cls == s.shapes[b].cls && s.visible_area[a] < s.visible_area[b])
                    EXPECT_GT(s.mean_depth[a], s.mean_depth[b]);
    }
}

TEST(Synthetic, GenerationIsBitwiseReproducible) {
    SynthParams p;
    p.count = 4;
    const auto a = scratch("synth_a"), b = scratch("synth_b");
    const std::string ma = gen_synthetic(p, a.string());
    gen_synthetic(p, b.string());
    auto entries = read_manifest(ma);
    ASSERT_EQ(entries.size(), 4u);
    EXPECT_EQ(entries.back().split, "val");
    EXPECT_EQ(entries.front().split, "train");
    for (const char* sub : {"rgb", "depth", "label"})
        for (int i = 0; i < 4; ++i) {
            char name[32];
            std::snprintf(name, sizeof name, "%06d.png", i);
            EXPECT_EQ(slurp(a / sub / name), slurp(b / sub / name)) << sub << "/" << name;
        }
    p.seed = 1;
    EXPECT_FALSE(same_sample(generate_scene(p, 0).sample, generate_scene(SynthParams{}, 0).sample));
}

TEST(Synthetic, Errors) {
    SynthParams p;
    p.count = 0;
    EXPECT_THROW(generate_scene(p, 0), ValueError);
    p.count = 1;
    p.image_size = 16;
    EXPECT_THROW(generate_scene(p, 0), ValueError);
    const auto blocker = scratch("blocker");
    std::ofstream(blocker) << "x";
    EXPECT_THROW(gen_synthetic(SynthParams{}, (blocker / "out").string()), IoError);
}
