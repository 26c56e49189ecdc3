#pragma once

// Procedural RGB-D scenes: a textured background with 3-8 flat shapes, each
// at a virtual distance d in [1,10]. Classes come in pairs that share shape
// and base colour; the second member of a pair is physically twice as large
// and lives in the far half of the range, so its on-screen size overlaps the
// first member's while its depth does not.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

#include "segnet/data/sample.hpp"
#include "segnet/rng.hpp"

namespace segnet::data {

enum class ShapeKind { square, disk, triangle, bar };

inline std::string to_string(ShapeKind k) {
    switch (k) {
        case ShapeKind::square: return "square";
        case ShapeKind::disk: return "disk";
        case ShapeKind::triangle: return "triangle";
        case ShapeKind::bar: return "bar";
    }
    return "?";
}

inline constexpr double kNearestDistance = 1.0;
inline constexpr double kFarthestDistance = 10.0;
inline constexpr double kBandSplit = 5.5;
inline constexpr double kBaseHalfExtent = 0.45;  // fraction of the image side at d = 1

inline ShapeKind shape_kind(std::uint8_t cls) { return static_cast<ShapeKind>(((cls - 1) / 2) % 4); }
inline bool far_member(std::uint8_t cls) { return (cls - 1) % 2 == 1; }
inline double physical_size(std::uint8_t cls) { return far_member(cls) ? 2.0 : 1.0; }

inline std::array<double, 3> base_colour(std::uint8_t cls) {
    static constexpr std::array<std::array<double, 3>, 6> table{{{0.85, 0.25, 0.2},
                                                                 {0.2, 0.65, 0.3},
                                                                 {0.25, 0.35, 0.85},
                                                                 {0.85, 0.75, 0.2},
                                                                 {0.7, 0.3, 0.75},
                                                                 {0.2, 0.75, 0.8}}};
    return table[((cls - 1) / 2) % table.size()];
}

struct SceneShape {
    std::uint8_t cls = 1;
    ShapeKind kind = ShapeKind::square;
    double distance = 1;
    double cx = 0, cy = 0;     // centre in pixels
    double half_extent = 1;    // on-screen, pixels
    std::array<double, 3> colour{};
};

inline double on_screen_half_extent(std::uint8_t cls, double distance, std::size_t image_size) {
    return kBaseHalfExtent * static_cast<double>(image_size) * physical_size(cls) / distance;
}

/// Coverage test at pixel centre (x+0.5, y+0.5).
inline bool covers(const SceneShape& s, std::size_t y, std::size_t x) {
    const double px = static_cast<double>(x) + 0.5 - s.cx, py = static_cast<double>(y) + 0.5 - s.cy;
    const double r = s.half_extent;
    switch (s.kind) {
        case ShapeKind::square: return std::abs(px) <= r && std::abs(py) <= r;
        case ShapeKind::disk: return px * px + py * py <= r * r;
        case ShapeKind::triangle: return py >= -r && py <= r && std::abs(px) <= (py + r) / 2;
        case ShapeKind::bar: return std::abs(px) <= r && std::abs(py) <= r / 3;
    }
    return false;
}

inline std::size_t rasterized_area(const SceneShape& s, std::size_t image_size) {
    std::size_t n = 0;
    for (std::size_t y = 0; y < image_size; ++y)
        for (std::size_t x = 0; x < image_size; ++x) n += covers(s, y, x);
    return n;
}

struct Scene {
    Sample sample;
    std::vector<SceneShape> shapes;
    std::vector<std::size_t> visible_area;  // per shape, after occlusion
    std::vector<double> mean_depth;         // per shape, over its visible pixels
};

/// Paints shapes far to near over a textured background. Labels hold class
/// ids, depth holds d/10 on shapes and 1.0 on the background.
inline Scene render_scene(std::vector<SceneShape> shapes, std::size_t size, Rng& rng) {
    std::stable_sort(shapes.begin(), shapes.end(),
                     [](const SceneShape& a, const SceneShape& b) { return a.distance > b.distance; });
    const std::size_t hw = size * size;
    std::vector<float> rgb(3 * hw), depth(hw, 1.0f);
    LabelMap labels(1, size, size, 0);
    std::vector<int> owner(hw, -1);

    const double bg = rng.uniform(0.35, 0.6), fx = rng.uniform(0.05, 0.3), fy = rng.uniform(0.05, 0.3);
    const double phase = rng.uniform(0.0, 6.283185307179586);
    for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
            const double t = bg + 0.12 * std::sin(fx * static_cast<double>(x) + fy * static_cast<double>(y) + phase);
            for (std::size_t c = 0; c < 3; ++c)
                rgb[c * hw + y * size + x] = static_cast<float>(std::clamp(t + rng.uniform(-0.05, 0.05), 0.0, 1.0));
        }

    for (std::size_t i = 0; i < shapes.size(); ++i) {
        const auto& s = shapes[i];
        for (std::size_t y = 0; y < size; ++y)
            for (std::size_t x = 0; x < size; ++x) {
                if (!covers(s, y, x)) continue;
                const std::size_t p = y * size + x;
                owner[p] = static_cast<int>(i);
                labels.ids[p] = s.cls;
                depth[p] = static_cast<float>(s.distance / kFarthestDistance);
                for (std::size_t c = 0; c < 3; ++c)
                    rgb[c * hw + p] = static_cast<float>(std::clamp(s.colour[c] + rng.uniform(-0.04, 0.04), 0.0, 1.0));
            }
    }

    Scene scene;
    scene.visible_area.assign(shapes.size(), 0);
    scene.mean_depth.assign(shapes.size(), 0.0);
    for (std::size_t p = 0; p < hw; ++p)
        if (owner[p] >= 0) {
            scene.visible_area[owner[p]] += 1;
            scene.mean_depth[owner[p]] += depth[p];
        }
    for (std::size_t i = 0; i < shapes.size(); ++i)
        if (scene.visible_area[i]) scene.mean_depth[i] /= static_cast<double>(scene.visible_area[i]);
    scene.sample.rgb = Tensor<float>({3, size, size}, std::move(rgb));
    scene.sample.depth = Tensor<float>({1, size, size}, std::move(depth));
    scene.sample.labels = std::move(labels);
    scene.shapes = std::move(shapes);
    return scene;
}

/// True when, within every class, a smaller visible area always means a
/// strictly larger mean depth, and every shape keeps half its footprint.
inline bool scale_depth_consistent(const Scene& scene, std::size_t size) {
    const auto& s = scene.shapes;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const std::size_t full = rasterized_area(s[i], size);
        if (full == 0 || 2 * scene.visible_area[i] < full) return false;
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (i == j || s[i].cls != s[j].cls) continue;
            if (scene.visible_area[i] == scene.visible_area[j]) return false;
            if (scene.visible_area[i] < scene.visible_area[j] && !(scene.mean_depth[i] > scene.mean_depth[j]))
                return false;
        }
    }
    return true;
}

struct SynthParams {
    std::size_t count = 8;
    std::size_t image_size = 96;
    std::size_t num_classes = 5;
    std::uint64_t seed = 0;
    double val_fraction = 0.25;

    void validate() const {
        if (count < 1) throw ValueError("synthetic count must be >= 1");
        if (image_size < 32) throw ValueError("synthetic image size must be >= 32");
        if (num_classes < 2 || num_classes > 255) throw ValueError("synthetic class count must be in [2,255]");
        if (!(val_fraction >= 0 && val_fraction < 1)) throw ValueError("val_fraction must be in [0,1)");
    }
};

/// Draws shapes until the scene satisfies the scale/depth ordering; the
/// shape count shrinks towards 3 if a layout keeps failing.
inline Scene generate_scene(const SynthParams& p, std::size_t index) {
    p.validate();
    Rng rng(derive_seed(p.seed, "synthetic.scene", index));
    const auto size = static_cast<double>(p.image_size);
    std::size_t shape_count = static_cast<std::size_t>(rng.between(3, 8));
    for (std::size_t attempt = 0;; ++attempt) {
        if (attempt > 0 && attempt % 64 == 0) {
            if (shape_count > 3) {
                --shape_count;
            } else if (attempt > 4096) {
                throw NumericError("synthetic scene " + std::to_string(index) + " could not be laid out");
            }
        }
        std::vector<SceneShape> shapes(shape_count);
        for (auto& s : shapes) {
            s.cls = static_cast<std::uint8_t>(rng.between(1, static_cast<long long>(p.num_classes) - 1));
            s.kind = shape_kind(s.cls);
            s.distance = far_member(s.cls) ? rng.uniform(kBandSplit, kFarthestDistance)
                                           : rng.uniform(kNearestDistance, kBandSplit);
            s.half_extent = on_screen_half_extent(s.cls, s.distance, p.image_size);
            const double r = std::min(s.half_extent, size / 2);
            s.cx = rng.uniform(r, size - r);
            s.cy = rng.uniform(r, size - r);
            const auto base = base_colour(s.cls);
            for (std::size_t c = 0; c < 3; ++c) s.colour[c] = std::clamp(base[c] + rng.uniform(-0.08, 0.08), 0.0, 1.0);
        }
        Scene scene = render_scene(std::move(shapes), p.image_size, rng);
        if (scale_depth_consistent(scene, p.image_size)) {
            scene.sample.label_space = "synthetic";
            return scene;
        }
    }
}

inline std::size_t validation_count(const SynthParams& p) {
    const auto n = static_cast<std::size_t>(std::llround(p.val_fraction * static_cast<double>(p.count)));
    return std::min(n, p.count - 1);
}

/// Writes rgb/, depth/, label/ triplets and manifest.tsv under `out_dir`.
/// The last val_fraction of the scenes form the "val" split. Returns the
/// manifest path.
inline std::string gen_synthetic(const SynthParams& p, const std::string& out_dir) {
    namespace fs = std::filesystem;
    p.validate();
    const fs::path root(out_dir);
    std::error_code ec;
    for (const char* sub : {"rgb", "depth", "label"}) {
        fs::create_directories(root / sub, ec);
        if (ec) throw IoError("cannot create directory " + (root / sub).string() + ": " + ec.message());
    }
    const std::size_t n_val = validation_count(p);
    std::vector<ManifestEntry> rel;
    for (std::size_t i = 0; i < p.count; ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "%06zu.png", i);
        const ManifestEntry e{std::string("rgb/") + name, std::string("depth/") + name, std::string("label/") + name,
                              i >= p.count - n_val ? "val" : "train"};
        const Scene scene = generate_scene(p, i);
        save_sample(scene.sample, (root / e.rgb).string(), (root / e.depth).string(), (root / e.label).string());
        rel.push_back(e);
    }
    const std::string manifest = (root / "manifest.tsv").string();
    write_manifest(manifest, rel);
    return manifest;
}

}  // namespace segnet::data
