#pragma once

// Architecture hyperparameters and the static layer layout derived from them.
//
// The layout is computed from the config alone, so extents and parameter
// shapes of any configuration (including the full ResNet-101 scale) can be
// inspected without allocating weights. The network builder consumes the
// same layout.

#include <array>
#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "segnet/error.hpp"
#include "segnet/nn/conv.hpp"
#include "segnet/tensor.hpp"

namespace segnet::model {

using segnet::to_string;

enum class FusionMode { sum, concat };

inline std::string to_string(FusionMode m) { return m == FusionMode::sum ? "sum" : "concat"; }

inline FusionMode parse_fusion_mode(const std::string& s) {
    if (s == "sum") return FusionMode::sum;
    if (s == "concat") return FusionMode::concat;
    throw ValueError("unknown fusion mode '" + s + "' (expected sum or concat)");
}

/// One parallel branch of the pyramid head.
struct PyramidBranch {
    std::size_t kernel = 3;
    std::size_t rate = 1;
    bool operator==(const PyramidBranch&) const = default;
};

struct PyramidPreset {
    std::vector<PyramidBranch> branches;
    bool global_context = true;
};

/// "default": 1x1 plus 3x3 at rates 2,4,8,16, with global-average-pooling context.
/// "deeplab-v2": 3x3 at rates 6,12,18,24, summed, no global context.
inline PyramidPreset pyramid_preset(const std::string& name) {
    if (name == "default") return {{{1, 1}, {3, 2}, {3, 4}, {3, 8}, {3, 16}}, true};
    if (name == "deeplab-v2") return {{{3, 6}, {3, 12}, {3, 18}, {3, 24}}, false};
    throw ValueError("unknown pyramid preset '" + name + "' (expected default or deeplab-v2)");
}

/// Branches from a plain rate list: rate 1 denotes the undilated 1x1 level.
inline std::vector<PyramidBranch> pyramid_from_rates(const std::vector<std::size_t>& rates) {
    std::vector<PyramidBranch> out;
    for (std::size_t r : rates) {
        if (r == 0) throw ValueError("pyramid rates must be >= 1");
        out.push_back(r == 1 ? PyramidBranch{1, 1} : PyramidBranch{3, r});
    }
    return out;
}

struct ModelConfig {
    std::size_t output_stride = 8;
    std::array<std::size_t, 4> block_depths{2, 2, 2, 2};
    double width_multiplier = 0.125;
    FusionMode fusion_mode = FusionMode::concat;
    std::size_t fusion_channels = 0;  // 0: 512 scaled by width_multiplier
    std::vector<PyramidBranch> pyramid = pyramid_preset("default").branches;
    bool global_context = true;
    std::size_t num_classes = 19;
    bool rgb_branch = true;
    bool depth_branch = true;
    double bn_momentum = 0.1;
    double bn_eps = 1e-5;

    /// ResNet-101 depths at full width: 2048 top channels, 512 after fusion.
    static ModelConfig paper_scale(std::size_t classes = 19) {
        ModelConfig c;
        c.block_depths = {3, 4, 23, 3};
        c.width_multiplier = 1.0;
        c.num_classes = classes;
        return c;
    }

    /// Desk-scale default: depths [2,2,2,2], width 1/8 (256 top, 64 fused).
    static ModelConfig toy(std::size_t classes) {
        ModelConfig c;
        c.num_classes = classes;
        return c;
    }

    void apply_pyramid_preset(const std::string& name) {
        auto p = pyramid_preset(name);
        pyramid = p.branches;
        global_context = p.global_context;
    }

    std::size_t scaled(std::size_t base) const {
        const auto v = static_cast<long long>(std::llround(static_cast<double>(base) * width_multiplier));
        return v < 1 ? 1 : static_cast<std::size_t>(v);
    }

    std::size_t top_channels() const { return 4 * scaled(512); }
    std::size_t reduced_channels() const { return fusion_channels ? fusion_channels : scaled(512); }
    bool fused() const { return rgb_branch && depth_branch; }

    /// Channels entering the pyramid head.
    std::size_t head_in_channels() const {
        if (!fused()) return top_channels();
        return fusion_mode == FusionMode::concat ? 2 * reduced_channels() : reduced_channels();
    }

    void validate() const {
        if (output_stride != 8 && output_stride != 16 && output_stride != 32)
            throw ValueError("output_stride must be 8, 16 or 32, got " + std::to_string(output_stride));
        for (std::size_t d : block_depths)
            if (d == 0) throw ValueError("block depths must be positive");
        if (!(width_multiplier > 0)) throw ValueError("width_multiplier must be positive");
        if (num_classes == 0 || num_classes > 255) throw ValueError("num_classes must be in [1,255]");
        if (!rgb_branch && !depth_branch) throw ValueError("at least one input branch is required");
        if (pyramid.empty()) throw ValueError("pyramid needs at least one branch");
        for (const auto& b : pyramid)
            if (b.kernel % 2 == 0 || b.rate == 0) throw ValueError("pyramid branches need odd kernels and rate >= 1");
        if (!(bn_momentum > 0 && bn_momentum < 1)) throw ValueError("bn_momentum must be in (0,1)");
        if (!(bn_eps > 0)) throw ValueError("bn_eps must be positive");
    }
};

/// Strides and dilations of res2..res5 for an output stride.
struct StageGeometry {
    std::array<std::size_t, 4> strides;
    std::array<std::size_t, 4> dilations;
};

inline StageGeometry stage_geometry(std::size_t output_stride) {
    switch (output_stride) {
        case 32: return {{1, 2, 2, 2}, {1, 1, 1, 1}};
        case 16: return {{1, 2, 2, 1}, {1, 1, 1, 2}};
        case 8: return {{1, 2, 1, 1}, {1, 1, 2, 4}};
        default: throw ValueError("output_stride must be 8, 16 or 32, got " + std::to_string(output_stride));
    }
}

struct BottleneckLayout {
    nn::ConvSpec conv1, conv2, conv3;
    bool has_projection = false;
    nn::ConvSpec projection;
};

struct BackboneLayout {
    std::array<nn::ConvSpec, 3> stem;
    std::size_t pool_kernel = 3, pool_stride = 2, pool_padding = 1;
    std::array<std::vector<BottleneckLayout>, 4> stages;
    std::size_t out_channels = 0;
};

/// Three 3x3 stem convs (first strided), 3x3/2 max pool, four bottleneck
/// stages. The first block of every stage carries a projection shortcut so
/// that parameter shapes do not depend on the output stride.
inline BackboneLayout backbone_layout(const ModelConfig& cfg, std::size_t in_channels) {
    if (in_channels != 1 && in_channels != 3)
        throw ValueError("backbone input must have 1 or 3 channels, got " + std::to_string(in_channels));
    const auto geo = stage_geometry(cfg.output_stride);
    BackboneLayout L;
    const std::size_t s64 = cfg.scaled(64), s128 = cfg.scaled(128);
    L.stem = {nn::ConvSpec::same(in_channels, s64, 3, 1, 2), nn::ConvSpec::same(s64, s64, 3),
              nn::ConvSpec::same(s64, s128, 3)};
    std::size_t in = s128;
    for (std::size_t s = 0; s < 4; ++s) {
        const std::size_t mid = cfg.scaled(64u << s), out = 4 * mid;
        for (std::size_t b = 0; b < cfg.block_depths[s]; ++b) {
            const std::size_t stride = b == 0 ? geo.strides[s] : 1;
            BottleneckLayout blk;
            blk.conv1 = nn::ConvSpec::same(in, mid, 1);
            blk.conv2 = nn::ConvSpec::same(mid, mid, 3, geo.dilations[s], stride);
            blk.conv3 = nn::ConvSpec::same(mid, out, 1);
            blk.has_projection = b == 0;
            blk.projection = nn::ConvSpec::same(in, out, 1, 1, stride);
            L.stages[s].push_back(blk);
            in = out;
        }
    }
    L.out_channels = in;
    return L;
}

struct HeadLayout {
    std::vector<nn::ConvSpec> branches;
    bool global_context = true;
    nn::ConvSpec gap_conv;
    nn::ConvSpec logits;
};

inline HeadLayout head_layout(const ModelConfig& cfg) {
    HeadLayout H;
    const std::size_t in = cfg.head_in_channels(), width = cfg.reduced_channels();
    for (const auto& b : cfg.pyramid) H.branches.push_back(nn::ConvSpec::same(in, width, b.kernel, b.rate));
    H.global_context = cfg.global_context;
    H.gap_conv = nn::ConvSpec::same(in, width, 1, 1, 1, true);
    H.logits = nn::ConvSpec::same(cfg.global_context ? 2 * width : width, cfg.num_classes, 1, 1, 1, true);
    return H;
}

inline nn::ConvSpec fusion_reduction(const ModelConfig& cfg) {
    return nn::ConvSpec::same(cfg.top_channels(), cfg.reduced_channels(), 1);
}

/// Extents produced by the network for an input of H x W, without computing.
struct ShapeTrace {
    std::size_t padded_h = 0, padded_w = 0;
    Shape top;     // per-branch top feature map
    Shape fused;   // pyramid-head input
    Shape head;    // pyramid sum
    Shape logits;  // full resolution
};

inline std::size_t round_up(std::size_t v, std::size_t m) { return (v + m - 1) / m * m; }

inline ShapeTrace trace_shapes(const ModelConfig& cfg, std::size_t batch, std::size_t h, std::size_t w) {
    cfg.validate();
    ShapeTrace t;
    t.padded_h = round_up(h, cfg.output_stride);
    t.padded_w = round_up(w, cfg.output_stride);
    const auto L = backbone_layout(cfg, cfg.rgb_branch ? 3 : 1);
    std::size_t y = t.padded_h, x = t.padded_w;
    auto step = [&](const nn::ConvSpec& s) {
        y = nn::conv_out_extent(y, s.kernel_h, s.stride_h, s.dilation, s.pad_h);
        x = nn::conv_out_extent(x, s.kernel_w, s.stride_w, s.dilation, s.pad_w);
    };
    for (const auto& s : L.stem) step(s);
    y = nn::conv_out_extent(y, L.pool_kernel, L.pool_stride, 1, L.pool_padding);
    x = nn::conv_out_extent(x, L.pool_kernel, L.pool_stride, 1, L.pool_padding);
    for (const auto& stage : L.stages)
        for (const auto& blk : stage) {
            step(blk.conv1);
            step(blk.conv2);
            step(blk.conv3);
        }
    t.top = {batch, L.out_channels, y, x};
    t.fused = {batch, cfg.head_in_channels(), y, x};
    t.head = {batch, cfg.reduced_channels(), y, x};
    t.logits = {batch, cfg.num_classes, h, w};
    return t;
}

}  // namespace segnet::model
