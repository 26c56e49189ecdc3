#pragma once

#include <algorithm>
#include <cmath>

#include "segnet/data/sample.hpp"
#include "segnet/nn/resample.hpp"
#include "segnet/rng.hpp"

namespace segnet::data {

struct AugmentParams {
    double scale_min = 0.5;
    double scale_max = 2.0;
    long long crop = 720;
    double hflip_prob = 0.5;
    bool jitter = true;
    double jitter_min = 0.8;
    double jitter_max = 1.2;
    bool rescale_depth = false;  // divide depth by the scale factor

    void validate() const {
        if (crop <= 0) throw ValueError("crop must be positive, got " + std::to_string(crop));
        if (!(scale_min > 0 && scale_min <= scale_max)) throw ValueError("scale range must satisfy 0 < min <= max");
        if (!(hflip_prob >= 0 && hflip_prob <= 1)) throw ValueError("hflip_prob must be in [0,1]");
        if (!(jitter_min > 0 && jitter_min <= jitter_max)) throw ValueError("jitter range must satisfy 0 < min <= max");
    }
};

/// Bilinear resize of planar [C,H,W] data (either direction).
inline Tensor<float> resize_planes(const Tensor<float>& x, std::size_t out_h, std::size_t out_w) {
    if (x.rank() != 3) throw ShapeError("resize_planes: expected [C,H,W]");
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (out_h == h && out_w == w) return x.clone();
    const auto ty = nn::bilinear_taps(h, out_h), tx = nn::bilinear_taps(w, out_w);
    std::vector<float> out(c * out_h * out_w);
    const auto v = x.data();
    for (std::size_t ch = 0; ch < c; ++ch) {
        const float* src = v.data() + ch * h * w;
        float* dst = out.data() + ch * out_h * out_w;
        for (std::size_t y = 0; y < out_h; ++y) {
            const auto& a = ty[y];
            for (std::size_t xx = 0; xx < out_w; ++xx) {
                const auto& b = tx[xx];
                const double top = b.w0 * src[a.i0 * w + b.i0] + b.w1 * src[a.i0 * w + b.i1];
                const double bot = b.w0 * src[a.i1 * w + b.i0] + b.w1 * src[a.i1 * w + b.i1];
                dst[y * out_w + xx] = static_cast<float>(a.w0 * top + a.w1 * bot);
            }
        }
    }
    return Tensor<float>({c, out_h, out_w}, std::move(out));
}

inline std::size_t nearest_source(std::size_t d, std::size_t in, std::size_t out) {
    const auto s = static_cast<std::size_t>(std::floor((static_cast<double>(d) + 0.5) * in / out));
    return std::min(s, in - 1);
}

inline LabelMap resize_labels(const LabelMap& l, std::size_t out_h, std::size_t out_w) {
    LabelMap out(l.n, out_h, out_w);
    for (std::size_t b = 0; b < l.n; ++b)
        for (std::size_t y = 0; y < out_h; ++y) {
            const std::size_t sy = nearest_source(y, l.h, out_h);
            for (std::size_t x = 0; x < out_w; ++x) out(b, y, x) = l(b, sy, nearest_source(x, l.w, out_w));
        }
    return out;
}

inline Sample resize_sample(const Sample& s, std::size_t out_h, std::size_t out_w) {
    Sample r;
    r.rgb = resize_planes(s.rgb, out_h, out_w);
    r.depth = resize_planes(s.depth, out_h, out_w);
    r.labels = resize_labels(s.labels, out_h, out_w);
    r.label_space = s.label_space;
    return r;
}

/// Window [y0,y0+h) x [x0,x0+w); cells outside the sample read 0 (images)
/// or the ignore id (labels).
inline Sample crop_sample(const Sample& s, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) {
    const std::size_t H = s.height(), W = s.width();
    auto crop_planes = [&](const Tensor<float>& t) {
        const std::size_t c = t.dim(0);
        std::vector<float> out(c * h * w, 0.0f);
        const auto v = t.data();
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t y = 0; y < h && y0 + y < H; ++y)
                for (std::size_t x = 0; x < w && x0 + x < W; ++x)
                    out[(ch * h + y) * w + x] = v[(ch * H + y0 + y) * W + x0 + x];
        return Tensor<float>({c, h, w}, std::move(out));
    };
    Sample r;
    r.rgb = crop_planes(s.rgb);
    r.depth = crop_planes(s.depth);
    r.labels = LabelMap(1, h, w, kIgnoreId);
    for (std::size_t y = 0; y < h && y0 + y < H; ++y)
        for (std::size_t x = 0; x < w && x0 + x < W; ++x) r.labels(0, y, x) = s.labels(0, y0 + y, x0 + x);
    r.label_space = s.label_space;
    return r;
}

inline Sample hflip(const Sample& s) {
    const std::size_t H = s.height(), W = s.width();
    auto flip_planes = [&](const Tensor<float>& t) {
        std::vector<float> out(t.numel());
        const auto v = t.data();
        for (std::size_t row = 0; row < t.dim(0) * H; ++row)
            for (std::size_t x = 0; x < W; ++x) out[row * W + x] = v[row * W + (W - 1 - x)];
        return Tensor<float>(t.shape(), std::move(out));
    };
    Sample r;
    r.rgb = flip_planes(s.rgb);
    r.depth = flip_planes(s.depth);
    r.labels = s.labels;
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) r.labels(0, y, x) = s.labels(0, y, W - 1 - x);
    r.label_space = s.label_space;
    return r;
}

/// Brightness, contrast and saturation scaling of an [3,H,W] image, clamped to [0,1].
inline Tensor<float> jitter_rgb(const Tensor<float>& rgb, double brightness, double contrast, double saturation) {
    const std::size_t hw = rgb.dim(1) * rgb.dim(2);
    std::vector<double> px(rgb.values().begin(), rgb.values().end());
    for (double& v : px) v *= brightness;
    auto gray = [&](std::size_t i) { return 0.299 * px[i] + 0.587 * px[hw + i] + 0.114 * px[2 * hw + i]; };
    double mean = 0;
    for (std::size_t i = 0; i < hw; ++i) mean += gray(i);
    mean /= static_cast<double>(hw);
    for (double& v : px) v = (v - mean) * contrast + mean;
    for (std::size_t i = 0; i < hw; ++i) {
        const double g = gray(i);
        for (std::size_t c = 0; c < 3; ++c) px[c * hw + i] = (px[c * hw + i] - g) * saturation + g;
    }
    std::vector<float> out(px.size());
    for (std::size_t i = 0; i < px.size(); ++i) out[i] = static_cast<float>(std::clamp(px[i], 0.0, 1.0));
    return Tensor<float>(rgb.shape(), std::move(out));
}

/// Random scale, crop (padding when short), horizontal flip and RGB-only
/// colour jitter. Draw order: scale, crop offsets, flip, jitter factors.
inline Sample augment(const Sample& input, const AugmentParams& p, Rng& rng) {
    p.validate();
    input.validate();
    const double s = p.scale_min == p.scale_max ? p.scale_min : rng.uniform(p.scale_min, p.scale_max);
    const auto scaled = [&](std::size_t v) {
        return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(static_cast<double>(v) * s)));
    };
    Sample out = resize_sample(input, scaled(input.height()), scaled(input.width()));
    if (p.rescale_depth && s != 1.0) {
        auto d = out.depth.mutable_data();
        for (float& v : d) v = static_cast<float>(std::clamp(static_cast<double>(v) / s, 0.0, 1.0));
    }

    const auto crop = static_cast<std::size_t>(p.crop);
    const std::size_t y0 = rng.below(std::max(out.height(), crop) - crop + 1);
    const std::size_t x0 = rng.below(std::max(out.width(), crop) - crop + 1);
    out = crop_sample(out, y0, x0, crop, crop);

    if (rng.bernoulli(p.hflip_prob)) out = hflip(out);

    if (p.jitter) {
        const double b = rng.uniform(p.jitter_min, p.jitter_max);
        const double c = rng.uniform(p.jitter_min, p.jitter_max);
        const double sat = rng.uniform(p.jitter_min, p.jitter_max);
        out.rgb = jitter_rgb(out.rgb, b, c, sat);
    }
    return out;
}

}  // namespace segnet::data
