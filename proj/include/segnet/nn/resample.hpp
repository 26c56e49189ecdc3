#pragma once

// Bilinear resampling (pixel-centre convention) and spatial pad/crop.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "segnet/tensor.hpp"

namespace segnet::nn {

/// Two-tap interpolation weights for one destination coordinate.
struct BilinearTap {
    std::size_t i0 = 0, i1 = 0;
    double w0 = 1, w1 = 0;
};

/// Source taps for each of `out` destination samples:
/// s = (d + 0.5) * in/out - 0.5, clamped to [0, in-1].
inline std::vector<BilinearTap> bilinear_taps(std::size_t in, std::size_t out) {
    std::vector<BilinearTap> taps(out);
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t d = 0; d < out; ++d) {
        double s = (static_cast<double>(d) + 0.5) * ratio - 0.5;
        s = std::clamp(s, 0.0, static_cast<double>(in - 1));
        const auto i0 = static_cast<std::size_t>(std::floor(s));
        const std::size_t i1 = std::min(i0 + 1, in - 1);
        const double frac = s - static_cast<double>(i0);
        taps[d] = {i0, i1, 1.0 - frac, frac};
    }
    return taps;
}

/// Resizes a [N,C,h,w] tensor to [N,C,out_h,out_w]. Upsampling only.
template <typename T>
Tensor<T> bilinear_upsample(const Tensor<T>& input, std::size_t out_h, std::size_t out_w) {
    if (input.rank() != 4) throw ShapeError("bilinear_upsample: input must be rank 4");
    if (out_h == 0 || out_w == 0) throw ShapeError("bilinear_upsample: output extents must be positive");
    const std::size_t nc = input.dim(0) * input.dim(1), h = input.dim(2), w = input.dim(3);
    if (out_h < h || out_w < w)
        throw ShapeError("bilinear_upsample: output " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                         " smaller than input " + std::to_string(h) + "x" + std::to_string(w));
    auto ty = bilinear_taps(h, out_h);
    auto tx = bilinear_taps(w, out_w);
    std::vector<T> v(nc * out_h * out_w);
    auto x = input.data();
    for (std::size_t p = 0; p < nc; ++p) {
        const T* src = x.data() + p * h * w;
        T* dst = v.data() + p * out_h * out_w;
        for (std::size_t i = 0; i < out_h; ++i) {
            const auto& a = ty[i];
            const T* r0 = src + a.i0 * w;
            const T* r1 = src + a.i1 * w;
            for (std::size_t j = 0; j < out_w; ++j) {
                const auto& b = tx[j];
                dst[i * out_w + j] = static_cast<T>(a.w0 * (b.w0 * r0[b.i0] + b.w1 * r0[b.i1]) +
                                                    a.w1 * (b.w0 * r1[b.i0] + b.w1 * r1[b.i1]));
            }
        }
    }
    Tensor<T> out({input.dim(0), input.dim(1), out_h, out_w}, std::move(v));
    if (Tape<T>* tape = recording_tape<T>({&input})) {
        tape->record("bilinear_upsample", {&input}, out,
                     [nc, h, w, out_h, out_w, ty = std::move(ty), tx = std::move(tx)](BackwardContext<T>& ctx) {
                         auto g = ctx.grad_input(0);
                         for (std::size_t p = 0; p < nc; ++p) {
                             T* dst = g.data() + p * h * w;
                             const T* go = ctx.grad_output.data() + p * out_h * out_w;
                             for (std::size_t i = 0; i < out_h; ++i) {
                                 const auto& a = ty[i];
                                 for (std::size_t j = 0; j < out_w; ++j) {
                                     const auto& b = tx[j];
                                     const double gv = go[i * out_w + j];
                                     dst[a.i0 * w + b.i0] += static_cast<T>(gv * a.w0 * b.w0);
                                     dst[a.i0 * w + b.i1] += static_cast<T>(gv * a.w0 * b.w1);
                                     dst[a.i1 * w + b.i0] += static_cast<T>(gv * a.w1 * b.w0);
                                     dst[a.i1 * w + b.i1] += static_cast<T>(gv * a.w1 * b.w1);
                                 }
                             }
                         }
                     });
    }
    return out;
}

/// Mirror index without repeating the edge sample: -1 -> 1, n -> n-2.
inline std::size_t reflect_index(long long i, std::size_t n) {
    if (n == 1) return 0;
    const long long period = 2 * (static_cast<long long>(n) - 1);
    i %= period;
    if (i < 0) i += period;
    if (i >= static_cast<long long>(n)) i = period - i;
    return static_cast<std::size_t>(i);
}

/// Reflection padding on the two trailing axes of a rank-4 tensor.
template <typename T>
Tensor<T> pad_reflect(const Tensor<T>& input, std::size_t top, std::size_t bottom, std::size_t left,
                      std::size_t right) {
    if (input.rank() != 4) throw ShapeError("pad_reflect: input must be rank 4");
    if (top + bottom + left + right == 0) return input;
    const std::size_t nc = input.dim(0) * input.dim(1), h = input.dim(2), w = input.dim(3);
    const std::size_t oh = h + top + bottom, ow = w + left + right;
    std::vector<std::size_t> index(nc * oh * ow);
    for (std::size_t p = 0; p < nc; ++p)
        for (std::size_t i = 0; i < oh; ++i) {
            const std::size_t y = reflect_index(static_cast<long long>(i) - static_cast<long long>(top), h);
            for (std::size_t j = 0; j < ow; ++j) {
                const std::size_t x = reflect_index(static_cast<long long>(j) - static_cast<long long>(left), w);
                index[(p * oh + i) * ow + j] = (p * h + y) * w + x;
            }
        }
    return gather(input, {input.dim(0), input.dim(1), oh, ow}, std::move(index));
}

/// Spatial window [y0, y0+h) x [x0, x0+w) of a rank-4 tensor.
template <typename T>
Tensor<T> crop(const Tensor<T>& input, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) {
    if (input.rank() != 4) throw ShapeError("crop: input must be rank 4");
    const std::size_t ih = input.dim(2), iw = input.dim(3);
    if (h == 0 || w == 0 || y0 + h > ih || x0 + w > iw) throw ShapeError("crop: window outside input");
    if (y0 == 0 && x0 == 0 && h == ih && w == iw) return input;
    const std::size_t nc = input.dim(0) * input.dim(1);
    std::vector<std::size_t> index(nc * h * w);
    for (std::size_t p = 0; p < nc; ++p)
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < w; ++j) index[(p * h + i) * w + j] = (p * ih + y0 + i) * iw + x0 + j;
    return gather(input, {input.dim(0), input.dim(1), h, w}, std::move(index));
}

}  // namespace segnet::nn
