#pragma once

// Dilated 2-D convolution.
//
// o[n,co,i,j] = b[co] + sum_{ci,l,m} x_pad[n, ci, i*sh + r*l, j*sw + r*m] * w[co,ci,l,m]
//
// Lowered to im2col + GEMM per batch item; the column matrix of each item is
// kept for the backward pass, where dW = dY * cols^T and dX = col2im(W^T * dY).

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "segnet/tensor.hpp"

namespace segnet::nn {

struct ConvSpec {
    std::size_t in_channels = 1;
    std::size_t out_channels = 1;
    std::size_t kernel_h = 1;
    std::size_t kernel_w = 1;
    std::size_t stride_h = 1;
    std::size_t stride_w = 1;
    std::size_t dilation = 1;
    std::size_t pad_h = 0;
    std::size_t pad_w = 0;
    bool has_bias = false;

    /// Square kernel, padding r*(k-1)/2 so stride 1 preserves extents.
    static ConvSpec same(std::size_t in, std::size_t out, std::size_t k, std::size_t dilation = 1,
                         std::size_t stride = 1, bool bias = false) {
        return {in, out, k, k, stride, stride, dilation, dilation * (k - 1) / 2,
                dilation * (k - 1) / 2, bias};
    }

    /// Footprint k + (k-1)(r-1) of the dilated kernel.
    std::size_t effective_kernel_h() const { return dilation * (kernel_h - 1) + 1; }
    std::size_t effective_kernel_w() const { return dilation * (kernel_w - 1) + 1; }

    Shape weight_shape() const { return {out_channels, in_channels, kernel_h, kernel_w}; }

    void validate() const {
        if (in_channels == 0 || out_channels == 0) throw ValueError("conv: channel counts must be positive");
        if (kernel_h == 0 || kernel_w == 0 || kernel_h % 2 == 0 || kernel_w % 2 == 0)
            throw ValueError("conv: kernel extents must be odd and positive");
        if (stride_h == 0 || stride_w == 0) throw ValueError("conv: stride must be >= 1");
        if (dilation == 0) throw ValueError("conv: dilation rate must be >= 1");
    }
};

/// Output extent along one axis; throws when it would be < 1.
inline std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                                   std::size_t dilation, std::size_t pad) {
    const long long span = static_cast<long long>(dilation * (kernel - 1) + 1);
    const long long room = static_cast<long long>(in + 2 * pad) - span;
    if (room < 0)
        throw ShapeError("conv: kernel footprint " + std::to_string(span) + " exceeds padded extent " +
                         std::to_string(in + 2 * pad));
    return static_cast<std::size_t>(room) / stride + 1;
}

namespace detail {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ConvGeometry {
    std::size_t ci, h, w, co, ho, wo;
    ConvSpec spec;
    std::size_t rows() const { return ci * spec.kernel_h * spec.kernel_w; }
    std::size_t cols() const { return ho * wo; }
    bool is_pointwise() const {
        return spec.kernel_h == 1 && spec.kernel_w == 1 && spec.stride_h == 1 && spec.stride_w == 1 &&
               spec.pad_h == 0 && spec.pad_w == 0;
    }
};

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
    const auto& s = g.spec;
    const long long r = static_cast<long long>(s.dilation);
    for (std::size_t c = 0; c < g.ci; ++c)
        for (std::size_t l = 0; l < s.kernel_h; ++l)
            for (std::size_t m = 0; m < s.kernel_w; ++m) {
                T* row = cols + ((c * s.kernel_h + l) * s.kernel_w + m) * g.cols();
                const T* plane = x + c * g.h * g.w;
                for (std::size_t i = 0; i < g.ho; ++i) {
                    const long long y = static_cast<long long>(i * s.stride_h) - static_cast<long long>(s.pad_h) +
                                        r * static_cast<long long>(l);
                    T* out = row + i * g.wo;
                    if (y < 0 || y >= static_cast<long long>(g.h)) {
                        std::fill(out, out + g.wo, T(0));
                        continue;
                    }
                    const T* src = plane + y * g.w;
                    for (std::size_t j = 0; j < g.wo; ++j) {
                        const long long xx = static_cast<long long>(j * s.stride_w) -
                                             static_cast<long long>(s.pad_w) + r * static_cast<long long>(m);
                        out[j] = (xx < 0 || xx >= static_cast<long long>(g.w)) ? T(0) : src[xx];
                    }
                }
            }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeometry& g, T* dx) {
    const auto& s = g.spec;
    const long long r = static_cast<long long>(s.dilation);
    for (std::size_t c = 0; c < g.ci; ++c)
        for (std::size_t l = 0; l < s.kernel_h; ++l)
            for (std::size_t m = 0; m < s.kernel_w; ++m) {
                const T* row = cols + ((c * s.kernel_h + l) * s.kernel_w + m) * g.cols();
                T* plane = dx + c * g.h * g.w;
                for (std::size_t i = 0; i < g.ho; ++i) {
                    const long long y = static_cast<long long>(i * s.stride_h) - static_cast<long long>(s.pad_h) +
                                        r * static_cast<long long>(l);
                    if (y < 0 || y >= static_cast<long long>(g.h)) continue;
                    const T* in = row + i * g.wo;
                    T* dst = plane + y * g.w;
                    for (std::size_t j = 0; j < g.wo; ++j) {
                        const long long xx = static_cast<long long>(j * s.stride_w) -
                                             static_cast<long long>(s.pad_w) + r * static_cast<long long>(m);
                        if (xx >= 0 && xx < static_cast<long long>(g.w)) dst[xx] += in[j];
                    }
                }
            }
}

}  // namespace detail

/// Dilated convolution of a [N,Ci,H,W] input with [Co,Ci,kh,kw] weights.
/// `bias` may be an undefined tensor when spec.has_bias is false.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const ConvSpec& spec, const Tensor<T>& weights,
                 const Tensor<T>& bias = {}) {
    spec.validate();
    if (input.rank() != 4) throw ShapeError("conv2d: input must be rank 4, got " + to_string(input.shape()));
    if (input.dim(1) != spec.in_channels)
        throw ShapeError("conv2d: input has " + std::to_string(input.dim(1)) + " channels, spec expects " +
                         std::to_string(spec.in_channels));
    if (weights.shape() != spec.weight_shape())
        throw ShapeError("conv2d: weight shape " + to_string(weights.shape()) + " does not match spec " +
                         to_string(spec.weight_shape()));
    if (spec.has_bias != bias.defined())
        throw ShapeError("conv2d: bias presence does not match spec");
    if (bias.defined() && bias.shape() != Shape{spec.out_channels})
        throw ShapeError("conv2d: bias shape " + to_string(bias.shape()) + " expected [" +
                         std::to_string(spec.out_channels) + "]");

    const std::size_t n = input.dim(0);
    detail::ConvGeometry g{spec.in_channels, input.dim(2), input.dim(3), spec.out_channels,
                           conv_out_extent(input.dim(2), spec.kernel_h, spec.stride_h, spec.dilation, spec.pad_h),
                           conv_out_extent(input.dim(3), spec.kernel_w, spec.stride_w, spec.dilation, spec.pad_w),
                           spec};
    const std::size_t R = g.rows(), P = g.cols();
    using Mat = detail::RowMatrix<T>;
    using CMap = Eigen::Map<const Mat>;
    using MMap = Eigen::Map<Mat>;

    std::vector<T> out_values(n * g.co * P);
    const bool pointwise = g.is_pointwise();
    std::vector<T> cols(pointwise ? 0 : n * R * P);
    const CMap W(weights.data().data(), g.co, R);
    for (std::size_t b = 0; b < n; ++b) {
        const T* x = input.data().data() + b * g.ci * g.h * g.w;
        const T* c = x;
        if (!pointwise) {
            detail::im2col(x, g, cols.data() + b * R * P);
            c = cols.data() + b * R * P;
        }
        MMap Y(out_values.data() + b * g.co * P, g.co, P);
        Y.noalias() = W * CMap(c, R, P);
        if (bias.defined()) {
            auto bv = bias.data();
            for (std::size_t o = 0; o < g.co; ++o) Y.row(o).array() += bv[o];
        }
    }
    Tensor<T> out({n, g.co, g.ho, g.wo}, std::move(out_values));
    check_finite(out, "conv2d");

    if (Tape<T>* tape = recording_tape<T>({&input, &weights, &bias})) {
        auto fn = [g, n, input, weights, cols = std::move(cols)](BackwardContext<T>& ctx) {
            const std::size_t R = g.rows(), P = g.cols();
            const bool pointwise = g.is_pointwise();
            const T* dy = ctx.grad_output.data();
            auto dx = ctx.grad_input(0);
            auto dw = ctx.grad_input(1);
            auto db = ctx.needs(2) ? ctx.grad_input(2) : std::span<T>{};
            const CMap W(weights.data().data(), g.co, R);
            std::vector<T> dcols(dx.empty() || pointwise ? 0 : R * P);
            for (std::size_t b = 0; b < n; ++b) {
                const CMap DY(dy + b * g.co * P, g.co, P);
                const T* c = pointwise ? input.data().data() + b * g.ci * g.h * g.w : cols.data() + b * R * P;
                if (!dw.empty()) {
                    MMap DW(dw.data(), g.co, R);
                    DW.noalias() += DY * CMap(c, R, P).transpose();
                }
                if (!db.empty())
                    for (std::size_t o = 0; o < g.co; ++o) db[o] += DY.row(o).sum();
                if (!dx.empty()) {
                    if (pointwise) {
                        MMap DX(dx.data() + b * g.ci * g.h * g.w, R, P);
                        DX.noalias() += W.transpose() * DY;
                    } else {
                        MMap DC(dcols.data(), R, P);
                        DC.noalias() = W.transpose() * DY;
                        detail::col2im_add(dcols.data(), g, dx.data() + b * g.ci * g.h * g.w);
                    }
                }
            }
        };
        tape->record("conv2d", {&input, &weights, &bias}, out, std::move(fn));
    }
    return out;
}

/// Copies `kernel` [Co,Ci,k,k] into a [Co,Ci,k',k'] kernel with r-1 zeros
/// between neighbouring taps, k' = k + (k-1)(r-1).
template <typename T>
Tensor<T> zero_insert_kernel(const Tensor<T>& kernel, std::size_t rate) {
    const std::size_t co = kernel.dim(0), ci = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
    const std::size_t eh = rate * (kh - 1) + 1, ew = rate * (kw - 1) + 1;
    std::vector<T> v(co * ci * eh * ew, T(0));
    for (std::size_t o = 0; o < co; ++o)
        for (std::size_t c = 0; c < ci; ++c)
            for (std::size_t l = 0; l < kh; ++l)
                for (std::size_t m = 0; m < kw; ++m)
                    v[((o * ci + c) * eh + l * rate) * ew + m * rate] = kernel.at(o, c, l, m);
    return Tensor<T>({co, ci, eh, ew}, std::move(v));
}

}  // namespace segnet::nn
