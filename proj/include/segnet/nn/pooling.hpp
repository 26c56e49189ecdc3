#pragma once

#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "segnet/nn/branch_trace.hpp"
#include "segnet/nn/conv.hpp"
#include "segnet/tensor.hpp"

namespace segnet::nn {

template <typename T>
Tensor<T> relu(const Tensor<T>& input) {
    std::vector<T> v(input.data().begin(), input.data().end());
    for (auto& x : v) x = x > T(0) ? x : T(0);
    if (BranchTrace* bt = BranchTrace::active())
        for (std::size_t i = 0; i < v.size(); ++i)
            if (v[i] > T(0)) bt->add(i);
    Tensor<T> out(input.shape(), std::move(v));
    if (Tape<T>* tape = recording_tape<T>({&input})) {
        tape->record("relu", {&input}, out, [out_view = out](BackwardContext<T>& ctx) {
            auto g = ctx.grad_input(0);
            auto y = out_view.data();
            for (std::size_t i = 0; i < g.size(); ++i)
                if (y[i] > T(0)) g[i] += ctx.grad_output[i];
        });
    }
    return out;
}

/// Window maximum; padding cells never win. Gradient goes to the first
/// maximal element of each window in row-major order.
template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& input, std::size_t kernel, std::size_t stride, std::size_t padding) {
    if (input.rank() != 4) throw ShapeError("max_pool2d: input must be rank 4");
    if (kernel == 0 || stride == 0) throw ValueError("max_pool2d: kernel and stride must be positive");
    if (padding > kernel / 2)
        throw ValueError("max_pool2d: padding must not exceed half the window");
    const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    const std::size_t ho = conv_out_extent(h, kernel, stride, 1, padding);
    const std::size_t wo = conv_out_extent(w, kernel, stride, 1, padding);
    std::vector<T> v(n * c * ho * wo);
    std::vector<std::size_t> argmax(v.size());
    auto x = input.data();
    for (std::size_t p = 0; p < n * c; ++p)
        for (std::size_t i = 0; i < ho; ++i)
            for (std::size_t j = 0; j < wo; ++j) {
                T best = -std::numeric_limits<T>::infinity();
                std::size_t best_idx = 0;
                bool found = false;
                for (std::size_t l = 0; l < kernel; ++l) {
                    const long long y = static_cast<long long>(i * stride + l) - static_cast<long long>(padding);
                    if (y < 0 || y >= static_cast<long long>(h)) continue;
                    for (std::size_t m = 0; m < kernel; ++m) {
                        const long long xx =
                            static_cast<long long>(j * stride + m) - static_cast<long long>(padding);
                        if (xx < 0 || xx >= static_cast<long long>(w)) continue;
                        const std::size_t idx = (p * h + static_cast<std::size_t>(y)) * w + static_cast<std::size_t>(xx);
                        if (!found || x[idx] > best) {
                            best = x[idx];
                            best_idx = idx;
                            found = true;
                        }
                    }
                }
                if (!found) throw ValueError("max_pool2d: window lies entirely in padding");
                const std::size_t o = (p * ho + i) * wo + j;
                v[o] = best;
                argmax[o] = best_idx;
            }
    if (BranchTrace* bt = BranchTrace::active())
        for (std::size_t a : argmax) bt->add(a);
    Tensor<T> out({n, c, ho, wo}, std::move(v));
    if (Tape<T>* tape = recording_tape<T>({&input})) {
        tape->record("max_pool2d", {&input}, out, [argmax = std::move(argmax)](BackwardContext<T>& ctx) {
            auto g = ctx.grad_input(0);
            for (std::size_t o = 0; o < argmax.size(); ++o) g[argmax[o]] += ctx.grad_output[o];
        });
    }
    return out;
}

/// Per-channel spatial mean, [N,C,H,W] -> [N,C,1,1].
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input) {
    if (input.rank() != 4) throw ShapeError("global_avg_pool: input must be rank 4");
    const std::size_t nc = input.dim(0) * input.dim(1), plane = input.dim(2) * input.dim(3);
    std::vector<T> v(nc);
    auto x = input.data();
    for (std::size_t p = 0; p < nc; ++p) {
        accum_t<T> s = 0;
        for (std::size_t k = 0; k < plane; ++k) s += x[p * plane + k];
        v[p] = static_cast<T>(s / static_cast<accum_t<T>>(plane));
    }
    Tensor<T> out({input.dim(0), input.dim(1), 1, 1}, std::move(v));
    if (Tape<T>* tape = recording_tape<T>({&input})) {
        tape->record("global_avg_pool", {&input}, out, [nc, plane](BackwardContext<T>& ctx) {
            auto g = ctx.grad_input(0);
            const T inv = T(1) / static_cast<T>(plane);
            for (std::size_t p = 0; p < nc; ++p) {
                const T share = ctx.grad_output[p] * inv;
                for (std::size_t k = 0; k < plane; ++k) g[p * plane + k] += share;
            }
        });
    }
    return out;
}

}  // namespace segnet::nn
