#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "segnet/tensor.hpp"

namespace segnet::nn {

enum class BnMode { train, frozen };

/// Per-channel normalization parameters and statistics.
template <typename T = float>
struct BatchNormState {
    Tensor<T> gamma;
    Tensor<T> beta;
    Tensor<T> running_mean;
    Tensor<T> running_var;
    T momentum = T(0.1);
    T eps = T(1e-5);
    BnMode mode = BnMode::train;

    static BatchNormState make(std::size_t channels, T momentum = T(0.1), T eps = T(1e-5)) {
        BatchNormState s;
        s.gamma = Tensor<T>::constant({channels}, T(1));
        s.beta = Tensor<T>::zeros({channels});
        s.running_mean = Tensor<T>::zeros({channels});
        s.running_var = Tensor<T>::constant({channels}, T(1));
        s.momentum = momentum;
        s.eps = eps;
        return s;
    }

    std::size_t channels() const { return gamma.numel(); }
};

/// Train mode normalizes with the biased batch statistics over N*H*W and
/// updates running <- (1-momentum)*running + momentum*batch. Frozen mode
/// uses the running statistics and never writes them.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& input, BatchNormState<T>& state) {
    if (input.rank() != 4) throw ShapeError("batch_norm: input must be rank 4");
    const std::size_t n = input.dim(0), c = input.dim(1), plane = input.dim(2) * input.dim(3);
    if (c != state.channels())
        throw ShapeError("batch_norm: input has " + std::to_string(c) + " channels, state has " +
                         std::to_string(state.channels()));
    const std::size_t m = n * plane;
    const bool train = state.mode == BnMode::train;
    auto x = input.data();
    auto gamma = state.gamma.data();
    auto beta = state.beta.data();

    std::vector<T> mean(c), inv_std(c);
    for (std::size_t ch = 0; ch < c; ++ch) {
        if (train) {
            using A = accum_t<T>;
            A s = 0;
            for (std::size_t b = 0; b < n; ++b)
                for (std::size_t k = 0; k < plane; ++k) s += x[(b * c + ch) * plane + k];
            const A mu = s / static_cast<A>(m);
            A v = 0;
            for (std::size_t b = 0; b < n; ++b)
                for (std::size_t k = 0; k < plane; ++k) {
                    const A d = x[(b * c + ch) * plane + k] - mu;
                    v += d * d;
                }
            v /= static_cast<A>(m);
            mean[ch] = static_cast<T>(mu);
            inv_std[ch] = static_cast<T>(A(1) / std::sqrt(v + static_cast<A>(state.eps)));
            auto rm = state.running_mean.mutable_data();
            auto rv = state.running_var.mutable_data();
            rm[ch] = (T(1) - state.momentum) * rm[ch] + state.momentum * static_cast<T>(mu);
            rv[ch] = (T(1) - state.momentum) * rv[ch] + state.momentum * static_cast<T>(v);
        } else {
            mean[ch] = state.running_mean.data()[ch];
            inv_std[ch] = T(1) / std::sqrt(state.running_var.data()[ch] + state.eps);
        }
    }

    std::vector<T> xhat(input.numel()), y(input.numel());
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t k = 0; k < plane; ++k) {
                const std::size_t i = (b * c + ch) * plane + k;
                xhat[i] = (x[i] - mean[ch]) * inv_std[ch];
                y[i] = gamma[ch] * xhat[i] + beta[ch];
            }
    Tensor<T> out(input.shape(), std::move(y));
    check_finite(out, "batch_norm");

    if (Tape<T>* tape = recording_tape<T>({&input, &state.gamma, &state.beta})) {
        auto fn = [n, c, plane, m, train, gamma = state.gamma, inv_std = std::move(inv_std),
                   xhat = std::move(xhat)](BackwardContext<T>& ctx) {
            const auto& dy = ctx.grad_output;
            auto dx = ctx.grad_input(0);
            auto dgamma = ctx.grad_input(1);
            auto dbeta = ctx.grad_input(2);
            auto g = gamma.data();
            for (std::size_t ch = 0; ch < c; ++ch) {
                accum_t<T> sum_dy = 0, sum_dy_xhat = 0;
                for (std::size_t b = 0; b < n; ++b)
                    for (std::size_t k = 0; k < plane; ++k) {
                        const std::size_t i = (b * c + ch) * plane + k;
                        sum_dy += dy[i];
                        sum_dy_xhat += dy[i] * xhat[i];
                    }
                if (!dgamma.empty()) dgamma[ch] += static_cast<T>(sum_dy_xhat);
                if (!dbeta.empty()) dbeta[ch] += static_cast<T>(sum_dy);
                if (dx.empty()) continue;
                const T scale = g[ch] * inv_std[ch];
                if (train) {
                    // dx = gamma*inv_std/M * (M*dy - sum(dy) - xhat*sum(dy*xhat))
                    const T mean_dy = static_cast<T>(sum_dy / static_cast<accum_t<T>>(m));
                    const T mean_dy_xhat = static_cast<T>(sum_dy_xhat / static_cast<accum_t<T>>(m));
                    for (std::size_t b = 0; b < n; ++b)
                        for (std::size_t k = 0; k < plane; ++k) {
                            const std::size_t i = (b * c + ch) * plane + k;
                            dx[i] += scale * (dy[i] - mean_dy - xhat[i] * mean_dy_xhat);
                        }
                } else {
                    for (std::size_t b = 0; b < n; ++b)
                        for (std::size_t k = 0; k < plane; ++k) {
                            const std::size_t i = (b * c + ch) * plane + k;
                            dx[i] += scale * dy[i];
                        }
                }
            }
        };
        tape->record("batch_norm", {&input, &state.gamma, &state.beta}, out, std::move(fn));
    }
    return out;
}

}  // namespace segnet::nn
