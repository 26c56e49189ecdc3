#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "segnet/labels.hpp"
#include "segnet/tensor.hpp"

namespace segnet::nn {

struct LossStats {
    std::size_t valid_pixels = 0;
    bool all_ignored() const { return valid_pixels == 0; }
};

/// Mean over non-ignored pixels of -log softmax(logits)[label].
/// Pixels labelled `ignore_id` contribute neither loss nor gradient; when
/// every pixel is ignored the loss is 0 and `stats->all_ignored()` is set.
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, const LabelMap& labels, std::uint8_t ignore_id = kIgnoreId,
                                LossStats* stats = nullptr) {
    if (logits.rank() != 4) throw ShapeError("softmax_cross_entropy: logits must be rank 4");
    const std::size_t n = logits.dim(0), k = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
    if (labels.n != n || labels.h != h || labels.w != w)
        throw ShapeError("softmax_cross_entropy: label extents do not match logits " + to_string(logits.shape()));
    const std::size_t plane = h * w;
    auto x = logits.data();

    std::vector<T> prob(logits.numel(), T(0));
    std::size_t valid = 0;
    using A = accum_t<T>;
    A total = 0;
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t p = 0; p < plane; ++p) {
            const std::uint8_t label = labels.ids[b * plane + p];
            if (label == ignore_id) continue;
            if (label >= k)
                throw ValueError("softmax_cross_entropy: label " + std::to_string(label) + " outside [0," +
                                 std::to_string(k) + ")");
            const T* col = x.data() + b * k * plane + p;
            T mx = col[0];
            for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, col[c * plane]);
            A z = 0;
            for (std::size_t c = 0; c < k; ++c) z += std::exp(static_cast<A>(col[c * plane] - mx));
            const A log_z = std::log(z) + static_cast<A>(mx);
            total += log_z - static_cast<A>(col[label * plane]);
            for (std::size_t c = 0; c < k; ++c)
                prob[b * k * plane + c * plane + p] = static_cast<T>(std::exp(static_cast<A>(col[c * plane]) - log_z));
            ++valid;
        }
    if (stats) stats->valid_pixels = valid;
    const T loss = valid ? static_cast<T>(total / static_cast<A>(valid)) : T(0);
    Tensor<T> out = Tensor<T>::scalar(loss);
    check_finite(out, "softmax_cross_entropy");

    if (valid == 0) return out;
    if (Tape<T>* tape = recording_tape<T>({&logits})) {
        tape->record("softmax_cross_entropy", {&logits}, out,
                     [n, k, plane, valid, ignore_id, labels, prob = std::move(prob)](BackwardContext<T>& ctx) {
                         auto g = ctx.grad_input(0);
                         const T s = ctx.grad_output[0] / static_cast<T>(valid);
                         for (std::size_t b = 0; b < n; ++b)
                             for (std::size_t p = 0; p < plane; ++p) {
                                 const std::uint8_t label = labels.ids[b * plane + p];
                                 if (label == ignore_id) continue;
                                 for (std::size_t c = 0; c < k; ++c) {
                                     const std::size_t i = b * k * plane + c * plane + p;
                                     g[i] += s * (prob[i] - (c == label ? T(1) : T(0)));
                                 }
                             }
                     });
    }
    return out;
}

/// Class with the largest logit per pixel; ties go to the lowest class id.
template <typename T>
LabelMap argmax_channels(const Tensor<T>& logits) {
    if (logits.rank() != 4) throw ShapeError("argmax_channels: logits must be rank 4");
    const std::size_t n = logits.dim(0), k = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
    if (k > kIgnoreId) throw ValueError("argmax_channels: too many classes for 8-bit labels");
    const std::size_t plane = h * w;
    LabelMap out(n, h, w);
    auto x = logits.data();
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t p = 0; p < plane; ++p) {
            const T* col = x.data() + b * k * plane + p;
            std::size_t best = 0;
            for (std::size_t c = 1; c < k; ++c)
                if (col[c * plane] > col[best * plane]) best = c;
            out.ids[b * plane + p] = static_cast<std::uint8_t>(best);
        }
    return out;
}

}  // namespace segnet::nn
