#pragma once

// Central-difference gradient checking.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "segnet/nn/branch_trace.hpp"
#include "segnet/rng.hpp"
#include "segnet/tensor.hpp"

namespace segnet {

struct GradCheckResult {
    double max_rel_error = 0;
    std::size_t worst_index = 0;
    double analytic = 0;  // at worst_index
    double numeric = 0;
    std::size_t checked = 0;
    std::size_t skipped = 0;  // perturbation crossed a ReLU or max-pool boundary
};

/// Compares the tape gradient of scalar `f` at `x` against the central
/// difference of `fr` at `xr`, which must hold the same values, possibly in a
/// wider type: (fr(xr+eps*e) - fr(xr-eps*e)) / (2*eps), element by element.
/// Relative error is |a - n| / max(|a|, |n|, 1e-8).
///
/// `xr` is perturbed in place, so `fr` may capture it (e.g. a model parameter)
/// instead of reading its argument. When `max_elements` is non-zero a seeded
/// random subset of that many elements is checked.
///
/// With `skip_kinks`, an element whose two perturbed evaluations take
/// different ReLU or max-pool branches is not a differentiable point at this
/// eps; it is counted in `skipped` and, in subset mode, replaced by the next
/// candidate.
template <typename T, typename R>
GradCheckResult grad_check_reference(const std::function<Tensor<T>(const Tensor<T>&)>& f, Tensor<T> x,
                                     const std::function<Tensor<R>(const Tensor<R>&)>& fr, Tensor<R> xr,
                                     double eps, std::size_t max_elements = 0, std::uint64_t subset_seed = 0,
                                     bool skip_kinks = false) {
    if (!(eps > 0)) throw ValueError("grad_check: eps must be positive");
    if (x.shape() != xr.shape()) throw ShapeError("grad_check: reference tensor has a different shape");
    for (std::size_t i = 0; i < x.numel(); ++i)
        if (static_cast<R>(x.data()[i]) != xr.data()[i])
            throw ValueError("grad_check: reference tensor holds different values");
    const bool was_tracked = x.requires_grad();
    x.set_requires_grad(true);
    x.drop_grad();
    {
        GradientTape<T> tape;
        Tensor<T> y = f(x);
        if (y.numel() != 1) throw ValueError("grad_check: f must return a scalar");
        tape.backward(y);
    }
    std::vector<T> analytic = x.has_grad() ? std::vector<T>(x.grad().begin(), x.grad().end())
                                           : std::vector<T>(x.numel(), T(0));
    x.drop_grad();
    x.set_requires_grad(was_tracked);

    std::vector<std::size_t> indices(x.numel());
    for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;
    if (max_elements && max_elements < indices.size()) {
        Rng rng(subset_seed);
        rng.shuffle(std::span<std::size_t>(indices));
    }
    const std::size_t want = max_elements ? std::min(max_elements, indices.size()) : indices.size();

    auto eval = [&](std::uint64_t* trace) {
        nn::BranchTrace bt;
        Tensor<R> y = fr(xr);
        if (y.numel() != 1) throw ValueError("grad_check: f must return a scalar");
        const auto v = y.item();
        if (!std::isfinite(static_cast<double>(v))) throw NumericError("grad_check: non-finite function value");
        if (trace) *trace = bt.hash();
        return v;
    };

    GradCheckResult result;
    auto data = xr.mutable_data();
    for (std::size_t i : indices) {
        if (result.checked == want) break;
        const R saved = data[i];
        const R hi = saved + static_cast<R>(eps), lo = saved - static_cast<R>(eps);
        std::uint64_t trace_up = 0, trace_down = 0;
        data[i] = hi;
        const R up = eval(&trace_up);
        data[i] = lo;
        const R down = eval(&trace_down);
        data[i] = saved;
        if (skip_kinks && trace_up != trace_down) {
            ++result.skipped;
            continue;
        }
        const double numeric = static_cast<double>((up - down) / (hi - lo));
        const double a = static_cast<double>(analytic[i]);
        const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
        const double err = std::abs(a - numeric) / denom;
        if (result.checked == 0 || err > result.max_rel_error) {
            result.max_rel_error = err;
            result.worst_index = i;
            result.analytic = a;
            result.numeric = numeric;
        }
        ++result.checked;
    }
    return result;
}

/// Same-precision check: the central difference is taken on `f` itself.
template <typename T>
GradCheckResult grad_check_detailed(const std::function<Tensor<T>(const Tensor<T>&)>& f, Tensor<T> x, double eps,
                                    std::size_t max_elements = 0, std::uint64_t subset_seed = 0,
                                    bool skip_kinks = false) {
    return grad_check_reference<T, T>(f, x, f, x, eps, max_elements, subset_seed, skip_kinks);
}

/// Maximum relative error between analytic and central-difference gradients.
template <typename T>
double grad_check(const std::function<Tensor<T>(const Tensor<T>&)>& f, const Tensor<T>& x, double eps) {
    return grad_check_detailed<T>(f, x, eps).max_rel_error;
}

}  // namespace segnet
