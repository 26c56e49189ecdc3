#pragma once

// Self-check suites run by `segnet verify` and the acceptance binary:
//   gradcheck  analytic vs central-difference gradients (double precision)
//   oracle     dilated conv vs zero-inserted kernels and direct summation,
//              impulse-response support
//   shapes     output-stride geometry and checkpoint compatibility

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <type_traits>
#include <string>
#include <vector>

#include "segnet/grad_check.hpp"
#include "segnet/model/network.hpp"
#include "segnet/nn.hpp"

namespace segnet::verify {

struct Check {
    std::string name;
    bool passed = false;
    std::string detail;
};

struct SuiteOptions {
    std::size_t seeds = 5;
    double grad_tolerance = 1e-6;     // double precision
    double grad_eps = 1e-6;
    double oracle_tolerance = 1e-6;   // absolute
    std::size_t oracle_cases = 200;
    std::size_t direct_cases = 50;
    bool include_large_shapes = true;  // 256x512 forward passes
};

using Reporter = std::function<void(const Check&)>;

namespace detail {

inline std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

using TD = Tensor<double>;

inline TD random_tensor(Shape s, Rng& rng, double bound = 1.0) { return TD::uniform(std::move(s), bound, rng); }

/// Values bounded away from zero, for kinked ops.
inline TD away_from_zero(Shape s, Rng& rng) {
    TD t = random_tensor(std::move(s), rng);
    for (double& v : t.mutable_data()) v = (v < 0 ? -0.1 : 0.1) + v;
    return t;
}

/// Distinct values spaced 0.01 apart in random order, so max pooling has no ties.
inline TD distinct_values(Shape s, Rng& rng) {
    const std::size_t n = numel(s);
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    rng.shuffle(std::span<std::size_t>(perm));
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = 0.01 * static_cast<double>(perm[i]) - 0.005 * static_cast<double>(n);
    return TD(std::move(s), std::move(v));
}

using TL = Tensor<long double>;

template <typename T>
Tensor<T> cast_to(const TD& t) {
    if constexpr (std::is_same_v<T, double>) {
        return t;
    } else {
        std::vector<T> v(t.data().begin(), t.data().end());
        return Tensor<T>(t.shape(), std::move(v));
    }
}

/// One tensor held in the checked precision and in the reference precision.
struct Twin {
    TD d;
    TL l;
    explicit Twin(TD t) : d(std::move(t)), l(cast_to<long double>(d)) {}
    Twin(TD t, TL r) : d(std::move(t)), l(std::move(r)) {}
    template <typename T>
    const Tensor<T>& get() const {
        if constexpr (std::is_same_v<T, double>) return d;
        else return l;
    }
};

template <typename V>
using scalar_of = typename std::decay_t<V>::value_type;

template <typename T, typename M>
std::vector<model::NamedParam<T>> visit_params(const M& m) {
    std::vector<model::NamedParam<T>> out;
    if constexpr (requires { m.parameters(); }) {
        out = m.parameters();
    } else {
        m.visit([&](model::NamedParam<T> p) { out.push_back(std::move(p)); });
    }
    return out;
}

/// A module built in both precisions with bit-identical values.
template <template <typename> class M>
struct TwinModule {
    M<double> d;
    M<long double> l;
    template <typename... A>
    explicit TwinModule(const A&... args) : d(args...), l(args...) {
        auto src = visit_params<double>(d);
        auto dst = visit_params<long double>(l);
        if (src.size() != dst.size()) throw ValueError("twin modules differ in parameter count");
        for (std::size_t i = 0; i < src.size(); ++i) {
            if (src[i].path != dst[i].path) throw ValueError("twin modules differ in parameter order");
            auto out = dst[i].tensor.mutable_data();
            auto in = src[i].tensor.data();
            for (std::size_t k = 0; k < in.size(); ++k) out[k] = static_cast<long double>(in[k]);
        }
    }
    template <typename T>
    M<T>& get() {
        if constexpr (std::is_same_v<T, double>) return d;
        else return l;
    }
    /// Learnable parameters paired by path.
    std::vector<std::pair<std::string, Twin>> learnable() const {
        auto a = visit_params<double>(d);
        auto b = visit_params<long double>(l);
        std::vector<std::pair<std::string, Twin>> out;
        for (std::size_t i = 0; i < a.size(); ++i)
            if (a[i].learnable()) out.emplace_back(a[i].path, Twin(a[i].tensor, b[i].tensor));
        return out;
    }
};

/// Projects an output onto fixed random weights, giving a scalar whose
/// gradient exercises every output element.
struct Projection {
    TD weights;
    TL weights_l;
    template <typename T>
    Tensor<T> operator()(const Tensor<T>& y) {
        if (!weights.defined() || weights.shape() != y.shape()) {
            Rng rng(0x5eed ^ numel(y.shape()));
            weights = random_tensor(y.shape(), rng);
            weights_l = cast_to<long double>(weights);
        }
        if constexpr (std::is_same_v<T, double>) return dot(y, weights);
        else return dot(y, weights_l);
    }
};

struct GradCase {
    std::string name;
    double worst = 0;
    std::size_t checked = 0;
    std::size_t skipped = 0;
    void absorb(const GradCheckResult& r) {
        worst = std::max(worst, r.max_rel_error);
        checked += r.checked;
        skipped += r.skipped;
    }
};

template <typename T>
nn::BatchNormState<T> bn_state(nn::BnMode mode, const Tensor<T>& gamma, const Tensor<T>& beta, const Twin& mean,
                               const Twin& var) {
    auto st = nn::BatchNormState<T>::make(gamma.numel());
    st.mode = mode;
    st.gamma = gamma;
    st.beta = beta;
    st.running_mean = mean.get<T>().clone();
    st.running_var = var.get<T>().clone();
    return st;
}

}  // namespace detail

/// Gradient checks of every differentiable op and the toy model end to end.
/// Analytic gradients are computed in double; the central differences they
/// are compared against are taken in long double on identical values, so the
/// comparison is not limited by double rounding in the difference quotient.
inline std::vector<Check> gradcheck_suite(const SuiteOptions& opt = {}, const Reporter& report = {}) {
    using namespace detail;
    std::vector<Check> out;
    auto finish = [&](GradCase& c) {
        Check ck{"gradcheck " + c.name, c.worst <= opt.grad_tolerance,
                 "max rel error " + fmt("%.3e", c.worst) + " over " + std::to_string(c.checked) + " elements, " +
                     std::to_string(opt.seeds) + " seeds" +
                     (c.skipped ? ", " + std::to_string(c.skipped) + " skipped at kinks" : "")};
        if (report) report(ck);
        out.push_back(ck);
    };
    auto check = [&](GradCase& c, auto&& f, const Twin& x, std::size_t subset = 0, std::uint64_t seed = 0) {
        std::function<TD(const TD&)> fd = [&](const TD& v) { return f(v); };
        std::function<TL(const TL&)> fl = [&](const TL& v) { return f(v); };
        c.absorb(grad_check_reference<double, long double>(fd, x.d, fl, x.l, opt.grad_eps, subset, seed, true));
    };

    for (std::size_t rate : {1, 2, 4, 8, 16}) {
        GradCase c{"conv2d rate " + std::to_string(rate)};
        for (std::size_t s = 0; s < opt.seeds; ++s) {
            Rng rng(derive_seed(s, "grad.conv", rate));
            const auto spec = nn::ConvSpec::same(2, 3, 3, rate, 1, true);
            Twin x(random_tensor({1, 2, 9, 8}, rng)), w(random_tensor(spec.weight_shape(), rng)),
                b(random_tensor({3}, rng));
            Projection p;
            auto f = [&](const auto& vx, const auto& vw, const auto& vb) { return p(nn::conv2d(vx, spec, vw, vb)); };
            check(c, [&](const auto& v) { using T = scalar_of<decltype(v)>; return f(v, w.get<T>(), b.get<T>()); }, x);
            check(c, [&](const auto& v) { using T = scalar_of<decltype(v)>; return f(x.get<T>(), v, b.get<T>()); }, w);
            check(c, [&](const auto& v) { using T = scalar_of<decltype(v)>; return f(x.get<T>(), w.get<T>(), v); }, b);
        }
        finish(c);
    }
    {
        GradCase c{"conv2d strided and pointwise"};
        for (std::size_t s = 0; s < opt.seeds; ++s) {
            Rng rng(derive_seed(s, "grad.conv.misc"));
            const auto strided = nn::ConvSpec::same(2, 3, 3, 2, 2);
            const auto point = nn::ConvSpec::same(3, 2, 1);
            Twin x(random_tensor({2, 2, 9, 10}, rng)), w1(random_tensor(strided.weight_shape(), rng)),
                w2(random_tensor(point.weight_shape(), rng));
            Projection p;
            auto f = [&](const auto& a, const auto& k1, const auto& k2) {
                return p(nn::conv2d(nn::conv2d(a, strided, k1), point, k2));
            };
            check(c, [&](const auto& v) { using T = scalar_of<decltype(v)>; return f(v, w1.get<T>(), w2.get<T>()); }, x);
            check(c, [&](const auto& v) { using T = scalar_of<decltype(v)>; return f(x.get<T>(), v, w2.get<T>()); }, w1);
            check(c, [&](const auto& v) { using T = scalar_of<decltype(v)>; return f(x.get<T>(), w1.get<T>(), v); }, w2);
        }
        finish(c);
    }
    for (auto mode : {nn::BnMode::train, nn::BnMode::frozen}) {
        GradCase c{std::string("batch_norm ") + (mode == nn::BnMode::train ? "train" : "frozen")};
        for (std::size_t s = 0; s < opt.seeds; ++s) {
            Rng rng(derive_seed(s, "grad.bn", static_cast<std::uint64_t>(mode)));
            Twin gamma(random_tensor({3}, rng)), beta(random_tensor({3}, rng));
            TD mean = TD::zeros({3}), var = TD::zeros({3});
            for (double& v : mean.mutable_data()) v = rng.uniform(-0.5, 0.5);
            for (double& v : var.mutable_data()) v = rng.uniform(0.5, 2.0);
            Twin rm(mean), rv(var);
            Twin x(random_tensor({2, 3, 4, 5}, rng));
            Projection p;
            auto f = [&](const auto& vx, const auto& g, const auto& b) {
                using T = scalar_of<decltype(vx)>;
                auto st = bn_state<T>(mode, g, b, rm, rv);
                return p(nn::batch_norm(vx, st));
            };
            check(c, [&](const auto& v) { using T = scalar_of<decltype(v)>; return f(v, gamma.get<T>(), beta.get<T>()); }, x);
            check(c, [&](const auto& v) { using T = scalar_of<decltype(v)>; return f(x.get<T>(), v, beta.get<T>()); }, gamma);
            check(c, [&](const auto& v) { using T = scalar_of<decltype(v)>; return f(x.get<T>(), gamma.get<T>(), v); }, beta);
        }
        finish(c);
    }
    auto unary = [&](const std::string& name, const char* tag, auto make_input, auto op) {
        GradCase c{name};
        for (std::size_t s = 0; s < opt.seeds; ++s) {
            Rng rng(derive_seed(s, tag));
            Projection p;
            check(c, [&](const auto& v) { return p(op(v)); }, Twin(make_input(rng)));
        }
        finish(c);
    };
    unary("relu", "grad.relu", [](Rng& r) { return away_from_zero({2, 3, 4, 4}, r); },
          [](const auto& v) { return nn::relu(v); });
    unary("max_pool2d", "grad.maxpool", [](Rng& r) { return distinct_values({1, 2, 7, 8}, r); },
          [](const auto& v) { return nn::max_pool2d(v, 3, 2, 1); });
    unary("global_avg_pool", "grad.gap", [](Rng& r) { return random_tensor({2, 3, 5, 4}, r); },
          [](const auto& v) { return nn::global_avg_pool(v); });
    unary("bilinear_upsample", "grad.bilinear", [](Rng& r) { return random_tensor({1, 2, 3, 4}, r); },
          [](const auto& v) { return nn::bilinear_upsample(v, 7, 13); });
    unary("reflection pad and crop", "grad.pad", [](Rng& r) { return random_tensor({1, 2, 5, 4}, r); },
          [](const auto& v) { return nn::crop(nn::pad_reflect(v, 1, 3, 2, 0), 1, 2, 5, 4); });
    {
        GradCase c{"softmax_cross_entropy"};
        for (std::size_t s = 0; s < opt.seeds; ++s) {
            Rng rng(derive_seed(s, "grad.loss"));
            LabelMap labels(2, 3, 4);
            for (auto& id : labels.ids) id = rng.bernoulli(0.2) ? kIgnoreId : static_cast<std::uint8_t>(rng.below(4));
            labels.ids[0] = 1;
            check(c, [&](const auto& v) { return nn::softmax_cross_entropy(v, labels); },
                  Twin(random_tensor({2, 4, 3, 4}, rng, 3.0)));
        }
        finish(c);
    }
    for (auto mode : {model::FusionMode::sum, model::FusionMode::concat}) {
        GradCase c{"fusion block " + model::to_string(mode)};
        for (std::size_t s = 0; s < opt.seeds; ++s) {
            auto cfg = model::ModelConfig::toy(3);
            cfg.width_multiplier = 1.0 / 64;  // 32 top channels, 8 fused
            cfg.fusion_mode = mode;
            TwinModule<model::FusionBlock> fb(cfg, static_cast<std::uint64_t>(s));
            Rng rng(derive_seed(s, "grad.fusion"));
            const std::size_t ch = cfg.top_channels();
            Twin a(random_tensor({1, ch, 3, 4}, rng)), b(random_tensor({1, ch, 3, 4}, rng));
            Projection p;
            auto f = [&](const auto& va, const auto& vb) {
                using T = scalar_of<decltype(va)>;
                return p(fb.get<T>().forward(va, vb));
            };
            check(c, [&](const auto& v) { using T = scalar_of<decltype(v)>; return f(v, b.get<T>()); }, a, 24, s);
            check(c, [&](const auto& v) { using T = scalar_of<decltype(v)>; return f(a.get<T>(), v); }, b, 24, s + 1);
            for (const auto& [path, param] : fb.learnable())
                check(c, [&](const auto& v) { using T = scalar_of<decltype(v)>; return f(a.get<T>(), b.get<T>()); },
                      param, 12, s);
        }
        finish(c);
    }
    {
        GradCase c{"pyramid head"};
        for (std::size_t s = 0; s < opt.seeds; ++s) {
            auto cfg = model::ModelConfig::toy(3);
            cfg.width_multiplier = 1.0 / 64;
            cfg.rgb_branch = true;
            cfg.depth_branch = false;
            TwinModule<model::PyramidHead> head(cfg, static_cast<std::uint64_t>(s));
            Rng rng(derive_seed(s, "grad.head"));
            Twin x(random_tensor({1, cfg.head_in_channels(), 5, 6}, rng));
            Projection p;
            auto f = [&](const auto& vx) {
                using T = scalar_of<decltype(vx)>;
                return p(head.get<T>().forward(vx).logits);
            };
            check(c, [&](const auto& v) { return f(v); }, x, 32, s);
            for (const auto& [path, param] : head.learnable())
                check(c, [&](const auto& v) { using T = scalar_of<decltype(v)>; return f(x.get<T>()); }, param, 8, s);
        }
        finish(c);
    }
    {
        GradCase c{"toy RGB-D model end to end"};
        for (std::size_t s = 0; s < opt.seeds; ++s) {
            auto cfg = model::ModelConfig::toy(3);
            TwinModule<model::SegNet> net(cfg, static_cast<std::uint64_t>(s));
            Rng rng(derive_seed(s, "grad.model"));
            Twin rgb(random_tensor({1, 3, 21, 19}, rng)), depth(random_tensor({1, 1, 21, 19}, rng));
            LabelMap labels(1, 21, 19);
            for (auto& id : labels.ids) id = static_cast<std::uint8_t>(rng.below(3));
            auto loss = [&](const auto& r, const auto& d) {
                using T = scalar_of<decltype(r)>;
                return nn::softmax_cross_entropy(net.get<T>().forward(r, d), labels);
            };
            check(c, [&](const auto& v) { using T = scalar_of<decltype(v)>; return loss(v, depth.get<T>()); }, rgb, 12, s);
            check(c, [&](const auto& v) { using T = scalar_of<decltype(v)>; return loss(rgb.get<T>(), v); }, depth, 12, s);
            for (const auto& [path, param] : net.learnable()) {
                const bool probe = path == "rgb.stem.conv1.weight" || path == "depth.res5.1.conv2.weight" ||
                                   path == "rgb.res2.0.proj.weight" || path == "fusion.depth.bn.gamma" ||
                                   path == "head.branch3.conv.weight" || path == "head.gap.conv.bias" ||
                                   path == "head.logits.weight";
                if (probe)
                    check(c, [&](const auto& v) {
                        using T = scalar_of<decltype(v)>;
                        return loss(rgb.get<T>(), depth.get<T>());
                    }, param, 6, s);
            }
        }
        finish(c);
    }
    return out;
}

namespace detail {

/// Direct evaluation of y[o,i,j] = b[o] + sum w[o,c,k,l] x[c, i*s - p + r*k, j*s - p + r*l].
inline TD direct_dilated_conv(const TD& x, const nn::ConvSpec& s, const TD& w) {
    const std::size_t n = x.dim(0), h = x.dim(2), wd = x.dim(3);
    const std::size_t oh = nn::conv_out_extent(h, s.kernel_h, s.stride_h, s.dilation, s.pad_h);
    const std::size_t ow = nn::conv_out_extent(wd, s.kernel_w, s.stride_w, s.dilation, s.pad_w);
    std::vector<double> y(n * s.out_channels * oh * ow, 0.0);
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t o = 0; o < s.out_channels; ++o)
            for (std::size_t i = 0; i < oh; ++i)
                for (std::size_t j = 0; j < ow; ++j) {
                    double acc = 0;
                    for (std::size_t c = 0; c < s.in_channels; ++c)
                        for (std::size_t k = 0; k < s.kernel_h; ++k)
                            for (std::size_t l = 0; l < s.kernel_w; ++l) {
                                const long long yy = static_cast<long long>(i * s.stride_h + s.dilation * k) -
                                                     static_cast<long long>(s.pad_h);
                                const long long xx = static_cast<long long>(j * s.stride_w + s.dilation * l) -
                                                     static_cast<long long>(s.pad_w);
                                if (yy < 0 || xx < 0 || yy >= static_cast<long long>(h) ||
                                    xx >= static_cast<long long>(wd))
                                    continue;
                                acc += w.at(o, c, k, l) * x.at(b, c, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
                            }
                    y[((b * s.out_channels + o) * oh + i) * ow + j] = acc;
                }
    return TD({n, s.out_channels, oh, ow}, std::move(y));
}

inline double max_abs_diff(const TD& a, const TD& b) {
    if (a.shape() != b.shape()) return INFINITY;
    double m = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

inline nn::ConvSpec random_dilated_spec(Rng& rng, std::size_t rate) {
    nn::ConvSpec s;
    s.in_channels = static_cast<std::size_t>(rng.between(1, 3));
    s.out_channels = static_cast<std::size_t>(rng.between(1, 3));
    s.kernel_h = static_cast<std::size_t>(1 + 2 * rng.between(0, 1));
    s.kernel_w = static_cast<std::size_t>(1 + 2 * rng.between(0, 1));
    s.stride_h = s.stride_w = static_cast<std::size_t>(rng.between(1, 2));
    s.dilation = rate;
    s.pad_h = static_cast<std::size_t>(rng.between(0, static_cast<long long>(rate * (s.kernel_h - 1))));
    s.pad_w = static_cast<std::size_t>(rng.between(0, static_cast<long long>(rate * (s.kernel_w - 1))));
    return s;
}

}  // namespace detail

inline std::vector<Check> oracle_suite(const SuiteOptions& opt = {}, const Reporter& report = {}) {
    using namespace detail;
    std::vector<Check> out;
    auto emit = [&](Check c) {
        if (report) report(c);
        out.push_back(std::move(c));
    };
    const std::size_t rates[] = {2, 4, 8, 16};

    {
        double worst = 0;
        for (std::size_t i = 0; i < opt.oracle_cases; ++i) {
            Rng rng(derive_seed(0, "oracle.zero_insert", i));
            const std::size_t rate = rates[i % 4];
            const auto s = random_dilated_spec(rng, rate);
            const std::size_t h = s.effective_kernel_h() + static_cast<std::size_t>(rng.between(0, 6));
            const std::size_t w = s.effective_kernel_w() + static_cast<std::size_t>(rng.between(0, 6));
            TD x = random_tensor({static_cast<std::size_t>(rng.between(1, 2)), s.in_channels, h, w}, rng);
            TD k = random_tensor(s.weight_shape(), rng);
            nn::ConvSpec dense = s;
            dense.kernel_h = s.effective_kernel_h();
            dense.kernel_w = s.effective_kernel_w();
            dense.dilation = 1;
            worst = std::max(worst, max_abs_diff(nn::conv2d(x, s, k), nn::conv2d(x, dense, nn::zero_insert_kernel(k, rate))));
        }
        emit({"oracle dilated conv vs zero-inserted kernel (" + std::to_string(opt.oracle_cases) + " cases)",
              worst <= opt.oracle_tolerance, "max abs diff " + fmt("%.3e", worst)});
    }
    {
        double worst = 0;
        for (std::size_t i = 0; i < opt.direct_cases; ++i) {
            Rng rng(derive_seed(0, "oracle.direct", i));
            const std::size_t rate = i % 5 == 4 ? 1 : rates[i % 4];
            const auto s = random_dilated_spec(rng, rate);
            const std::size_t h = s.effective_kernel_h() + static_cast<std::size_t>(rng.between(0, 5));
            const std::size_t w = s.effective_kernel_w() + static_cast<std::size_t>(rng.between(0, 5));
            TD x = random_tensor({1, s.in_channels, h, w}, rng);
            TD k = random_tensor(s.weight_shape(), rng);
            worst = std::max(worst, max_abs_diff(nn::conv2d(x, s, k), direct_dilated_conv(x, s, k)));
        }
        emit({"oracle dilated conv vs direct summation (" + std::to_string(opt.direct_cases) + " cases)",
              worst <= opt.oracle_tolerance, "max abs diff " + fmt("%.3e", worst)});
    }
    for (std::size_t rate : rates) {
        const std::size_t n = 4 * rate + 3, centre = n / 2;
        std::vector<double> v(n * n, 0.0);
        v[centre * n + centre] = 1.0;
        TD x({1, 1, n, n}, std::move(v));
        const auto spec = nn::ConvSpec::same(1, 1, 3, rate);
        TD k = TD::constant(spec.weight_shape(), 1.0);
        TD y = nn::conv2d(x, spec, k);
        std::size_t nonzero = 0, y0 = n, y1 = 0, x0 = n, x1 = 0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                if (y.at(0, 0, i, j) != 0) {
                    ++nonzero;
                    y0 = std::min(y0, i), y1 = std::max(y1, i), x0 = std::min(x0, j), x1 = std::max(x1, j);
                }
        const std::size_t extent_h = y1 - y0 + 1, extent_w = x1 - x0 + 1, want = 2 * rate + 1;
        emit({"receptive field 3x3 rate " + std::to_string(rate),
              extent_h == want && extent_w == want && nonzero == 9,
              "support " + std::to_string(extent_h) + "x" + std::to_string(extent_w) + " (expected " +
                  std::to_string(want) + "x" + std::to_string(want) + "), " + std::to_string(nonzero) + " taps"});
    }
    return out;
}

inline std::vector<Check> shapes_suite(const SuiteOptions& opt = {}, const Reporter& report = {}) {
    std::vector<Check> out;
    auto emit = [&](Check c) {
        if (report) report(c);
        out.push_back(std::move(c));
    };
    struct Input {
        std::size_t h, w;
    };
    std::vector<Input> inputs{{96, 96}, {100, 75}};
    if (opt.include_large_shapes) inputs.push_back({256, 512});
    for (bool rgbd : {false, true}) {
        std::vector<std::map<std::string, Shape>> param_shapes;
        for (std::size_t os : {8, 16, 32}) {
            auto cfg = model::ModelConfig::toy(5);
            cfg.output_stride = os;
            cfg.depth_branch = rgbd;
            model::SegNet<float> net(cfg, 1);
            net.set_bn_mode(nn::BnMode::frozen);
            std::map<std::string, Shape> shapes;
            for (const auto& p : net.parameters()) shapes[p.path] = p.tensor.shape();
            param_shapes.push_back(std::move(shapes));
            for (const auto& in : inputs) {
                Rng rng(os * 131 + in.h);
                auto rgb = Tensor<float>::uniform({1, 3, in.h, in.w}, 1.0f, rng);
                Tensor<float> depth = rgbd ? Tensor<float>::uniform({1, 1, in.h, in.w}, 1.0f, rng) : Tensor<float>{};
                const auto o = net.forward_all(rgb, depth);
                const Shape want_top{1, cfg.top_channels(), (in.h + os - 1) / os, (in.w + os - 1) / os};
                const Shape want_logits{1, 5, in.h, in.w};
                const bool ok = o.rgb_top.shape() == want_top && (!rgbd || o.depth_top.shape() == want_top) &&
                                o.logits.shape() == want_logits;
                emit({"shapes toy " + std::string(rgbd ? "rgb-d" : "rgb") + " os=" + std::to_string(os) + " " +
                          std::to_string(in.h) + "x" + std::to_string(in.w),
                      ok, "top " + to_string(o.rgb_top.shape()) + ", logits " + to_string(o.logits.shape())});
            }
        }
        const bool same = param_shapes[0] == param_shapes[1] && param_shapes[1] == param_shapes[2];
        emit({std::string("parameter shapes identical across output strides (toy ") + (rgbd ? "rgb-d)" : "rgb)"), same,
              std::to_string(param_shapes[0].size()) + " tensors"});
    }
    for (bool rgbd : {false, true}) {
        std::vector<std::vector<Shape>> weight_shapes;
        for (std::size_t os : {8, 16, 32}) {
            auto cfg = model::ModelConfig::paper_scale(19);
            cfg.output_stride = os;
            cfg.depth_branch = rgbd;
            const auto t = model::trace_shapes(cfg, 1, 720, 720);
            const std::size_t top = (720 + os - 1) / os;
            const bool ok = t.top == Shape{1, 2048, top, top} && t.logits == Shape{1, 19, 720, 720} &&
                            t.fused[1] == (rgbd ? 1024u : 2048u);
            emit({"shapes paper-scale " + std::string(rgbd ? "rgb-d" : "rgb") + " os=" + std::to_string(os) +
                      " 720x720 (shape trace)",
                  ok, "top " + to_string(t.top) + ", head input " + to_string(t.fused) + ", logits " + to_string(t.logits)});
            const auto L = model::backbone_layout(cfg, 3);
            std::vector<Shape> ws;
            for (const auto& s : L.stem) ws.push_back(s.weight_shape());
            for (const auto& stage : L.stages)
                for (const auto& b : stage) {
                    ws.push_back(b.conv1.weight_shape());
                    ws.push_back(b.conv2.weight_shape());
                    ws.push_back(b.conv3.weight_shape());
                    if (b.has_projection) ws.push_back(b.projection.weight_shape());
                }
            weight_shapes.push_back(std::move(ws));
        }
        const bool same = weight_shapes[0] == weight_shapes[1] && weight_shapes[1] == weight_shapes[2];
        emit({std::string("parameter shapes identical across output strides (paper-scale ") + (rgbd ? "rgb-d)" : "rgb)"),
              same, std::to_string(weight_shapes[0].size()) + " backbone convs"});
    }
    return out;
}

inline bool all_passed(const std::vector<Check>& checks) {
    return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
}

}  // namespace segnet::verify
