#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "segnet/nn.hpp"
#include "segnet/rng.hpp"

namespace segnet::model {

enum class ParamKind { conv_weight, bias, bn_scale, bn_shift, bn_statistic };

/// A named tensor owned by a network. `tensor` shares storage with the
/// layer that uses it.
template <typename T>
struct NamedParam {
    std::string path;
    Tensor<T> tensor;
    ParamKind kind;

    bool learnable() const { return kind != ParamKind::bn_statistic; }
    /// Top-level layer group: rgb, depth, fusion or head.
    std::string group() const { return path.substr(0, path.find('.')); }
};

template <typename T>
using ParamSink = std::function<void(NamedParam<T>)>;

/// He-uniform conv weights, bound sqrt(6 / fan_in), drawn from a stream
/// keyed by the parameter path so initialization does not depend on the
/// order layers are built in.
template <typename T>
Tensor<T> he_uniform(const nn::ConvSpec& spec, std::uint64_t seed, const std::string& path) {
    const double fan_in = static_cast<double>(spec.in_channels * spec.kernel_h * spec.kernel_w);
    Rng rng(derive_seed(seed, path));
    return Tensor<T>::uniform(spec.weight_shape(), static_cast<T>(std::sqrt(6.0 / fan_in)), rng);
}

/// Convolution, optionally followed by batch norm and ReLU.
template <typename T>
struct ConvUnit {
    nn::ConvSpec spec;
    Tensor<T> weight;
    Tensor<T> bias;
    bool has_bn = true;
    bool has_relu = true;
    nn::BatchNormState<T> bn;

    ConvUnit() = default;
    ConvUnit(const nn::ConvSpec& s, bool with_bn, bool with_relu, const std::string& name, std::uint64_t seed,
             double bn_momentum, double bn_eps)
        : spec(s), has_bn(with_bn), has_relu(with_relu) {
        weight = he_uniform<T>(spec, seed, name + ".weight");
        if (spec.has_bias) bias = Tensor<T>::zeros({spec.out_channels});
        if (has_bn) bn = nn::BatchNormState<T>::make(spec.out_channels, static_cast<T>(bn_momentum), static_cast<T>(bn_eps));
    }

    Tensor<T> forward(const Tensor<T>& x) {
        Tensor<T> y = nn::conv2d(x, spec, weight, bias);
        if (has_bn) y = nn::batch_norm(y, bn);
        if (has_relu) y = nn::relu(y);
        return y;
    }

    /// `conv_name` names the weight; `bn_name` the normalization entries.
    void visit(const std::string& conv_name, const std::string& bn_name, const ParamSink<T>& sink) const {
        sink({conv_name + ".weight", weight, ParamKind::conv_weight});
        if (spec.has_bias) sink({conv_name + ".bias", bias, ParamKind::bias});
        if (has_bn) {
            sink({bn_name + ".gamma", bn.gamma, ParamKind::bn_scale});
            sink({bn_name + ".beta", bn.beta, ParamKind::bn_shift});
            sink({bn_name + ".running_mean", bn.running_mean, ParamKind::bn_statistic});
            sink({bn_name + ".running_var", bn.running_var, ParamKind::bn_statistic});
        }
    }

    void set_bn_mode(nn::BnMode mode) { bn.mode = mode; }

    /// Changes stride/dilation/padding while keeping parameters.
    void respec(const nn::ConvSpec& s) {
        if (s.weight_shape() != spec.weight_shape() || s.has_bias != spec.has_bias)
            throw ShapeError("respec must keep parameter shapes");
        spec = s;
    }
};

}  // namespace segnet::model
