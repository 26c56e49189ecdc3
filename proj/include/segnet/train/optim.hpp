#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "segnet/checkpoint.hpp"
#include "segnet/error.hpp"
#include "segnet/model/layers.hpp"

namespace segnet::train {

/// base_lr * (1 - iter/max_iter)^power.
inline double poly_lr(double base_lr, std::size_t iter, std::size_t max_iter, double power) {
    if (max_iter < 1) throw ValueError("poly_lr: max_iter must be >= 1");
    if (iter > max_iter)
        throw ValueError("poly_lr: iter " + std::to_string(iter) + " exceeds max_iter " + std::to_string(max_iter));
    if (iter == 0) return base_lr;
    return base_lr * std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(max_iter), power);
}

struct OptimState {
    double base_lr = 5e-5;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    double power = 0.9;
    std::size_t iter = 0;
    std::size_t max_iter = 1;
    std::map<std::string, double> group_lr_multipliers;  // absent: 1
    std::map<std::string, double> group_weight_decay;    // absent: weight_decay
    std::map<std::string, std::vector<float>> velocity;  // by parameter path

    double multiplier(const std::string& group) const {
        auto it = group_lr_multipliers.find(group);
        return it == group_lr_multipliers.end() ? 1.0 : it->second;
    }
    double decay(const std::string& group) const {
        auto it = group_weight_decay.find(group);
        return it == group_weight_decay.end() ? weight_decay : it->second;
    }
    double lr() const { return poly_lr(base_lr, iter, max_iter, power); }
};

/// SGD with momentum: v <- m v + (g + wd w), w <- w - lr * mult(group) * v.
/// Weight decay touches conv weights only. Groups with multiplier 0 are
/// skipped entirely. Gradients are cleared afterwards and iter advances by one.
/// With `missing_as_zero` an absent gradient counts as zero (a batch whose
/// pixels were all ignored); otherwise it is an error for a trained group.
template <typename T>
void sgd_step(const std::vector<model::NamedParam<T>>& params, OptimState& st, bool missing_as_zero = false) {
    if (st.iter >= st.max_iter)
        throw ValueError("optimizer step beyond max_iter (" + std::to_string(st.max_iter) + ")");
    const double lr = st.lr();
    if (!(lr >= 0)) throw NumericError("learning rate must be non-negative");
    for (const auto& p : params) {
        if (!p.learnable()) continue;
        const std::string group = p.group();
        const double mult = st.multiplier(group);
        if (mult == 0.0) continue;
        if (mult < 0) throw ValueError("negative learning-rate multiplier for group " + group);
        Tensor<T> w = p.tensor;
        const bool has_grad = w.has_grad();
        if (!has_grad && !missing_as_zero) throw TapeError("no gradient for trained parameter " + p.path);
        const double wd = p.kind == model::ParamKind::conv_weight ? st.decay(group) : 0.0;
        auto& v = st.velocity[p.path];
        if (v.empty()) v.assign(w.numel(), 0.0f);
        if (v.size() != w.numel()) throw ShapeError("velocity buffer size mismatch for " + p.path);
        auto data = w.mutable_data();
        const double eta = lr * mult;
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double g = has_grad ? static_cast<double>(w.grad()[i]) : 0.0;
            const double vi = st.momentum * v[i] + (g + wd * static_cast<double>(data[i]));
            v[i] = static_cast<float>(vi);
            data[i] = static_cast<T>(static_cast<double>(data[i]) - eta * static_cast<double>(v[i]));
        }
    }
    for (const auto& p : params) {
        Tensor<T> w = p.tensor;
        w.drop_grad();
    }
    ++st.iter;
}

namespace detail {
// Counters are split across two floats so they stay exact past 2^24.
inline std::vector<float> pack_count(std::size_t v) {
    return {static_cast<float>(v >> 20), static_cast<float>(v & 0xFFFFF)};
}
inline std::size_t unpack_count(const CheckpointEntry& e) {
    if (e.values.size() != 2) throw ValueError("malformed optimizer counter in checkpoint");
    return (static_cast<std::size_t>(e.values[0]) << 20) + static_cast<std::size_t>(e.values[1]);
}
}  // namespace detail

/// Adds "optim.*" entries: counters, stage index and velocity buffers.
inline void write_optim_state(const OptimState& st, std::size_t stage_index, Checkpoint& ck,
                              const std::map<std::string, Shape>& shapes) {
    ck.put("optim.iter", {2}, detail::pack_count(st.iter));
    ck.put("optim.max_iter", {2}, detail::pack_count(st.max_iter));
    ck.put("optim.stage", {1}, {static_cast<float>(stage_index)});
    for (const auto& [path, v] : st.velocity) {
        auto it = shapes.find(path);
        if (it == shapes.end()) throw ValueError("velocity buffer for unknown parameter " + path);
        ck.put("optim.velocity." + path, it->second, v);
    }
}

inline bool has_optim_state(const Checkpoint& ck) { return ck.contains("optim.iter"); }

inline std::size_t checkpoint_stage(const Checkpoint& ck) {
    if (!ck.contains("optim.stage")) throw ValueError("checkpoint carries no training state");
    return static_cast<std::size_t>(ck.at("optim.stage").values.at(0));
}

/// Restores counters and velocities; returns the stored stage index.
inline std::size_t read_optim_state(const Checkpoint& ck, OptimState& st) {
    if (!has_optim_state(ck)) throw ValueError("checkpoint carries no optimizer state");
    st.iter = detail::unpack_count(ck.at("optim.iter"));
    st.max_iter = detail::unpack_count(ck.at("optim.max_iter"));
    st.velocity.clear();
    const std::string prefix = "optim.velocity.";
    for (const auto& [path, e] : ck.entries())
        if (path.rfind(prefix, 0) == 0) st.velocity[path.substr(prefix.size())] = e.values;
    return checkpoint_stage(ck);
}

}  // namespace segnet::train
