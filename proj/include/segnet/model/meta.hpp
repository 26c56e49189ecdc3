#pragma once

// Architecture description stored beside the weights ("meta.*" entries), so a
// checkpoint alone is enough to rebuild its network.

#include <cmath>
#include <string>

#include "segnet/checkpoint.hpp"
#include "segnet/model/config.hpp"

namespace segnet::model {

namespace detail {
// Reals are kept as a float pair (hi, lo) with hi + lo close to the double.
inline std::vector<float> split_real(double v) {
    const float hi = static_cast<float>(v);
    return {hi, static_cast<float>(v - static_cast<double>(hi))};
}
inline double join_real(const CheckpointEntry& e) {
    if (e.values.size() != 2) throw ValueError("malformed real-valued metadata entry");
    return static_cast<double>(e.values[0]) + static_cast<double>(e.values[1]);
}
inline std::size_t meta_count(const Checkpoint& ck, const std::string& key) {
    const auto& e = ck.at("meta." + key);
    if (e.values.size() != 1 || e.values[0] < 0 || e.values[0] != std::floor(e.values[0]))
        throw ValueError("malformed metadata entry meta." + key);
    return static_cast<std::size_t>(e.values[0]);
}
}  // namespace detail

inline void write_model_meta(const ModelConfig& cfg, Checkpoint& ck) {
    auto count = [&](const std::string& key, std::size_t v) { ck.put("meta." + key, {1}, {static_cast<float>(v)}); };
    count("output_stride", cfg.output_stride);
    ck.put("meta.block_depths", {4},
           {static_cast<float>(cfg.block_depths[0]), static_cast<float>(cfg.block_depths[1]),
            static_cast<float>(cfg.block_depths[2]), static_cast<float>(cfg.block_depths[3])});
    ck.put("meta.width_multiplier", {2}, detail::split_real(cfg.width_multiplier));
    count("fusion_mode", cfg.fusion_mode == FusionMode::concat ? 1 : 0);
    count("fusion_channels", cfg.fusion_channels);
    std::vector<float> pyr;
    for (const auto& b : cfg.pyramid) {
        pyr.push_back(static_cast<float>(b.kernel));
        pyr.push_back(static_cast<float>(b.rate));
    }
    ck.put("meta.pyramid", {cfg.pyramid.size(), 2}, pyr);
    count("global_context", cfg.global_context);
    count("num_classes", cfg.num_classes);
    count("rgb_branch", cfg.rgb_branch);
    count("depth_branch", cfg.depth_branch);
    ck.put("meta.bn_momentum", {2}, detail::split_real(cfg.bn_momentum));
    ck.put("meta.bn_eps", {2}, detail::split_real(cfg.bn_eps));
}

inline bool has_model_meta(const Checkpoint& ck) { return ck.contains("meta.num_classes"); }

inline ModelConfig read_model_meta(const Checkpoint& ck) {
    if (!has_model_meta(ck)) throw ValueError("checkpoint carries no architecture metadata");
    ModelConfig cfg;
    cfg.output_stride = detail::meta_count(ck, "output_stride");
    const auto& depths = ck.at("meta.block_depths");
    if (depths.values.size() != 4) throw ValueError("malformed metadata entry meta.block_depths");
    for (std::size_t i = 0; i < 4; ++i) cfg.block_depths[i] = static_cast<std::size_t>(depths.values[i]);
    cfg.width_multiplier = detail::join_real(ck.at("meta.width_multiplier"));
    cfg.fusion_mode = detail::meta_count(ck, "fusion_mode") ? FusionMode::concat : FusionMode::sum;
    cfg.fusion_channels = detail::meta_count(ck, "fusion_channels");
    const auto& pyr = ck.at("meta.pyramid");
    if (pyr.shape.size() != 2 || pyr.shape[1] != 2) throw ValueError("malformed metadata entry meta.pyramid");
    cfg.pyramid.clear();
    for (std::size_t i = 0; i < pyr.shape[0]; ++i)
        cfg.pyramid.push_back({static_cast<std::size_t>(pyr.values[2 * i]), static_cast<std::size_t>(pyr.values[2 * i + 1])});
    cfg.global_context = detail::meta_count(ck, "global_context") != 0;
    cfg.num_classes = detail::meta_count(ck, "num_classes");
    cfg.rgb_branch = detail::meta_count(ck, "rgb_branch") != 0;
    cfg.depth_branch = detail::meta_count(ck, "depth_branch") != 0;
    cfg.bn_momentum = detail::join_real(ck.at("meta.bn_momentum"));
    cfg.bn_eps = detail::join_real(ck.at("meta.bn_eps"));
    cfg.validate();
    return cfg;
}

}  // namespace segnet::model
