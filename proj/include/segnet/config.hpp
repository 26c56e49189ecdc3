#pragma once

// JSON run configuration. Every key is optional; omitted keys take the
// defaults below, and keys that are not part of the schema are rejected.
// Relative data paths resolve against the config file's directory.

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include <json.hpp>

#include "segnet/data/augment.hpp"
#include "segnet/data/class_map.hpp"
#include "segnet/model/config.hpp"
#include "segnet/train/trainer.hpp"

namespace segnet {

struct DataConfig {
    std::string manifest;
    std::string class_map = "cityscapes";
    std::string train_split = "train";
};

struct EvalConfig {
    std::string split = "val";
    std::string output_dir = "eval";
    std::string palette;  // empty: the bundled Cityscapes palette when it fits
    std::string dump_format = "colour";
};

struct RunConfig {
    std::uint64_t seed = 0;
    model::ModelConfig model = model::ModelConfig::toy(19);
    DataConfig data;
    train::TrainOptions train;
    train::StagePlan plan = train::StagePlan::standard();
    std::string log_file;  // empty: stdout only
    EvalConfig eval;

    data::ClassMap class_map() const { return data::class_map_by_name(data.class_map, model.num_classes); }

    void validate() const {
        model.validate();
        plan.validate();
        train.augmentation.validate();
        const auto map = class_map();
        if (map.num_classes() != model.num_classes)
            throw ValueError("model.num_classes is " + std::to_string(model.num_classes) + " but class map " +
                             map.name() + " has " + std::to_string(map.num_classes()) + " classes");
        if (train.depth_init != "rgb" && train.depth_init != "random")
            throw ValueError("train.depth_init must be 'rgb' or 'random'");
        if (eval.dump_format != "colour" && eval.dump_format != "ids")
            throw ValueError("eval.dump_format must be 'colour' or 'ids'");
        if (!(train.base_lr >= 0) || !(train.momentum >= 0) || !(train.weight_decay >= 0) || !(train.power > 0))
            throw ValueError("train: base_lr, momentum and weight_decay must be >= 0 and power > 0");
    }
};

class ConfigError : public ValueError {
public:
    using ValueError::ValueError;
};

namespace detail {

using nlohmann::json;

/// Reads fields of one JSON object and rejects any key it was not asked about.
class ObjectReader {
public:
    ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) throw ConfigError(label() + " must be an object");
    }

    bool has(const std::string& key) {
        seen_.insert(key);
        return j_.contains(key);
    }

    template <typename V>
    void get(const std::string& key, V& out) {
        if (!has(key)) return;
        try {
            out = j_.at(key).get<V>();
        } catch (const json::exception&) {
            throw ConfigError("config key " + path(key) + " has the wrong type");
        }
    }

    const json& at(const std::string& key) {
        seen_.insert(key);
        return j_.at(key);
    }

    std::string path(const std::string& key) const { return where_.empty() ? key : where_ + "." + key; }

    void finish() const {
        for (const auto& [k, v] : j_.items())
            if (!seen_.count(k)) throw ConfigError("unknown config key " + path(k));
    }

private:
    std::string label() const { return where_.empty() ? "config" : where_; }
    const json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

inline std::pair<double, double> read_range(ObjectReader& r, const std::string& key, std::pair<double, double> dflt) {
    std::vector<double> v{dflt.first, dflt.second};
    r.get(key, v);
    if (v.size() != 2) throw ConfigError("config key " + r.path(key) + " must be a [min, max] pair");
    return {v[0], v[1]};
}

inline void read_model(const json& j, model::ModelConfig& m) {
    ObjectReader r(j, "model");
    r.get("output_stride", m.output_stride);
    std::vector<std::size_t> depths(m.block_depths.begin(), m.block_depths.end());
    r.get("block_depths", depths);
    if (depths.size() != 4) throw ConfigError("config key model.block_depths must list four stages");
    std::copy(depths.begin(), depths.end(), m.block_depths.begin());
    r.get("width_multiplier", m.width_multiplier);
    if (r.has("fusion_mode")) {
        std::string s;
        r.get("fusion_mode", s);
        m.fusion_mode = model::parse_fusion_mode(s);
    }
    r.get("fusion_channels", m.fusion_channels);
    if (r.has("pyramid")) {
        const json& p = r.at("pyramid");
        if (p.is_string()) {
            m.apply_pyramid_preset(p.get<std::string>());
        } else if (p.is_array()) {
            try {
                m.pyramid = model::pyramid_from_rates(p.get<std::vector<std::size_t>>());
            } catch (const json::exception&) {
                throw ConfigError("config key model.pyramid must be a preset name or a list of rates");
            }
        } else {
            throw ConfigError("config key model.pyramid must be a preset name or a list of rates");
        }
    }
    r.get("global_context", m.global_context);
    r.get("num_classes", m.num_classes);
    r.get("bn_momentum", m.bn_momentum);
    r.get("bn_eps", m.bn_eps);
    r.finish();
}

inline void read_augment(const json& j, train::TrainOptions& t) {
    ObjectReader r(j, "data.augment");
    auto& a = t.augmentation;
    r.get("enabled", t.augment);
    std::tie(a.scale_min, a.scale_max) = read_range(r, "scale_range", {a.scale_min, a.scale_max});
    r.get("crop", a.crop);
    r.get("hflip_prob", a.hflip_prob);
    r.get("jitter", a.jitter);
    std::tie(a.jitter_min, a.jitter_max) = read_range(r, "jitter_range", {a.jitter_min, a.jitter_max});
    r.get("rescale_depth", a.rescale_depth);
    r.finish();
}

inline train::ScheduleEvent read_event(const json& j, const std::string& where) {
    ObjectReader r(j, where);
    train::ScheduleEvent e{0, std::nullopt, std::nullopt, "head"};
    if (!r.has("epoch")) throw ConfigError("config key " + r.path("epoch") + " is required");
    r.get("epoch", e.epoch);
    if (r.has("base_lr")) {
        double v = 0;
        r.get("base_lr", v);
        e.base_lr = v;
    }
    if (r.has("weight_decay")) {
        double v = 0;
        r.get("weight_decay", v);
        e.weight_decay = v;
    }
    r.get("decay_group", e.decay_group);
    r.finish();
    return e;
}

inline train::StageSpec read_stage(const json& j, const std::string& where, std::size_t default_epochs) {
    ObjectReader r(j, where);
    train::StageSpec s;
    if (!r.has("kind")) throw ConfigError("config key " + r.path("kind") + " is required");
    std::string kind;
    r.get("kind", kind);
    s.kind = train::parse_stage_kind(kind);
    s.epochs = default_epochs;
    r.get("epochs", s.epochs);
    if (r.has("base_lr")) {
        double v = 0;
        r.get("base_lr", v);
        s.base_lr = v;
    }
    r.get("frozen", s.frozen_groups);
    if (r.has("bn_frozen")) {
        bool v = false;
        r.get("bn_frozen", v);
        s.bn_frozen = v;
    }
    r.get("lr_multipliers", s.lr_multipliers);
    if (r.has("events")) {
        const json& ev = r.at("events");
        if (!ev.is_array()) throw ConfigError("config key " + r.path("events") + " must be a list");
        for (std::size_t i = 0; i < ev.size(); ++i)
            s.events.push_back(read_event(ev[i], r.path("events") + "[" + std::to_string(i) + "]"));
    } else if (s.epochs >= train::late_schedule_event().epoch) {
        s.events.push_back(train::late_schedule_event());
    }
    r.finish();
    return s;
}

inline void read_train(const json& j, RunConfig& c) {
    ObjectReader r(j, "train");
    auto& t = c.train;
    r.get("base_lr", t.base_lr);
    r.get("momentum", t.momentum);
    r.get("weight_decay", t.weight_decay);
    r.get("power", t.power);
    std::size_t epochs = 200;
    r.get("epochs", epochs);
    c.plan = train::StagePlan::standard(epochs);
    if (r.has("stages")) {
        const json& st = r.at("stages");
        if (!st.is_array()) throw ConfigError("config key train.stages must be a list");
        c.plan.stages.clear();
        for (std::size_t i = 0; i < st.size(); ++i)
            c.plan.stages.push_back(read_stage(st[i], "train.stages[" + std::to_string(i) + "]", epochs));
    }
    r.get("checkpoint_dir", t.checkpoint_dir);
    r.get("checkpoint_every", t.checkpoint_every);
    r.get("depth_init", t.depth_init);
    r.get("log", c.log_file);
    r.finish();
}

inline std::size_t line_of(const std::string& text, std::size_t byte) {
    return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + std::min(byte, text.size()), '\n'));
}

}  // namespace detail

/// Parses a config document; `base_dir` anchors every relative path in it.
inline RunConfig parse_run_config(const std::string& text, const std::string& base_dir = "",
                                  const std::string& source = "config") {
    using nlohmann::json;
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(source + ":" + std::to_string(detail::line_of(text, e.byte)) + ": JSON syntax error");
    }
    RunConfig c;
    detail::ObjectReader r(j, "");
    r.get("seed", c.seed);
    if (r.has("model")) detail::read_model(r.at("model"), c.model);
    if (r.has("data")) {
        detail::ObjectReader d(r.at("data"), "data");
        d.get("manifest", c.data.manifest);
        d.get("class_map", c.data.class_map);
        d.get("train_split", c.data.train_split);
        if (d.has("augment")) detail::read_augment(d.at("augment"), c.train);
        d.finish();
    }
    if (r.has("train")) detail::read_train(r.at("train"), c);
    if (r.has("eval")) {
        detail::ObjectReader e(r.at("eval"), "eval");
        e.get("split", c.eval.split);
        e.get("output_dir", c.eval.output_dir);
        e.get("palette", c.eval.palette);
        e.get("dump_format", c.eval.dump_format);
        e.finish();
    }
    r.finish();
    c.train.seed = c.seed;
    if (!base_dir.empty())
        for (std::string* p : {&c.data.manifest, &c.eval.palette, &c.eval.output_dir, &c.train.checkpoint_dir, &c.log_file})
            if (!p->empty() && std::filesystem::path(*p).is_relative()) *p = (std::filesystem::path(base_dir) / *p).string();
    c.validate();
    return c;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str(), std::filesystem::path(path).parent_path().string(), path);
}

}  // namespace segnet
