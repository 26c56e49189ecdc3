#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "segnet/error.hpp"
#include "segnet/labels.hpp"

namespace segnet::data {

struct Rgb8 {
    std::uint8_t r = 0, g = 0, b = 0;
    bool operator==(const Rgb8&) const = default;
};

/// Remapping of raw dataset ids onto a contiguous evaluation range [0,K).
class ClassMap {
public:
    struct Source {
        std::uint8_t id;
        std::string name;
        std::optional<std::uint8_t> target;  // nullopt: ignored
    };

    ClassMap(std::string name, std::vector<std::string> target_names, std::vector<Source> sources)
        : name_(std::move(name)), targets_(std::move(target_names)), sources_(std::move(sources)) {
        table_.fill(kIgnoreId);
        std::vector<bool> hit(targets_.size(), false);
        for (const auto& s : sources_) {
            if (s.target) {
                if (*s.target >= targets_.size())
                    throw ValueError("class map " + name_ + ": target id out of range for " + s.name);
                hit[*s.target] = true;
            }
            table_[s.id] = s.target.value_or(kIgnoreId);
        }
        for (std::size_t t = 0; t < hit.size(); ++t)
            if (!hit[t]) throw ValueError("class map " + name_ + ": target " + targets_[t] + " has no source");
    }

    const std::string& name() const { return name_; }
    std::size_t num_classes() const { return targets_.size(); }
    const std::vector<std::string>& class_names() const { return targets_; }
    const std::vector<Source>& sources() const { return sources_; }

    /// Target id of a raw id; undeclared ids and ignored classes give 255.
    std::uint8_t operator()(std::uint8_t raw) const { return table_[raw]; }

    /// Target id by source class name.
    std::uint8_t map_name(const std::string& source_name) const {
        for (const auto& s : sources_)
            if (s.name == source_name) return s.target.value_or(kIgnoreId);
        throw ValueError("class map " + name_ + " has no source class '" + source_name + "'");
    }

    std::optional<std::uint8_t> target_id(const std::string& target_name) const {
        for (std::size_t i = 0; i < targets_.size(); ++i)
            if (targets_[i] == target_name) return static_cast<std::uint8_t>(i);
        return std::nullopt;
    }

    void apply(LabelMap& labels) const {
        for (auto& id : labels.ids) id = table_[id];
    }

private:
    std::string name_;
    std::vector<std::string> targets_;
    std::vector<Source> sources_;
    std::array<std::uint8_t, 256> table_{};
};

/// Cityscapes label ids to the 19 train ids (official label table).
inline ClassMap cityscapes_class_map() {
    using S = ClassMap::Source;
    const std::nullopt_t I = std::nullopt;
    std::vector<std::string> names{"road",       "sidewalk",      "building",     "wall",       "fence",
                                   "pole",       "traffic light", "traffic sign", "vegetation", "terrain",
                                   "sky",        "person",        "rider",        "car",        "truck",
                                   "bus",        "train",         "motorcycle",   "bicycle"};
    std::vector<S> src{{0, "unlabeled", I},     {1, "ego vehicle", I},   {2, "rectification border", I},
                       {3, "out of roi", I},    {4, "static", I},        {5, "dynamic", I},
                       {6, "ground", I},        {7, "road", 0},          {8, "sidewalk", 1},
                       {9, "parking", I},       {10, "rail track", I},   {11, "building", 2},
                       {12, "wall", 3},         {13, "fence", 4},        {14, "guard rail", I},
                       {15, "bridge", I},       {16, "tunnel", I},       {17, "pole", 5},
                       {18, "polegroup", I},    {19, "traffic light", 6}, {20, "traffic sign", 7},
                       {21, "vegetation", 8},   {22, "terrain", 9},      {23, "sky", 10},
                       {24, "person", 11},      {25, "rider", 12},       {26, "car", 13},
                       {27, "truck", 14},       {28, "bus", 15},         {29, "caravan", I},
                       {30, "trailer", I},      {31, "train", 16},       {32, "motorcycle", 17},
                       {33, "bicycle", 18}};
    return ClassMap("cityscapes", std::move(names), std::move(src));
}

/// The ten CARLA evaluation classes, in report order.
inline std::vector<std::string> carla_class_names() {
    return {"Buildings", "Fences", "Pedestrians", "Poles", "Roads", "Sidewalks", "Vegetation", "Vehicles", "Walls",
            "Traffic Signs"};
}

/// CARLA semantic ids (0 unlabeled, 1..12 exported classes) to ten
/// evaluation classes; road line and others are ignored.
inline ClassMap carla_class_map() {
    using S = ClassMap::Source;
    const std::nullopt_t I = std::nullopt;
    std::vector<S> src{{0, "unlabeled", I},  {1, "buildings", 0},  {2, "fences", 1},    {3, "others", I},
                       {4, "pedestrians", 2}, {5, "poles", 3},      {6, "road line", I}, {7, "roads", 4},
                       {8, "sidewalks", 5},  {9, "vegetation", 6}, {10, "vehicles", 7}, {11, "walls", 8},
                       {12, "traffic signs", 9}};
    return ClassMap("carla", carla_class_names(), std::move(src));
}

/// Cityscapes train ids to CARLA evaluation ids: car, truck and bus become
/// vehicles; classes without a CARLA counterpart are ignored.
inline ClassMap cityscapes_to_carla_map() {
    using S = ClassMap::Source;
    const std::nullopt_t I = std::nullopt;
    std::vector<S> src{{0, "road", 4},         {1, "sidewalk", 5},     {2, "building", 0},   {3, "wall", 8},
                       {4, "fence", 1},        {5, "pole", 3},         {6, "traffic light", I}, {7, "traffic sign", 9},
                       {8, "vegetation", 6},   {9, "terrain", I},      {10, "sky", I},        {11, "person", 2},
                       {12, "rider", I},       {13, "car", 7},         {14, "truck", 7},      {15, "bus", 7},
                       {16, "train", I},       {17, "motorcycle", I},  {18, "bicycle", I}};
    return ClassMap("cityscapes-to-carla", carla_class_names(), std::move(src));
}

/// Ids 0..K-1 map to themselves; used for the synthetic scenes.
inline ClassMap identity_class_map(std::size_t k, const std::string& name = "synthetic") {
    if (k == 0 || k > kIgnoreId) throw ValueError("identity class map needs 1..255 classes");
    std::vector<std::string> names;
    std::vector<ClassMap::Source> src;
    for (std::size_t i = 0; i < k; ++i) {
        names.push_back(i == 0 ? "background" : "class " + std::to_string(i));
        src.push_back({static_cast<std::uint8_t>(i), names.back(), static_cast<std::uint8_t>(i)});
    }
    return ClassMap(name, std::move(names), std::move(src));
}

/// "cityscapes", "carla", "cityscapes-to-carla" or "synthetic" (K classes).
inline ClassMap class_map_by_name(const std::string& name, std::size_t synthetic_classes) {
    if (name == "cityscapes") return cityscapes_class_map();
    if (name == "carla") return carla_class_map();
    if (name == "cityscapes-to-carla") return cityscapes_to_carla_map();
    if (name == "synthetic") return identity_class_map(synthetic_classes);
    throw ValueError("unknown class map '" + name + "'");
}

/// Official Cityscapes colours of the 19 train ids.
inline std::vector<Rgb8> cityscapes_palette() {
    return {{128, 64, 128}, {244, 35, 232}, {70, 70, 70},   {102, 102, 156}, {190, 153, 153},
            {153, 153, 153}, {250, 170, 30}, {220, 220, 0},  {107, 142, 35},  {152, 251, 152},
            {70, 130, 180}, {220, 20, 60},  {255, 0, 0},    {0, 0, 142},     {0, 0, 70},
            {0, 60, 100},   {0, 80, 100},   {0, 0, 230},    {119, 11, 32}};
}

}  // namespace segnet::data
