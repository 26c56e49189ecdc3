#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "segnet/data/class_map.hpp"
#include "segnet/error.hpp"
#include "segnet/io/png.hpp"
#include "segnet/labels.hpp"
#include "segnet/tensor.hpp"

namespace segnet::data {

/// One RGB-D training pair: rgb [3,H,W] and depth [1,H,W] in [0,1], labels [1,H,W].
struct Sample {
    Tensor<float> rgb;
    Tensor<float> depth;
    LabelMap labels;
    std::string label_space = "raw";  // name of the class map already applied

    std::size_t height() const { return labels.h; }
    std::size_t width() const { return labels.w; }

    void validate() const {
        if (labels.n != 1) throw ShapeError("sample labels must hold a single map");
        const Shape rgb_shape{3, labels.h, labels.w}, depth_shape{1, labels.h, labels.w};
        if (!rgb.defined() || rgb.shape() != rgb_shape)
            throw ShapeError("sample rgb must be " + to_string(rgb_shape));
        if (!depth.defined() || depth.shape() != depth_shape)
            throw ShapeError("sample depth must be " + to_string(depth_shape));
        for (const auto* t : {&rgb, &depth})
            for (float v : t->data())
                if (!(v >= 0.0f && v <= 1.0f)) throw ValueError("sample intensities must be finite and within [0,1]");
    }

    Tensor<float> rgb_batch() const { return Tensor<float>({1, 3, labels.h, labels.w}, rgb.values()); }
    Tensor<float> depth_batch() const { return Tensor<float>({1, 1, labels.h, labels.w}, depth.values()); }
};

inline float normalize_sample(std::uint16_t v, int bit_depth) {
    const double max = bit_depth == 16 ? 65535.0 : 255.0;
    return static_cast<float>(static_cast<double>(v) / max);
}

inline std::uint16_t quantize_sample(float v, int bit_depth) {
    const double max = bit_depth == 16 ? 65535.0 : 255.0;
    const double c = std::clamp(static_cast<double>(v), 0.0, 1.0);
    return static_cast<std::uint16_t>(std::lround(c * max));
}

/// Interleaved raster to planar [C,H,W] in [0,1].
inline Tensor<float> image_to_planes(const io::Image& img) {
    const std::size_t hw = img.width * img.height;
    std::vector<float> out(img.channels * hw);
    for (std::size_t c = 0; c < img.channels; ++c)
        for (std::size_t i = 0; i < hw; ++i)
            out[c * hw + i] = normalize_sample(img.samples[i * img.channels + c], img.bit_depth);
    return Tensor<float>({img.channels, img.height, img.width}, std::move(out));
}

inline io::Image planes_to_image(const Tensor<float>& planes, int bit_depth) {
    if (planes.rank() != 3) throw ShapeError("planes_to_image: expected [C,H,W]");
    const std::size_t c = planes.dim(0), h = planes.dim(1), w = planes.dim(2);
    io::Image img(w, h, c, bit_depth);
    const auto v = planes.data();
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < h * w; ++i) img.samples[i * c + ch] = quantize_sample(v[ch * h * w + i], bit_depth);
    return img;
}

inline io::Image labels_to_image(const LabelMap& labels) {
    io::Image img(labels.w, labels.h, 1, 8);
    for (std::size_t i = 0; i < labels.h * labels.w; ++i) img.samples[i] = labels.ids[i];
    return img;
}

inline void require_file(const std::string& path) {
    if (!std::filesystem::is_regular_file(path)) throw IoError("missing file: " + path);
}

/// Applies `map` unless the sample's labels are already in its target space.
inline void remap(Sample& s, const ClassMap& map) {
    if (s.label_space == map.name()) return;
    map.apply(s.labels);
    s.label_space = map.name();
}

/// Reads an RGB (8-bit, 3 channels), depth (8/16-bit gray) and label
/// (8-bit gray) triplet and remaps the labels through `map`.
inline Sample load_sample(const std::string& rgb_path, const std::string& depth_path, const std::string& label_path,
                          const ClassMap& map) {
    for (const auto* p : {&rgb_path, &depth_path, &label_path}) require_file(*p);
    const io::Image rgb = io::read_png(rgb_path);
    const io::Image depth = io::read_png(depth_path);
    const io::Image label = io::read_png(label_path);
    if (rgb.channels != 3 || rgb.bit_depth != 8) throw IoError("rgb image must be 8-bit with 3 channels: " + rgb_path);
    if (depth.channels != 1) throw IoError("depth image must have a single channel: " + depth_path);
    if (label.channels != 1 || label.bit_depth != 8)
        throw IoError("label image must be 8-bit single channel: " + label_path);
    if (depth.width != rgb.width || depth.height != rgb.height || label.width != rgb.width ||
        label.height != rgb.height)
        throw ShapeError("image extents differ between " + rgb_path + ", " + depth_path + " and " + label_path);

    Sample s;
    s.rgb = image_to_planes(rgb);
    s.depth = image_to_planes(depth);
    s.labels = LabelMap(1, label.height, label.width);
    for (std::size_t i = 0; i < s.labels.size(); ++i) s.labels.ids[i] = static_cast<std::uint8_t>(label.samples[i]);
    remap(s, map);
    return s;
}

/// Writes rgb as 8-bit, depth as 16-bit and labels as stored.
inline void save_sample(const Sample& s, const std::string& rgb_path, const std::string& depth_path,
                        const std::string& label_path) {
    s.validate();
    io::write_png(rgb_path, planes_to_image(s.rgb, 8));
    io::write_png(depth_path, planes_to_image(s.depth, 16));
    io::write_png(label_path, labels_to_image(s.labels));
}

struct ManifestEntry {
    std::string rgb, depth, label, split;
    bool operator==(const ManifestEntry&) const = default;
};

/// Tab-separated rgb, depth, label, split per line. Relative paths are
/// resolved against the manifest's directory; blank and '#' lines are skipped.
inline std::vector<ManifestEntry> read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest: " + path);
    const auto base = std::filesystem::path(path).parent_path();
    auto resolve = [&](const std::string& p) {
        const std::filesystem::path fp(p);
        return fp.is_absolute() ? fp.string() : (base / fp).string();
    };
    std::vector<ManifestEntry> out;
    std::string line;
    for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        for (std::string f; std::getline(ss, f, '\t');) fields.push_back(f);
        if (fields.size() != 4)
            throw ValueError(path + ":" + std::to_string(lineno) + ": expected 4 tab-separated fields, got " +
                             std::to_string(fields.size()));
        out.push_back({resolve(fields[0]), resolve(fields[1]), resolve(fields[2]), fields[3]});
    }
    return out;
}

inline void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write manifest: " + path);
    for (const auto& e : entries) out << e.rgb << '\t' << e.depth << '\t' << e.label << '\t' << e.split << '\n';
    if (!out) throw IoError("cannot write manifest: " + path);
}

/// Manifest entries plus the class map used to decode their labels.
class Dataset {
public:
    Dataset(std::vector<ManifestEntry> entries, ClassMap map) : entries_(std::move(entries)), map_(std::move(map)) {}

    static Dataset open(const std::string& manifest, const ClassMap& map, const std::string& split = "") {
        Dataset all(read_manifest(manifest), map);
        return split.empty() ? all : all.split(split);
    }

    Dataset split(const std::string& name) const {
        std::vector<ManifestEntry> picked;
        for (const auto& e : entries_)
            if (e.split == name) picked.push_back(e);
        return Dataset(std::move(picked), map_);
    }

    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    const ManifestEntry& entry(std::size_t i) const { return entries_.at(i); }
    const std::vector<ManifestEntry>& entries() const { return entries_; }
    const ClassMap& class_map() const { return map_; }

    Sample load(std::size_t i) const {
        const auto& e = entries_.at(i);
        return load_sample(e.rgb, e.depth, e.label, map_);
    }

private:
    std::vector<ManifestEntry> entries_;
    ClassMap map_;
};

}  // namespace segnet::data
