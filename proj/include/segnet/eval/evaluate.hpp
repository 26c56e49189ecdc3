#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "segnet/data/sample.hpp"
#include "segnet/eval/metrics.hpp"
#include "segnet/model/network.hpp"
#include "segnet/nn/loss.hpp"

namespace segnet::eval {

/// Reads "R G B [name]" lines; blank lines and '#' comments are skipped.
inline std::vector<data::Rgb8> read_palette(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open palette: " + path);
    std::vector<data::Rgb8> out;
    std::string line;
    for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream ss(line);
        int r, g, b;
        if (!(ss >> r)) continue;
        if (!(ss >> g >> b) || r < 0 || r > 255 || g < 0 || g > 255 || b < 0 || b > 255)
            throw ValueError(path + ":" + std::to_string(lineno) + ": expected three values in [0,255]");
        out.push_back({static_cast<std::uint8_t>(r), static_cast<std::uint8_t>(g), static_cast<std::uint8_t>(b)});
    }
    return out;
}

/// Palette entries beyond `given` are filled with evenly spread hues.
inline std::vector<data::Rgb8> extend_palette(std::vector<data::Rgb8> given, std::size_t k) {
    for (std::size_t i = given.size(); i < k; ++i) {
        const double h = std::fmod(static_cast<double>(i) * 0.618033988749895, 1.0) * 6.0;
        const double f = h - std::floor(h);
        const auto v = [](double x) { return static_cast<std::uint8_t>(std::lround(40 + 200 * x)); };
        switch (static_cast<int>(h)) {
            case 0: given.push_back({v(1), v(f), v(0)}); break;
            case 1: given.push_back({v(1 - f), v(1), v(0)}); break;
            case 2: given.push_back({v(0), v(1), v(f)}); break;
            case 3: given.push_back({v(0), v(1 - f), v(1)}); break;
            case 4: given.push_back({v(f), v(0), v(1)}); break;
            default: given.push_back({v(1), v(0), v(1 - f)}); break;
        }
    }
    return given;
}

/// Ignored pixels are drawn black.
inline io::Image colourize(const LabelMap& labels, const std::vector<data::Rgb8>& palette) {
    io::Image img(labels.w, labels.h, 3, 8);
    for (std::size_t i = 0; i < labels.h * labels.w; ++i) {
        const std::uint8_t id = labels.ids[i];
        const data::Rgb8 c = id < palette.size() ? palette[id] : data::Rgb8{};
        img.samples[3 * i] = c.r;
        img.samples[3 * i + 1] = c.g;
        img.samples[3 * i + 2] = c.b;
    }
    return img;
}

/// Frozen-statistics inference and per-pixel argmax.
template <typename T>
LabelMap predict(model::SegNet<T>& net, const data::Sample& s) {
    net.set_bn_mode(nn::BnMode::frozen);
    const auto& cfg = net.config();
    Tensor<T> rgb, depth;
    if (cfg.rgb_branch) rgb = Tensor<T>({1, 3, s.height(), s.width()}, {s.rgb.values().begin(), s.rgb.values().end()});
    if (cfg.depth_branch)
        depth = Tensor<T>({1, 1, s.height(), s.width()}, {s.depth.values().begin(), s.depth.values().end()});
    return nn::argmax_channels(net.forward(rgb, depth));
}

enum class DumpFormat { colour, ids };

struct EvalOptions {
    std::string dump_dir;  // empty: no prediction images
    DumpFormat dump_format = DumpFormat::colour;
    std::vector<data::Rgb8> palette;
};

struct Report {
    std::vector<std::string> class_names;
    ConfusionMatrix matrix;
    IouResult result;
    std::size_t samples = 0;

    std::string text() const {
        std::ostringstream os;
        std::size_t width = 8;
        for (const auto& n : class_names) width = std::max(width, n.size());
        width += 2;
        os << std::left << std::setw(static_cast<int>(width)) << "class" << "IoU(%)\n";
        auto pct = [](std::optional<double> v) {
            if (!v) return std::string("n/a");
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.2f", 100.0 * *v);
            return std::string(buf);
        };
        for (std::size_t c = 0; c < class_names.size(); ++c)
            os << std::setw(static_cast<int>(width)) << class_names[c] << pct(result.per_class[c]) << '\n';
        os << std::setw(static_cast<int>(width)) << "Mean IoU" << pct(result.mean) << '\n';
        return os.str();
    }

    nlohmann::json json() const {
        nlohmann::json classes = nlohmann::json::array();
        for (std::size_t c = 0; c < class_names.size(); ++c) {
            nlohmann::json row{{"id", c}, {"name", class_names[c]}};
            row["iou"] = result.per_class[c] ? nlohmann::json(*result.per_class[c]) : nlohmann::json(nullptr);
            classes.push_back(row);
        }
        nlohmann::json cm = nlohmann::json::array();
        for (std::size_t g = 0; g < matrix.k(); ++g) {
            nlohmann::json row = nlohmann::json::array();
            for (std::size_t p = 0; p < matrix.k(); ++p) row.push_back(matrix(g, p));
            cm.push_back(row);
        }
        const auto acc = matrix.pixel_accuracy();
        return {{"classes", classes},
                {"mean_iou", result.mean ? nlohmann::json(*result.mean) : nlohmann::json(nullptr)},
                {"evaluated_classes", result.evaluated},
                {"pixel_accuracy", acc ? nlohmann::json(*acc) : nlohmann::json(nullptr)},
                {"samples", samples},
                {"confusion", cm}};
    }

    void write(const std::string& text_path, const std::string& json_path) const {
        std::ofstream t(text_path), j(json_path);
        if (!t) throw IoError("cannot write report: " + text_path);
        if (!j) throw IoError("cannot write report: " + json_path);
        t << text();
        j << json().dump(2) << '\n';
    }
};

template <typename T>
Report evaluate(model::SegNet<T>& net, const data::Dataset& split, const EvalOptions& opts = {}) {
    const auto& map = split.class_map();
    if (net.config().num_classes != map.num_classes())
        throw ValueError("model predicts " + std::to_string(net.config().num_classes) + " classes but class map " +
                         map.name() + " has " + std::to_string(map.num_classes()));
    if (!opts.dump_dir.empty()) {
        std::error_code ec;
        std::filesystem::create_directories(opts.dump_dir, ec);
        if (ec) throw IoError("cannot create directory " + opts.dump_dir + ": " + ec.message());
    }
    const auto palette = extend_palette(opts.palette, map.num_classes());
    Report report{map.class_names(), ConfusionMatrix(map.num_classes()), {}, 0};
    for (std::size_t i = 0; i < split.size(); ++i) {
        const data::Sample s = split.load(i);
        const LabelMap pred = predict(net, s);
        report.matrix.accumulate(s.labels, pred);
        if (!opts.dump_dir.empty()) {
            char name[32];
            std::snprintf(name, sizeof name, "%06zu.png", i);
            const auto path = (std::filesystem::path(opts.dump_dir) / name).string();
            io::write_png(path, opts.dump_format == DumpFormat::ids ? data::labels_to_image(pred) : colourize(pred, palette));
        }
        ++report.samples;
    }
    report.result = iou(report.matrix);
    return report;
}

}  // namespace segnet::eval
