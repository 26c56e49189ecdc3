// segnet: dataset generation, staged training, evaluation, prediction and
// self-verification for the RGB-D dilated-ResNet segmenter.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>

#include <CLI11.hpp>

#include "segnet/config.hpp"
#include "segnet/data/synthetic.hpp"
#include "segnet/eval/evaluate.hpp"
#include "segnet/model/meta.hpp"
#include "segnet/parallel.hpp"
#include "segnet/train/trainer.hpp"
#include "segnet/verify.hpp"

namespace {

using namespace segnet;

constexpr int kOk = 0;
constexpr int kUserError = 1;
constexpr int kInternalError = 2;

/// Writes to stdout and, optionally, a file.
class TeeBuf : public std::streambuf {
public:
    TeeBuf(std::streambuf* a, std::streambuf* b) : a_(a), b_(b) {}

protected:
    int overflow(int c) override {
        if (traits_type::eq_int_type(c, traits_type::eof())) return traits_type::not_eof(c);
        const auto r1 = a_->sputc(traits_type::to_char_type(c));
        const auto r2 = b_ ? b_->sputc(traits_type::to_char_type(c)) : r1;
        return traits_type::eq_int_type(r1, traits_type::eof()) || traits_type::eq_int_type(r2, traits_type::eof())
                   ? traits_type::eof()
                   : c;
    }
    int sync() override {
        const int r1 = a_->pubsync();
        const int r2 = b_ ? b_->pubsync() : 0;
        return r1 == 0 && r2 == 0 ? 0 : -1;
    }

private:
    std::streambuf* a_;
    std::streambuf* b_;
};

model::SegNet<float> load_model(const std::string& checkpoint) {
    const Checkpoint ck = Checkpoint::load(checkpoint);
    model::SegNet<float> net(model::read_model_meta(ck));
    net.load_state_dict(ck, {.strict = true});
    net.set_bn_mode(nn::BnMode::frozen);
    return net;
}

std::vector<data::Rgb8> palette_for(const std::string& file, const data::ClassMap& map) {
    if (!file.empty()) return eval::read_palette(file);
    if (map.name() == "cityscapes") return data::cityscapes_palette();
    return {};
}

int cmd_synth(const std::string& out, const data::SynthParams& p) {
    const auto manifest = data::gen_synthetic(p, out);
    std::cout << "wrote " << p.count << " samples and " << manifest << '\n';
    return kOk;
}

int cmd_train(const std::string& config_path, int stage, const std::string& resume) {
    const RunConfig cfg = load_run_config(config_path);
    if (cfg.data.manifest.empty()) throw ValueError("config key data.manifest is required for training");
    const auto train_set = data::Dataset::open(cfg.data.manifest, cfg.class_map(), cfg.data.train_split);
    if (train_set.empty())
        throw ValueError("manifest " + cfg.data.manifest + " has no samples in split '" + cfg.data.train_split + "'");

    std::ofstream file;
    if (!cfg.log_file.empty()) {
        file.open(cfg.log_file, std::ios::app);
        if (!file) throw IoError("cannot open log file " + cfg.log_file);
    }
    TeeBuf buf(std::cout.rdbuf(), file.is_open() ? file.rdbuf() : nullptr);
    std::ostream log_stream(&buf);
    train::TrainLog log(&log_stream);

    std::size_t first = 0;
    if (!resume.empty()) {
        first = train::checkpoint_stage(Checkpoint::load(resume));
        if (first >= cfg.plan.stages.size())
            throw ValueError("checkpoint " + resume + " belongs to stage " + std::to_string(first + 1) +
                             " but the plan has " + std::to_string(cfg.plan.stages.size()) + " stages");
        if (stage > 0 && static_cast<std::size_t>(stage) != first + 1)
            throw ValueError("--stage " + std::to_string(stage) + " does not match checkpoint " + resume +
                             " (stage " + std::to_string(first + 1) + ")");
    }
    if (stage > 0) {
        if (static_cast<std::size_t>(stage) > cfg.plan.stages.size())
            throw ValueError("--stage " + std::to_string(stage) + " exceeds the plan's " +
                             std::to_string(cfg.plan.stages.size()) + " stages");
        train::run_stage(cfg.plan, static_cast<std::size_t>(stage - 1), cfg.model, train_set, cfg.train, log, resume);
    } else {
        train::run_stages(cfg.plan, cfg.model, train_set, cfg.train, log, first, resume);
    }
    log.flush();
    return kOk;
}

int cmd_eval(const std::string& config_path, const std::string& checkpoint, std::string split, const std::string& dump,
             std::string out_dir) {
    const RunConfig cfg = load_run_config(config_path);
    if (cfg.data.manifest.empty()) throw ValueError("config key data.manifest is required for evaluation");
    if (split.empty()) split = cfg.eval.split;
    if (out_dir.empty()) out_dir = cfg.eval.output_dir;
    const auto map = cfg.class_map();
    const auto set = data::Dataset::open(cfg.data.manifest, map, split);
    if (set.empty()) throw ValueError("manifest " + cfg.data.manifest + " has no samples in split '" + split + "'");
    auto net = load_model(checkpoint);

    eval::EvalOptions opts;
    opts.dump_dir = dump;
    opts.dump_format = cfg.eval.dump_format == "ids" ? eval::DumpFormat::ids : eval::DumpFormat::colour;
    opts.palette = palette_for(cfg.eval.palette, map);
    const auto report = eval::evaluate(net, set, opts);

    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create directory " + out_dir + ": " + ec.message());
    const auto base = std::filesystem::path(out_dir);
    report.write((base / "report.txt").string(), (base / "report.json").string());
    std::cout << report.text();
    return kOk;
}

int cmd_predict(const std::string& checkpoint, const std::string& rgb_path, const std::string& depth_path,
                const std::string& out, const std::string& format, const std::string& palette_file) {
    auto net = load_model(checkpoint);
    const auto& cfg = net.config();
    if (cfg.depth_branch && depth_path.empty())
        throw ValueError("checkpoint " + checkpoint + " is an RGB-D model; --depth is required");

    const io::Image rgb = io::read_png(rgb_path);
    if (rgb.channels != 3 || rgb.bit_depth != 8) throw IoError("rgb image must be 8-bit with 3 channels: " + rgb_path);
    data::Sample s;
    s.rgb = data::image_to_planes(rgb);
    s.labels = LabelMap(1, rgb.height, rgb.width, kIgnoreId);
    if (!depth_path.empty() && cfg.depth_branch) {
        const io::Image depth = io::read_png(depth_path);
        if (depth.channels != 1) throw IoError("depth image must have a single channel: " + depth_path);
        if (depth.width != rgb.width || depth.height != rgb.height)
            throw ShapeError("rgb and depth extents differ: " + rgb_path + ", " + depth_path);
        s.depth = data::image_to_planes(depth);
    } else {
        s.depth = Tensor<float>::zeros({1, rgb.height, rgb.width});
    }
    const LabelMap pred = eval::predict(net, s);
    std::vector<data::Rgb8> palette;
    if (!palette_file.empty())
        palette = eval::read_palette(palette_file);
    else if (cfg.num_classes == 19)
        palette = data::cityscapes_palette();
    io::write_png(out, format == "ids" ? data::labels_to_image(pred)
                                       : eval::colourize(pred, eval::extend_palette(palette, cfg.num_classes)));
    std::cout << "wrote " << out << " (" << pred.w << "x" << pred.h << ")\n";
    return kOk;
}

int cmd_verify(const std::string& suite) {
    verify::SuiteOptions opts;
    std::size_t passed = 0, failed = 0;
    auto report = [&](const verify::Check& c) {
        std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << ": " << c.detail << std::endl;
        (c.passed ? passed : failed) += 1;
    };
    if (suite == "gradcheck" || suite == "all") verify::gradcheck_suite(opts, report);
    if (suite == "oracle" || suite == "all") verify::oracle_suite(opts, report);
    if (suite == "shapes" || suite == "all") verify::shapes_suite(opts, report);
    std::cout << passed << " passed, " << failed << " failed\n";
    return failed ? kInternalError : kOk;
}

}  // namespace

int main(int argc, char** argv) {
    segnet::configure_threads();
    CLI::App app{"RGB-D semantic segmentation: dilated ResNet branches, fusion block, pyramid pooling head.\n"
                 "Environment: SEGNET_THREADS caps worker threads."};
    app.require_subcommand(1);

    std::string synth_out;
    data::SynthParams synth;
    auto* s = app.add_subcommand("synth", "Generate a procedural multi-scale RGB-D dataset");
    s->add_option("--out", synth_out, "Output directory")->required();
    s->add_option("--count", synth.count, "Number of scenes")->capture_default_str();
    s->add_option("--size", synth.image_size, "Square image side in pixels (>= 32)")->capture_default_str();
    s->add_option("--classes", synth.num_classes, "Class count K including background")->capture_default_str();
    s->add_option("--seed", synth.seed, "Root seed")->capture_default_str();
    s->add_option("--val-fraction", synth.val_fraction, "Fraction of scenes in the val split")->capture_default_str();

    std::string config, resume, checkpoint, split, dump, eval_out;
    int stage = 0;
    auto* t = app.add_subcommand("train",
                                 "Run the staged training protocol (rgb, depth, fusion). Defaults: base lr 5e-5, "
                                 "momentum 0.9, weight decay 0.0005, poly power 0.9, crop 720, scale [0.5,2.0], "
                                 "200 epochs per stage, schedule event at epoch 140");
    t->add_option("--config", config, "JSON run configuration")->required()->check(CLI::ExistingFile);
    t->add_option("--stage", stage, "Run only this stage (1-based); 0 runs the whole plan")->capture_default_str();
    t->add_option("--resume", resume, "Continue from a training checkpoint")->check(CLI::ExistingFile);

    auto* e = app.add_subcommand("eval", "Per-class and mean IoU of a checkpoint on a manifest split");
    e->add_option("--config", config, "JSON run configuration")->required()->check(CLI::ExistingFile);
    e->add_option("--checkpoint", checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
    e->add_option("--split", split, "Manifest split (default: eval.split from the config, \"val\")");
    e->add_option("--dump-predictions", dump, "Write one prediction image per sample here");
    e->add_option("--out", eval_out, "Report directory (default: eval.output_dir, \"eval\")");

    std::string rgb, depth, pred_out, format = "colour", palette;
    auto* p = app.add_subcommand("predict", "Segment one image");
    p->add_option("--checkpoint", checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
    p->add_option("--rgb", rgb, "8-bit RGB PNG")->required();
    p->add_option("--depth", depth, "8/16-bit single-channel depth PNG (required by RGB-D models)");
    p->add_option("--out", pred_out, "Output PNG")->required();
    p->add_option("--format", format, "colour (palette RGB) or ids (8-bit class ids)")
        ->check(CLI::IsMember({"colour", "ids"}))
        ->capture_default_str();
    p->add_option("--palette", palette, "Palette file of \"R G B\" lines");

    std::string suite = "all";
    auto* v = app.add_subcommand("verify", "Run self-check suites; exit status is nonzero if any check fails");
    v->add_option("--suite", suite, "gradcheck, oracle, shapes or all")
        ->check(CLI::IsMember({"gradcheck", "oracle", "shapes", "all"}))
        ->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? kOk : kUserError;
    }

    try {
        if (*s) return cmd_synth(synth_out, synth);
        if (*t) return cmd_train(config, stage, resume);
        if (*e) return cmd_eval(config, checkpoint, split, dump, eval_out);
        if (*p) return cmd_predict(checkpoint, rgb, depth, pred_out, format, palette);
        if (*v) return cmd_verify(suite);
    } catch (const segnet::ValueError& err) {
        std::cerr << "error: " << err.what() << '\n';
        return kUserError;
    } catch (const segnet::IoError& err) {
        std::cerr << "error: " << err.what() << '\n';
        return kUserError;
    } catch (const segnet::ShapeError& err) {
        std::cerr << "error: " << err.what() << '\n';
        return kUserError;
    } catch (const std::exception& err) {
        std::cerr << "internal error: " << err.what() << '\n';
        return kInternalError;
    }
    return kInternalError;
}
