#pragma once

// Dual-branch dilated-residual segmentation network.
//
//   rgb   -> Backbone(3) --\                        /-> 1x1 ..................\
//                          Fusion (1x1 reduce, sum|concat) -> 3x3 r=2,4,8,16 -> sum -> concat -> 1x1 logits -> bilinear x os
//   depth -> Backbone(1) --/                        \-> GAP -> 1x1 -> broadcast /
//
// With a single input branch the top feature map goes straight to the head.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "segnet/checkpoint.hpp"
#include "segnet/model/config.hpp"
#include "segnet/model/layers.hpp"

namespace segnet::model {

template <typename T>
class Bottleneck {
public:
    Bottleneck() = default;
    Bottleneck(const BottleneckLayout& L, const ModelConfig& cfg, const std::string& name, std::uint64_t seed)
        : name_(name) {
        const double m = cfg.bn_momentum, e = cfg.bn_eps;
        conv1_ = ConvUnit<T>(L.conv1, true, true, name + ".conv1", seed, m, e);
        conv2_ = ConvUnit<T>(L.conv2, true, true, name + ".conv2", seed, m, e);
        conv3_ = ConvUnit<T>(L.conv3, true, false, name + ".conv3", seed, m, e);
        if (L.has_projection) projection_ = ConvUnit<T>(L.projection, true, false, name + ".proj", seed, m, e);
    }

    Tensor<T> forward(const Tensor<T>& x) {
        Tensor<T> y = conv3_.forward(conv2_.forward(conv1_.forward(x)));
        Tensor<T> shortcut = projection_ ? projection_->forward(x) : x;
        return nn::relu(add(y, shortcut));
    }

    void visit(const ParamSink<T>& sink) const {
        conv1_.visit(name_ + ".conv1", name_ + ".bn1", sink);
        conv2_.visit(name_ + ".conv2", name_ + ".bn2", sink);
        conv3_.visit(name_ + ".conv3", name_ + ".bn3", sink);
        if (projection_) projection_->visit(name_ + ".proj", name_ + ".proj_bn", sink);
    }

    void set_bn_mode(nn::BnMode mode) {
        for (auto* u : {&conv1_, &conv2_, &conv3_}) u->set_bn_mode(mode);
        if (projection_) projection_->set_bn_mode(mode);
    }

    const ConvUnit<T>& conv2() const { return conv2_; }

private:
    std::string name_;
    ConvUnit<T> conv1_, conv2_, conv3_;
    std::optional<ConvUnit<T>> projection_;
};

template <typename T>
class Backbone {
public:
    Backbone() = default;
    Backbone(const ModelConfig& cfg, std::size_t in_channels, const std::string& name, std::uint64_t seed)
        : name_(name), layout_(backbone_layout(cfg, in_channels)) {
        for (std::size_t i = 0; i < 3; ++i)
            stem_[i] = ConvUnit<T>(layout_.stem[i], true, true, stem_conv_name(i), seed, cfg.bn_momentum, cfg.bn_eps);
        for (std::size_t s = 0; s < 4; ++s)
            for (std::size_t b = 0; b < layout_.stages[s].size(); ++b)
                stages_[s].emplace_back(layout_.stages[s][b], cfg,
                                        name_ + ".res" + std::to_string(s + 2) + "." + std::to_string(b), seed);
    }

    Tensor<T> forward(const Tensor<T>& x) {
        Tensor<T> y = x;
        for (auto& u : stem_) y = u.forward(y);
        y = nn::max_pool2d(y, layout_.pool_kernel, layout_.pool_stride, layout_.pool_padding);
        for (auto& stage : stages_)
            for (auto& blk : stage) y = blk.forward(y);
        return y;
    }

    void visit(const ParamSink<T>& sink) const {
        for (std::size_t i = 0; i < 3; ++i)
            stem_[i].visit(stem_conv_name(i), name_ + ".stem.bn" + std::to_string(i + 1), sink);
        for (const auto& stage : stages_)
            for (const auto& blk : stage) blk.visit(sink);
    }

    void set_bn_mode(nn::BnMode mode) {
        for (auto& u : stem_) u.set_bn_mode(mode);
        for (auto& stage : stages_)
            for (auto& blk : stage) blk.set_bn_mode(mode);
    }

    std::size_t out_channels() const { return layout_.out_channels; }
    const BackboneLayout& layout() const { return layout_; }
    const std::vector<Bottleneck<T>>& stage(std::size_t s) const { return stages_.at(s); }

private:
    std::string stem_conv_name(std::size_t i) const { return name_ + ".stem.conv" + std::to_string(i + 1); }

    std::string name_;
    BackboneLayout layout_;
    std::array<ConvUnit<T>, 3> stem_;
    std::array<std::vector<Bottleneck<T>>, 4> stages_;
};

/// Per-branch 1x1 reduction (conv + BN + ReLU), then sum or channel concat.
template <typename T>
class FusionBlock {
public:
    FusionBlock() = default;
    FusionBlock(const ModelConfig& cfg, std::uint64_t seed) : mode_(cfg.fusion_mode) {
        const auto spec = fusion_reduction(cfg);
        rgb_ = ConvUnit<T>(spec, true, true, "fusion.rgb.conv", seed, cfg.bn_momentum, cfg.bn_eps);
        depth_ = ConvUnit<T>(spec, true, true, "fusion.depth.conv", seed, cfg.bn_momentum, cfg.bn_eps);
    }

    Tensor<T> forward(const Tensor<T>& rgb, const Tensor<T>& depth) {
        if (rgb.shape() != depth.shape())
            throw ShapeError("fuse: branch feature shapes differ: " + to_string(rgb.shape()) + " vs " +
                             to_string(depth.shape()));
        last_rgb_ = rgb_.forward(rgb);
        last_depth_ = depth_.forward(depth);
        return mode_ == FusionMode::sum ? add(last_rgb_, last_depth_) : concat_channels(last_rgb_, last_depth_);
    }

    void visit(const ParamSink<T>& sink) const {
        rgb_.visit("fusion.rgb.conv", "fusion.rgb.bn", sink);
        depth_.visit("fusion.depth.conv", "fusion.depth.bn", sink);
    }

    void set_bn_mode(nn::BnMode mode) {
        rgb_.set_bn_mode(mode);
        depth_.set_bn_mode(mode);
    }

    FusionMode mode() const { return mode_; }
    /// Reduced maps of the most recent forward pass.
    const Tensor<T>& last_rgb() const { return last_rgb_; }
    const Tensor<T>& last_depth() const { return last_depth_; }

private:
    FusionMode mode_ = FusionMode::concat;
    ConvUnit<T> rgb_, depth_;
    Tensor<T> last_rgb_, last_depth_;
};

/// Parallel dilated branches (summed), optional global-average-pooling
/// context (concatenated), 1x1 logits conv, bilinear upsampling.
template <typename T>
class PyramidHead {
public:
    struct Outputs {
        Tensor<T> pyramid_sum;
        Tensor<T> context;  // undefined without global context
        Tensor<T> logits;   // at feature resolution
    };

    PyramidHead() = default;
    PyramidHead(const ModelConfig& cfg, std::uint64_t seed) : layout_(head_layout(cfg)) {
        const double m = cfg.bn_momentum, e = cfg.bn_eps;
        for (std::size_t i = 0; i < layout_.branches.size(); ++i)
            branches_.emplace_back(layout_.branches[i], true, true, branch_name(i) + ".conv", seed, m, e);
        if (layout_.global_context) gap_ = ConvUnit<T>(layout_.gap_conv, false, true, "head.gap.conv", seed, m, e);
        logits_ = ConvUnit<T>(layout_.logits, false, false, "head.logits", seed, m, e);
    }

    Outputs forward(const Tensor<T>& x) {
        Outputs out;
        for (auto& b : branches_) {
            Tensor<T> y = b.forward(x);
            out.pyramid_sum = out.pyramid_sum.defined() ? add(out.pyramid_sum, y) : y;
        }
        Tensor<T> merged = out.pyramid_sum;
        if (gap_) {
            Tensor<T> ctx = gap_->forward(nn::global_avg_pool(x));
            out.context = nn::bilinear_upsample(ctx, x.dim(2), x.dim(3));
            merged = concat_channels(merged, out.context);
        }
        out.logits = logits_.forward(merged);
        return out;
    }

    void visit(const ParamSink<T>& sink) const {
        for (std::size_t i = 0; i < branches_.size(); ++i)
            branches_[i].visit(branch_name(i) + ".conv", branch_name(i) + ".bn", sink);
        if (gap_) gap_->visit("head.gap.conv", "head.gap.bn", sink);
        logits_.visit("head.logits", "head.logits.bn", sink);
    }

    void set_bn_mode(nn::BnMode mode) {
        for (auto& b : branches_) b.set_bn_mode(mode);
    }

    const std::vector<ConvUnit<T>>& branches() const { return branches_; }
    bool has_global_context() const { return gap_.has_value(); }

private:
    static std::string branch_name(std::size_t i) { return "head.branch" + std::to_string(i); }

    HeadLayout layout_;
    std::vector<ConvUnit<T>> branches_;
    std::optional<ConvUnit<T>> gap_;
    ConvUnit<T> logits_;
};

struct LoadOptions {
    bool strict = true;
    /// Only model paths and entries under one of these prefixes take part;
    /// empty means all.
    std::vector<std::string> prefixes;
    /// Entries under these prefixes are never considered (optimizer state,
    /// architecture metadata).
    std::vector<std::string> skip_prefixes{"optim.", "meta."};
};

struct LoadReport {
    std::vector<std::string> loaded;
    std::vector<std::string> missing;     // in model, absent from checkpoint
    std::vector<std::string> unexpected;  // in checkpoint, absent from model
    std::vector<std::string> mismatched;  // shape differs
    bool clean() const { return missing.empty() && unexpected.empty() && mismatched.empty(); }
};

inline bool has_any_prefix(const std::string& path, const std::vector<std::string>& prefixes) {
    return std::any_of(prefixes.begin(), prefixes.end(),
                       [&](const std::string& p) { return path.compare(0, p.size(), p) == 0; });
}

/// Depth stem initialization: mean over the RGB input-channel axis,
/// [C,3,k,k] -> [C,1,k,k].
template <typename T>
Tensor<T> init_depth_stem_from_rgb(const Tensor<T>& rgb_weights) {
    if (rgb_weights.rank() != 4 || rgb_weights.dim(1) != 3)
        throw ShapeError("init_depth_stem_from_rgb: expected [C,3,k,k], got " + to_string(rgb_weights.shape()));
    const std::size_t c = rgb_weights.dim(0), kh = rgb_weights.dim(2), kw = rgb_weights.dim(3);
    std::vector<T> v(c * kh * kw);
    for (std::size_t o = 0; o < c; ++o)
        for (std::size_t l = 0; l < kh; ++l)
            for (std::size_t m = 0; m < kw; ++m)
                v[(o * kh + l) * kw + m] =
                    (rgb_weights.at(o, 0, l, m) + rgb_weights.at(o, 1, l, m) + rgb_weights.at(o, 2, l, m)) / T(3);
    return Tensor<T>({c, 1, kh, kw}, std::move(v));
}

/// Renames every "rgb." entry to "depth.", averaging the first stem conv
/// over its input channels; other entries are dropped.
inline Checkpoint rgb_entries_as_depth(const Checkpoint& ck) {
    Checkpoint out;
    for (const auto& [path, e] : ck.entries()) {
        if (path.rfind("rgb.", 0) != 0) continue;
        const std::string target = "depth." + path.substr(4);
        if (path == "rgb.stem.conv1.weight") {
            auto averaged = init_depth_stem_from_rgb(Tensor<float>(e.shape, e.values));
            out.put(target, averaged);
        } else {
            out.put(target, e.shape, e.values);
        }
    }
    return out;
}

template <typename T = float>
class SegNet {
public:
    struct Outputs {
        Tensor<T> logits;  // [N,K,H,W]
        Tensor<T> rgb_top, depth_top;
        Tensor<T> fused;  // pyramid-head input
        Tensor<T> pyramid_sum;
        Tensor<T> context;
        std::size_t padded_h = 0, padded_w = 0;
    };

    explicit SegNet(ModelConfig cfg, std::uint64_t seed = 0) : cfg_(std::move(cfg)) {
        cfg_.validate();
        if (cfg_.rgb_branch) rgb_.emplace(cfg_, 3, "rgb", seed);
        if (cfg_.depth_branch) depth_.emplace(cfg_, 1, "depth", seed);
        if (cfg_.fused()) fusion_.emplace(cfg_, seed);
        head_ = PyramidHead<T>(cfg_, seed);
    }

    const ModelConfig& config() const { return cfg_; }

    Outputs forward_all(const Tensor<T>& rgb, const Tensor<T>& depth = {}) {
        const Tensor<T>& ref = cfg_.rgb_branch ? rgb : depth;
        if (cfg_.rgb_branch && (!rgb.defined() || rgb.rank() != 4 || rgb.dim(1) != 3))
            throw ShapeError("forward: RGB input must be [N,3,H,W]");
        if (cfg_.depth_branch && !depth.defined())
            throw ValueError("forward: this model has a depth branch and needs a depth image");
        if (!cfg_.depth_branch && depth.defined())
            throw ValueError("forward: depth supplied to a model without a depth branch");
        if (depth.defined()) {
            if (depth.rank() != 4 || depth.dim(1) != 1) throw ShapeError("forward: depth input must be [N,1,H,W]");
            if (cfg_.rgb_branch && (depth.dim(0) != rgb.dim(0) || depth.dim(2) != rgb.dim(2) || depth.dim(3) != rgb.dim(3)))
                throw ShapeError("forward: RGB and depth extents differ");
        }
        const std::size_t h = ref.dim(2), w = ref.dim(3), os = cfg_.output_stride;
        Outputs out;
        out.padded_h = round_up(h, os);
        out.padded_w = round_up(w, os);
        auto pad = [&](const Tensor<T>& x) { return nn::pad_reflect(x, 0, out.padded_h - h, 0, out.padded_w - w); };

        if (rgb_) out.rgb_top = rgb_->forward(pad(rgb));
        if (depth_) out.depth_top = depth_->forward(pad(depth));
        if (fusion_)
            out.fused = fusion_->forward(out.rgb_top, out.depth_top);
        else
            out.fused = rgb_ ? out.rgb_top : out.depth_top;
        auto head = head_.forward(out.fused);
        out.pyramid_sum = head.pyramid_sum;
        out.context = head.context;
        Tensor<T> full = nn::bilinear_upsample(head.logits, head.logits.dim(2) * os, head.logits.dim(3) * os);
        out.logits = nn::crop(full, 0, 0, h, w);
        return out;
    }

    Tensor<T> forward(const Tensor<T>& rgb, const Tensor<T>& depth = {}) { return forward_all(rgb, depth).logits; }

    /// Every parameter and normalization statistic, in a stable order.
    std::vector<NamedParam<T>> parameters() const {
        std::vector<NamedParam<T>> out;
        ParamSink<T> sink = [&](NamedParam<T> p) { out.push_back(std::move(p)); };
        if (rgb_) rgb_->visit(sink);
        if (depth_) depth_->visit(sink);
        if (fusion_) fusion_->visit(sink);
        head_.visit(sink);
        return out;
    }

    std::vector<NamedParam<T>> learnable_parameters() const {
        auto all = parameters();
        std::erase_if(all, [](const NamedParam<T>& p) { return !p.learnable(); });
        return all;
    }

    std::optional<NamedParam<T>> find(const std::string& path) const {
        for (auto& p : parameters())
            if (p.path == path) return p;
        return std::nullopt;
    }

    void set_bn_mode(nn::BnMode mode) {
        for (const char* g : {"rgb", "depth", "fusion", "head"}) set_bn_mode(g, mode);
    }

    /// Mode for one group: rgb, depth, fusion or head.
    void set_bn_mode(const std::string& group, nn::BnMode mode) {
        if (group == "rgb" && rgb_) rgb_->set_bn_mode(mode);
        if (group == "depth" && depth_) depth_->set_bn_mode(mode);
        if (group == "fusion" && fusion_) fusion_->set_bn_mode(mode);
        if (group == "head") head_.set_bn_mode(mode);
    }

    /// Marks learnables of a group as (un)tracked by the tape.
    void set_trainable(const std::string& group, bool on) {
        for (auto& p : parameters())
            if (p.learnable() && p.group() == group) p.tensor.set_requires_grad(on);
    }

    void set_trainable(bool on) {
        for (auto& p : learnable_parameters()) p.tensor.set_requires_grad(on);
    }

    /// Copies the RGB backbone into the depth backbone; the first conv is
    /// averaged over its colour channels.
    void init_depth_from_rgb() {
        if (!rgb_ || !depth_) throw ValueError("init_depth_from_rgb needs both branches");
        load_state_dict(rgb_entries_as_depth(state_dict()), {.strict = false, .prefixes = {"depth."}});
    }

    Checkpoint state_dict() const {
        Checkpoint ck;
        for (const auto& p : parameters()) ck.put(p.path, p.tensor);
        return ck;
    }

    LoadReport load_state_dict(const Checkpoint& ck, const LoadOptions& opts = {}) {
        LoadReport report;
        auto selected = [&](const std::string& path) {
            if (has_any_prefix(path, opts.skip_prefixes)) return false;
            return opts.prefixes.empty() || has_any_prefix(path, opts.prefixes);
        };
        std::set<std::string> seen;
        auto params = parameters();
        for (auto& p : params) {
            if (!selected(p.path)) continue;
            seen.insert(p.path);
            if (!ck.contains(p.path)) {
                report.missing.push_back(p.path);
                continue;
            }
            const auto& e = ck.at(p.path);
            if (e.shape != p.tensor.shape()) {
                report.mismatched.push_back(p.path + " (checkpoint " + to_string(e.shape) + ", model " +
                                            to_string(p.tensor.shape()) + ")");
                continue;
            }
        }
        for (const auto& [path, e] : ck.entries())
            if (selected(path) && !seen.count(path)) report.unexpected.push_back(path);

        if (opts.strict && !report.clean()) {
            std::string msg = "strict checkpoint load failed:";
            for (const auto& m : report.missing) msg += " missing " + m + ";";
            for (const auto& m : report.unexpected) msg += " unexpected " + m + ";";
            for (const auto& m : report.mismatched) msg += " shape mismatch " + m + ";";
            throw ValueError(msg);
        }
        for (auto& p : params) {
            if (!selected(p.path) || !ck.contains(p.path)) continue;
            const auto& e = ck.at(p.path);
            if (e.shape != p.tensor.shape()) continue;
            auto dst = p.tensor.mutable_data();
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(e.values[i]);
            report.loaded.push_back(p.path);
        }
        return report;
    }

    void save(const std::string& file) const { state_dict().save(file); }

    LoadReport load(const std::string& file, bool strict = true) {
        return load_state_dict(Checkpoint::load(file), {.strict = strict});
    }

    const PyramidHead<T>& head() const { return head_; }
    const Backbone<T>* rgb_backbone() const { return rgb_ ? &*rgb_ : nullptr; }
    const Backbone<T>* depth_backbone() const { return depth_ ? &*depth_ : nullptr; }
    const FusionBlock<T>* fusion() const { return fusion_ ? &*fusion_ : nullptr; }

private:
    ModelConfig cfg_;
    std::optional<Backbone<T>> rgb_, depth_;
    std::optional<FusionBlock<T>> fusion_;
    PyramidHead<T> head_;
};

}  // namespace segnet::model
