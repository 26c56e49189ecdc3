#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "segnet/error.hpp"
#include "segnet/labels.hpp"

namespace segnet::eval {

/// counts(g, p): pixels with ground truth g predicted as p. Ignored pixels
/// are never counted.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(std::size_t k = 0) : k_(k), counts_(k * k, 0) {}

    std::size_t k() const { return k_; }
    std::uint64_t operator()(std::size_t g, std::size_t p) const { return counts_[g * k_ + p]; }
    std::uint64_t& operator()(std::size_t g, std::size_t p) { return counts_[g * k_ + p]; }
    const std::vector<std::uint64_t>& counts() const { return counts_; }

    std::uint64_t total() const {
        std::uint64_t t = 0;
        for (auto c : counts_) t += c;
        return t;
    }

    void accumulate(const LabelMap& gt, const LabelMap& pred, std::uint8_t ignore_id = kIgnoreId) {
        if (!gt.same_extent(pred)) throw ShapeError("confusion matrix: ground truth and prediction extents differ");
        for (std::size_t i = 0; i < gt.ids.size(); ++i) {
            const std::uint8_t g = gt.ids[i], p = pred.ids[i];
            if (g == ignore_id) continue;
            if (g >= k_) throw ValueError("confusion matrix: ground-truth id " + std::to_string(g) + " out of range");
            if (p >= k_) throw ValueError("confusion matrix: predicted id " + std::to_string(p) + " out of range");
            ++counts_[g * k_ + p];
        }
    }

    void merge(const ConfusionMatrix& other) {
        if (other.k_ != k_) throw ShapeError("confusion matrix: cannot merge different class counts");
        for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
    }

    friend ConfusionMatrix operator+(ConfusionMatrix a, const ConfusionMatrix& b) {
        a.merge(b);
        return a;
    }

    std::optional<double> pixel_accuracy() const {
        const std::uint64_t t = total();
        if (t == 0) return std::nullopt;
        std::uint64_t diag = 0;
        for (std::size_t c = 0; c < k_; ++c) diag += (*this)(c, c);
        return static_cast<double>(diag) / static_cast<double>(t);
    }

    bool operator==(const ConfusionMatrix&) const = default;

private:
    std::size_t k_;
    std::vector<std::uint64_t> counts_;
};

struct IouResult {
    std::vector<std::optional<double>> per_class;  // nullopt: class never occurs
    std::optional<double> mean;                     // over classes that occur
    std::size_t evaluated = 0;
};

/// IoU_c = TP / (TP + FP + FN); classes with a zero denominator are left
/// out of the mean.
inline IouResult iou(const ConfusionMatrix& cm) {
    IouResult r;
    r.per_class.resize(cm.k());
    double sum = 0;
    for (std::size_t c = 0; c < cm.k(); ++c) {
        const std::uint64_t tp = cm(c, c);
        std::uint64_t fp = 0, fn = 0;
        for (std::size_t o = 0; o < cm.k(); ++o) {
            if (o == c) continue;
            fp += cm(o, c);
            fn += cm(c, o);
        }
        const std::uint64_t denom = tp + fp + fn;
        if (denom == 0) continue;
        r.per_class[c] = static_cast<double>(tp) / static_cast<double>(denom);
        sum += *r.per_class[c];
        ++r.evaluated;
    }
    if (r.evaluated) r.mean = sum / static_cast<double>(r.evaluated);
    return r;
}

}  // namespace segnet::eval
