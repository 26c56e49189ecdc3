#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "segnet/error.hpp"

namespace segnet {

/// Pixel id excluded from loss and metrics.
inline constexpr std::uint8_t kIgnoreId = 255;

/// Integer class map of extent [n, h, w], row-major.
struct LabelMap {
    std::size_t n = 1;
    std::size_t h = 0;
    std::size_t w = 0;
    std::vector<std::uint8_t> ids;

    LabelMap() = default;
    LabelMap(std::size_t n_, std::size_t h_, std::size_t w_, std::uint8_t fill = 0)
        : n(n_), h(h_), w(w_), ids(n_ * h_ * w_, fill) {}
    LabelMap(std::size_t n_, std::size_t h_, std::size_t w_, std::vector<std::uint8_t> values)
        : n(n_), h(h_), w(w_), ids(std::move(values)) {
        if (ids.size() != n * h * w) throw ShapeError("label map value count does not match extents");
    }

    std::size_t size() const { return ids.size(); }
    std::uint8_t& operator()(std::size_t b, std::size_t y, std::size_t x) { return ids[(b * h + y) * w + x]; }
    std::uint8_t operator()(std::size_t b, std::size_t y, std::size_t x) const { return ids[(b * h + y) * w + x]; }
    bool same_extent(const LabelMap& o) const { return n == o.n && h == o.h && w == o.w; }
    bool operator==(const LabelMap&) const = default;
};

}  // namespace segnet
