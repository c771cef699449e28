#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <vector>

#include "uslam/core/errors.hpp"

namespace uslam {

/// Dense row-major H x W x C grid. Used for images, depth maps, feature maps
/// and anything else living on a pixel lattice.
template <typename T>
struct Grid {
    int h = 0, w = 0, c = 1;
    std::vector<T> data;

    Grid() = default;
    Grid(int h_, int w_, int c_ = 1, T fill = T(0))
        : h(h_), w(w_), c(c_), data(static_cast<size_t>(h_) * w_ * c_, fill) {}

    T& at(int y, int x, int ch = 0) {
        return data[(static_cast<size_t>(y) * w + x) * c + ch];
    }
    const T& at(int y, int x, int ch = 0) const {
        return data[(static_cast<size_t>(y) * w + x) * c + ch];
    }

    bool inside(int y, int x) const { return y >= 0 && y < h && x >= 0 && x < w; }
    size_t size() const { return data.size(); }
    bool same_shape(const Grid& o) const { return h == o.h && w == o.w && c == o.c; }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    /// Bilinear sample of channel `ch` at continuous pixel coordinates (x, y),
    /// clamped at the border.
    T sample(double x, double y, int ch = 0) const {
        x = std::clamp(x, 0.0, double(w - 1));
        y = std::clamp(y, 0.0, double(h - 1));
        int x0 = std::min(int(std::floor(x)), w - 1);
        int y0 = std::min(int(std::floor(y)), h - 1);
        int x1 = std::min(x0 + 1, w - 1);
        int y1 = std::min(y0 + 1, h - 1);
        double fx = x - x0, fy = y - y0;
        return T((1 - fy) * ((1 - fx) * at(y0, x0, ch) + fx * at(y0, x1, ch)) +
                 fy * ((1 - fx) * at(y1, x0, ch) + fx * at(y1, x1, ch)));
    }
};

using GridD = Grid<double>;
using GridF = Grid<float>;
using GridU8 = Grid<uint8_t>;

inline void require_same_shape(const GridD& a, const GridD& b, const char* what) {
    if (!a.same_shape(b)) throw DimensionMismatch(what);
}

}  // namespace uslam
