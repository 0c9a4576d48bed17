// Test-only reference implementations, kept deliberately naive and
// independent of the library's fast paths.
#pragma once

#include <cmath>
#include <vector>

#include "wid/image.hpp"

namespace oracle {

// Dense 2-D Gaussian convolution built from an explicit outer-product kernel,
// reflected borders. No separable shortcut.
inline wid::FloatImage gaussian_blur_2d(const wid::FloatImage& src, double sigma) {
    const std::vector<double> taps = wid::gaussian_kernel(sigma);
    const int radius = static_cast<int>(taps.size() / 2);
    wid::FloatImage out(src.width, src.height);
    for (int y = 0; y < src.height; ++y) {
        for (int x = 0; x < src.width; ++x) {
            double acc = 0.0;
            for (int ky = -radius; ky <= radius; ++ky) {
                for (int kx = -radius; kx <= radius; ++kx) {
                    const double w = taps[static_cast<std::size_t>(ky + radius)] *
                                     taps[static_cast<std::size_t>(kx + radius)];
                    acc += w * src.at(wid::reflect_index(x + kx, src.width),
                                      wid::reflect_index(y + ky, src.height));
                }
            }
            out.at(x, y) = acc;
        }
    }
    return out;
}

// 8-connected components over a boolean mask; returns per-pixel labels and
// the component count.
inline int connected_components(const wid::BinaryImage& mask, std::vector<int>& labels) {
    const int w = mask.width, h = mask.height;
    labels.assign(static_cast<std::size_t>(w) * h, -1);
    int count = 0;
    std::vector<std::pair<int, int>> stack;
    for (int sy = 0; sy < h; ++sy) {
        for (int sx = 0; sx < w; ++sx) {
            if (!mask.at(sx, sy) || labels[static_cast<std::size_t>(sy) * w + sx] >= 0) continue;
            const int id = count++;
            stack.assign(1, {sx, sy});
            labels[static_cast<std::size_t>(sy) * w + sx] = id;
            while (!stack.empty()) {
                auto [cx, cy] = stack.back();
                stack.pop_back();
                for (int dy = -1; dy <= 1; ++dy) {
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int nx = cx + dx, ny = cy + dy;
                        if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
                        auto& l = labels[static_cast<std::size_t>(ny) * w + nx];
                        if (mask.at(nx, ny) && l < 0) {
                            l = id;
                            stack.emplace_back(nx, ny);
                        }
                    }
                }
            }
        }
    }
    return count;
}

struct Box {
    int x0 = INT32_MAX, y0 = INT32_MAX, x1 = -1, y1 = -1;
    void grow(int x, int y) {
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x);
        y1 = std::max(y1, y);
    }
    bool valid() const { return x1 >= 0; }
};

inline Box ink_bbox(const wid::BinaryImage& mask) {
    Box b;
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x)
            if (mask.at(x, y)) b.grow(x, y);
    return b;
}

} // namespace oracle
