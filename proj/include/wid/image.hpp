#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "wid/common.hpp"

namespace wid {

// 8-bit grayscale raster, row-major. 0 = black ink, 255 = white background.
struct GrayImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;

    GrayImage() = default;
    GrayImage(int w, int h, std::uint8_t fill = 255)
        : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {
        if (w < 1 || h < 1) throw DimensionError("GrayImage: dimensions must be >= 1");
    }

    std::uint8_t at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
    bool in_bounds(int x, int y) const { return x >= 0 && x < width && y >= 0 && y < height; }
};

// 24-bit color raster, interleaved RGB.
struct RgbImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> rgb;

    RgbImage() = default;
    RgbImage(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, 255) {
        if (w < 1 || h < 1) throw DimensionError("RgbImage: dimensions must be >= 1");
    }
};

// Boolean ink mask, true = ink.
struct BinaryImage {
    int width = 0;
    int height = 0;
    std::vector<bool> mask;

    BinaryImage() = default;
    BinaryImage(int w, int h, bool fill = false)
        : width(w), height(h), mask(static_cast<std::size_t>(w) * h, fill) {
        if (w < 1 || h < 1) throw DimensionError("BinaryImage: dimensions must be >= 1");
    }

    bool at(int x, int y) const { return mask[static_cast<std::size_t>(y) * width + x]; }
    void set(int x, int y, bool v) { mask[static_cast<std::size_t>(y) * width + x] = v; }
};

// Float64 workspace raster used by blurs and the DoG pyramid.
struct FloatImage {
    int width = 0;
    int height = 0;
    std::vector<double> data;

    FloatImage() = default;
    FloatImage(int w, int h, double fill = 0.0)
        : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

    double at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
    double& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
};

inline FloatImage to_float(const GrayImage& g, double scale = 1.0) {
    FloatImage f(g.width, g.height);
    for (std::size_t i = 0; i < g.pixels.size(); ++i) f.data[i] = g.pixels[i] * scale;
    return f;
}

inline std::uint8_t clamp_u8(double v) {
    return static_cast<std::uint8_t>(std::min(255.0, std::max(0.0, v)));
}

// Normalized 1-D Gaussian taps, radius ceil(3*sigma).
inline std::vector<double> gaussian_kernel(double sigma) {
    if (sigma <= 0.0) throw ParameterError("gaussian_kernel: sigma must be > 0");
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double v = std::exp(-(static_cast<double>(i) * i) / (2.0 * sigma * sigma));
        k[static_cast<std::size_t>(i + radius)] = v;
        sum += v;
    }
    for (double& v : k) v /= sum;
    return k;
}

inline int reflect_index(int i, int n) {
    // reflect-101-style without repeating the edge sample twice: ... 2 1 0 1 2 ...
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    i = ((i % period) + period) % period;
    return i < n ? i : period - i;
}

// Separable Gaussian blur with reflected borders, double accumulation.
inline FloatImage gaussian_blur(const FloatImage& src, double sigma) {
    const std::vector<double> k = gaussian_kernel(sigma);
    const int radius = static_cast<int>(k.size() / 2);
    const int w = src.width, h = src.height;
    FloatImage tmp(w, h), out(w, h);
    for (int y = 0; y < h; ++y) {
        const double* row = &src.data[static_cast<std::size_t>(y) * w];
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int t = -radius; t <= radius; ++t)
                acc += k[static_cast<std::size_t>(t + radius)] * row[reflect_index(x + t, w)];
            tmp.at(x, y) = acc;
        }
    }
    for (int x = 0; x < w; ++x) {
        for (int y = 0; y < h; ++y) {
            double acc = 0.0;
            for (int t = -radius; t <= radius; ++t)
                acc += k[static_cast<std::size_t>(t + radius)] * tmp.at(x, reflect_index(y + t, h));
            out.at(x, y) = acc;
        }
    }
    return out;
}

// Bilinear resample to (out_w, out_h); exact copy when dimensions already match.
inline GrayImage bilinear_resize(const GrayImage& src, int out_w, int out_h) {
    if (out_w < 1 || out_h < 1) throw DimensionError("bilinear_resize: target must be >= 1x1");
    if (out_w == src.width && out_h == src.height) return src;
    GrayImage out(out_w, out_h);
    const double sx = static_cast<double>(src.width) / out_w;
    const double sy = static_cast<double>(src.height) / out_h;
    for (int y = 0; y < out_h; ++y) {
        const double fy = std::max(0.0, (y + 0.5) * sy - 0.5);
        int y0 = static_cast<int>(fy);
        const double wy = fy - y0;
        int y1 = std::min(y0 + 1, src.height - 1);
        y0 = std::min(y0, src.height - 1);
        for (int x = 0; x < out_w; ++x) {
            const double fx = std::max(0.0, (x + 0.5) * sx - 0.5);
            int x0 = static_cast<int>(fx);
            const double wx = fx - x0;
            int x1 = std::min(x0 + 1, src.width - 1);
            x0 = std::min(x0, src.width - 1);
            const double top = (1.0 - wx) * src.at(x0, y0) + wx * src.at(x1, y0);
            const double bot = (1.0 - wx) * src.at(x0, y1) + wx * src.at(x1, y1);
            out.at(x, y) = clamp_u8(std::floor((1.0 - wy) * top + wy * bot + 0.5));
        }
    }
    return out;
}

inline GrayImage crop(const GrayImage& src, int x, int y, int w, int h) {
    if (w < 1 || h < 1 || x < 0 || y < 0 || x + w > src.width || y + h > src.height)
        throw DimensionError("crop: window outside image");
    GrayImage out(w, h);
    for (int r = 0; r < h; ++r)
        std::copy_n(&src.pixels[static_cast<std::size_t>(y + r) * src.width + x], w,
                    &out.pixels[static_cast<std::size_t>(r) * w]);
    return out;
}

} // namespace wid
