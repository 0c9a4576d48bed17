#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "wid/image.hpp"
#include "wid/image_io.hpp"

namespace wid {

struct ImagingParams {
    double sigma = 1.0;        // denoise blur
    int threshold = 180;       // ink if blurred intensity below this
    double log_sigma = 6.0;    // word smear scale
    int min_area = 30;         // minimum ink pixels per region
};

// Axis-aligned word region cut from a source image. bbox is in source pixel
// coordinates; image is the grayscale crop under it.
struct WordRegion {
    int x = 0, y = 0, w = 0, h = 0;
    GrayImage image;
};

// ITU-R 601 luma, round-half-up, clamped.
inline GrayImage to_grayscale(const RgbImage& src) {
    if (src.width < 1 || src.height < 1 || src.rgb.empty())
        throw DimensionError("to_grayscale: empty raster");
    GrayImage out(src.width, src.height);
    const std::size_t n = out.pixels.size();
    for (std::size_t i = 0; i < n; ++i) {
        const double r = src.rgb[3 * i + 0];
        const double g = src.rgb[3 * i + 1];
        const double b = src.rgb[3 * i + 2];
        out.pixels[i] = clamp_u8(std::floor(0.299 * r + 0.587 * g + 0.114 * b + 0.5));
    }
    return out;
}

inline GrayImage read_gray(const std::string& path) {
    AnyImage any = read_image(path);
    if (std::holds_alternative<GrayImage>(any)) return std::get<GrayImage>(std::move(any));
    return to_grayscale(std::get<RgbImage>(any));
}

// Gaussian-blur then threshold; ink is dark so a pixel survives when its
// blurred intensity stays below the threshold. Isolated speckles get averaged
// up past the threshold and drop out.
inline BinaryImage denoise(const GrayImage& image, double sigma, int threshold) {
    if (sigma <= 0.0) throw ParameterError("denoise: sigma must be > 0");
    const FloatImage blurred = gaussian_blur(to_float(image), sigma);
    BinaryImage out(image.width, image.height);
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x)
            out.set(x, y, blurred.at(x, y) < static_cast<double>(threshold));
    return out;
}

namespace detail {

// Laplacian of a blurred field, 5-point stencil with reflected borders.
inline FloatImage laplacian(const FloatImage& g) {
    FloatImage out(g.width, g.height);
    for (int y = 0; y < g.height; ++y) {
        for (int x = 0; x < g.width; ++x) {
            const double c = g.at(x, y);
            const double lx = g.at(reflect_index(x - 1, g.width), y) +
                              g.at(reflect_index(x + 1, g.width), y) - 2.0 * c;
            const double ly = g.at(x, reflect_index(y - 1, g.height)) +
                              g.at(x, reflect_index(y + 1, g.height)) - 2.0 * c;
            out.at(x, y) = lx + ly;
        }
    }
    return out;
}

} // namespace detail

// Words via isotropic LoG blob smearing: blur the ink indicator at log_sigma,
// keep the negative-response side of the zero crossing (blob interiors), union
// the ink itself, then take connected components. Each region is the bounding
// box of the original ink pixels inside one component; components with fewer
// than min_area ink pixels are dropped. Regions are ordered top-to-bottom then
// left-to-right by bbox origin.
//
// The crop comes from `source` when given, otherwise the mask is rendered as
// 0/255 grayscale.
inline std::vector<WordRegion> segment_words(const BinaryImage& image, double log_sigma,
                                             int min_area, const GrayImage* source = nullptr) {
    if (log_sigma <= 0.0) throw ParameterError("segment_words: log_sigma must be > 0");
    if (source && (source->width != image.width || source->height != image.height))
        throw DimensionError("segment_words: source dims differ from mask");

    const int w = image.width, h = image.height;
    bool any_ink = false;
    FloatImage ink(w, h);
    for (int y = 0; y < h && !any_ink; ++y)
        for (int x = 0; x < w; ++x)
            if (image.at(x, y)) { any_ink = true; break; }
    if (!any_ink) return {};
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) ink.at(x, y) = image.at(x, y) ? 1.0 : 0.0;

    const FloatImage response = detail::laplacian(gaussian_blur(ink, log_sigma));
    std::vector<char> smear(static_cast<std::size_t>(w) * h, 0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            smear[static_cast<std::size_t>(y) * w + x] =
                (response.at(x, y) < 0.0 || image.at(x, y)) ? 1 : 0;

    // 8-connected flood fill over the smeared mask
    std::vector<int> label(static_cast<std::size_t>(w) * h, -1);
    int n_components = 0;
    std::vector<std::pair<int, int>> stack;
    for (int sy = 0; sy < h; ++sy) {
        for (int sx = 0; sx < w; ++sx) {
            const std::size_t si = static_cast<std::size_t>(sy) * w + sx;
            if (!smear[si] || label[si] >= 0) continue;
            const int id = n_components++;
            label[si] = id;
            stack.clear();
            stack.emplace_back(sx, sy);
            while (!stack.empty()) {
                auto [cx, cy] = stack.back();
                stack.pop_back();
                for (int dy = -1; dy <= 1; ++dy) {
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int nx = cx + dx, ny = cy + dy;
                        if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
                        const std::size_t ni = static_cast<std::size_t>(ny) * w + nx;
                        if (smear[ni] && label[ni] < 0) {
                            label[ni] = id;
                            stack.emplace_back(nx, ny);
                        }
                    }
                }
            }
        }
    }

    struct Extent {
        int x0 = INT32_MAX, y0 = INT32_MAX, x1 = -1, y1 = -1;
        int ink_count = 0;
    };
    std::vector<Extent> extents(static_cast<std::size_t>(n_components));
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (!image.at(x, y)) continue;
            const int id = label[static_cast<std::size_t>(y) * w + x];
            Extent& e = extents[static_cast<std::size_t>(id)];
            e.x0 = std::min(e.x0, x);
            e.y0 = std::min(e.y0, y);
            e.x1 = std::max(e.x1, x);
            e.y1 = std::max(e.y1, y);
            e.ink_count++;
        }
    }

    GrayImage rendered;
    if (!source) {
        rendered = GrayImage(w, h, 255);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                if (image.at(x, y)) rendered.at(x, y) = 0;
    }
    const GrayImage& gray = source ? *source : rendered;

    std::vector<WordRegion> regions;
    for (const Extent& e : extents) {
        if (e.ink_count < min_area || e.x1 < 0) continue;
        WordRegion r;
        r.x = e.x0;
        r.y = e.y0;
        r.w = e.x1 - e.x0 + 1;
        r.h = e.y1 - e.y0 + 1;
        r.image = crop(gray, r.x, r.y, r.w, r.h);
        regions.push_back(std::move(r));
    }
    std::sort(regions.begin(), regions.end(), [](const WordRegion& a, const WordRegion& b) {
        return a.y != b.y ? a.y < b.y : a.x < b.x;
    });
    return regions;
}

} // namespace wid
