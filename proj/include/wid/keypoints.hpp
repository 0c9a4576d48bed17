#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "wid/image.hpp"

namespace wid {

// Scale-space stack. gaussians[o] holds s+3 progressively blurred images,
// dogs[o] the s+2 adjacent differences. Octave o is the source image
// downsampled o times (dims ceil(d / 2^o)); intensities live in [0,1].
struct DoGPyramid {
    int octaves = 0;
    int scales_per_octave = 0;
    double base_sigma = 0.0;
    std::vector<std::vector<FloatImage>> gaussians;
    std::vector<std::vector<FloatImage>> dogs;
};

struct Keypoint {
    double x = 0.0, y = 0.0;     // sub-pixel, original image coordinates
    int octave = 0;
    int level = 0;               // DoG level the extremum settled on
    double scale = 0.0;          // sigma in pixels at original resolution
    double orientation = 0.0;    // radians in [0, 2pi)
    double response = 0.0;       // |refined DoG value|
};

// 105x105 embedder input; padding pixels are white.
struct NormalizedPatch {
    static constexpr int kSide = 105;
    GrayImage image;
    std::string word_id;
    int kp_index = 0;
};

struct SiftParams {
    int octaves = 4;
    int scales_per_octave = 3;
    double base_sigma = 1.6;
    double contrast_threshold = 0.03; // on [0,1] intensities
    double edge_threshold = 10.0;
    double size_factor = 12.0;
    int max_patches = 32;             // strongest-by-response cap per word, 0 = unlimited
    bool auto_clamp_octaves = true;
    double assumed_blur = 0.5;        // blur attributed to the raw input
};

namespace detail {

inline FloatImage downsample2(const FloatImage& src) {
    const int w = (src.width + 1) / 2, h = (src.height + 1) / 2;
    FloatImage out(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out.at(x, y) = src.at(2 * x, 2 * y);
    return out;
}

inline int max_octaves_for(int w, int h) {
    int o = 1;
    while (((std::min(w, h) + (1 << o) - 1) >> o) >= 8) ++o;
    return o;
}

} // namespace detail

inline DoGPyramid build_pyramid(const GrayImage& image, const SiftParams& p) {
    if (image.width < 16 || image.height < 16)
        throw DimensionError("build_pyramid: image must be at least 16x16");
    if (p.octaves < 1 || p.scales_per_octave < 1)
        throw ParameterError("build_pyramid: octaves and scales_per_octave must be >= 1");

    int octaves = p.octaves;
    const int allowed = detail::max_octaves_for(image.width, image.height);
    if (octaves > allowed) {
        if (!p.auto_clamp_octaves)
            throw DimensionError("build_pyramid: image too small for requested octave count");
        octaves = allowed;
    }

    const int s = p.scales_per_octave;
    DoGPyramid pyr;
    pyr.octaves = octaves;
    pyr.scales_per_octave = s;
    pyr.base_sigma = p.base_sigma;
    pyr.gaussians.resize(static_cast<std::size_t>(octaves));
    pyr.dogs.resize(static_cast<std::size_t>(octaves));

    FloatImage base = to_float(image, 1.0 / 255.0);
    if (p.base_sigma > p.assumed_blur) {
        const double delta = std::sqrt(p.base_sigma * p.base_sigma - p.assumed_blur * p.assumed_blur);
        base = gaussian_blur(base, delta);
    }

    for (int o = 0; o < octaves; ++o) {
        auto& levels = pyr.gaussians[static_cast<std::size_t>(o)];
        levels.reserve(static_cast<std::size_t>(s) + 3);
        levels.push_back(std::move(base));
        for (int i = 1; i < s + 3; ++i) {
            const double prev = p.base_sigma * std::pow(2.0, static_cast<double>(i - 1) / s);
            const double next = p.base_sigma * std::pow(2.0, static_cast<double>(i) / s);
            const double delta = std::sqrt(next * next - prev * prev);
            levels.push_back(gaussian_blur(levels.back(), delta));
        }
        auto& diffs = pyr.dogs[static_cast<std::size_t>(o)];
        diffs.reserve(static_cast<std::size_t>(s) + 2);
        for (int i = 0; i < s + 2; ++i) {
            const FloatImage& a = levels[static_cast<std::size_t>(i)];
            const FloatImage& b = levels[static_cast<std::size_t>(i) + 1];
            FloatImage d(a.width, a.height);
            for (std::size_t j = 0; j < d.data.size(); ++j) d.data[j] = b.data[j] - a.data[j];
            diffs.push_back(std::move(d));
        }
        if (o + 1 < octaves)
            base = detail::downsample2(levels[static_cast<std::size_t>(s)]);
    }
    return pyr;
}

namespace detail {

// Quadratic refinement around an integer extremum. Returns false when the
// 3x3 system is singular or the point keeps drifting.
inline bool refine_extremum(const std::vector<FloatImage>& dog, int s, int& x, int& y, int& lvl,
                            double off[3], double* refined_value) {
    for (int iter = 0; iter < 5; ++iter) {
        const FloatImage& d0 = dog[static_cast<std::size_t>(lvl) - 1];
        const FloatImage& d1 = dog[static_cast<std::size_t>(lvl)];
        const FloatImage& d2 = dog[static_cast<std::size_t>(lvl) + 1];

        const double gx = 0.5 * (d1.at(x + 1, y) - d1.at(x - 1, y));
        const double gy = 0.5 * (d1.at(x, y + 1) - d1.at(x, y - 1));
        const double gs = 0.5 * (d2.at(x, y) - d0.at(x, y));

        const double c = d1.at(x, y);
        const double dxx = d1.at(x + 1, y) + d1.at(x - 1, y) - 2.0 * c;
        const double dyy = d1.at(x, y + 1) + d1.at(x, y - 1) - 2.0 * c;
        const double dss = d2.at(x, y) + d0.at(x, y) - 2.0 * c;
        const double dxy = 0.25 * (d1.at(x + 1, y + 1) - d1.at(x - 1, y + 1) -
                                   d1.at(x + 1, y - 1) + d1.at(x - 1, y - 1));
        const double dxs = 0.25 * (d2.at(x + 1, y) - d2.at(x - 1, y) -
                                   d0.at(x + 1, y) + d0.at(x - 1, y));
        const double dys = 0.25 * (d2.at(x, y + 1) - d2.at(x, y - 1) -
                                   d0.at(x, y + 1) + d0.at(x, y - 1));

        const double det = dxx * (dyy * dss - dys * dys) - dxy * (dxy * dss - dys * dxs) +
                           dxs * (dxy * dys - dyy * dxs);
        if (std::abs(det) < 1e-30) return false;

        // Cramer solve of H * off = -g
        const double bx = -gx, by = -gy, bs = -gs;
        off[0] = (bx * (dyy * dss - dys * dys) - dxy * (by * dss - dys * bs) +
                  dxs * (by * dys - dyy * bs)) / det;
        off[1] = (dxx * (by * dss - dys * bs) - bx * (dxy * dss - dys * dxs) +
                  dxs * (dxy * bs - by * dxs)) / det;
        off[2] = (dxx * (dyy * bs - by * dys) - dxy * (dxy * bs - by * dxs) +
                  bx * (dxy * dys - dyy * dxs)) / det;

        if (std::abs(off[0]) <= 0.5 && std::abs(off[1]) <= 0.5 && std::abs(off[2]) <= 0.5) {
            *refined_value = c + 0.5 * (gx * off[0] + gy * off[1] + gs * off[2]);
            return true;
        }
        x += off[0] > 0.5 ? 1 : (off[0] < -0.5 ? -1 : 0);
        y += off[1] > 0.5 ? 1 : (off[1] < -0.5 ? -1 : 0);
        lvl += off[2] > 0.5 ? 1 : (off[2] < -0.5 ? -1 : 0);
        if (lvl < 1 || lvl > s || x < 1 || y < 1 || x >= d1.width - 1 || y >= d1.height - 1)
            return false;
    }
    return false;
}

inline bool passes_edge_test(const FloatImage& d, int x, int y, double edge_threshold) {
    const double c = d.at(x, y);
    const double dxx = d.at(x + 1, y) + d.at(x - 1, y) - 2.0 * c;
    const double dyy = d.at(x, y + 1) + d.at(x, y - 1) - 2.0 * c;
    const double dxy = 0.25 * (d.at(x + 1, y + 1) - d.at(x - 1, y + 1) -
                               d.at(x + 1, y - 1) + d.at(x - 1, y - 1));
    const double tr = dxx + dyy;
    const double det = dxx * dyy - dxy * dxy;
    if (det <= 0.0) return false;
    const double r = edge_threshold;
    return tr * tr / det < (r + 1.0) * (r + 1.0) / r;
}

} // namespace detail

// Strict 26-neighborhood extrema with sub-pixel refinement, contrast and
// principal-curvature tests. Scan order makes the output deterministic.
inline std::vector<Keypoint> detect(const DoGPyramid& pyr, double contrast_threshold,
                                    double edge_threshold) {
    if (contrast_threshold <= 0.0 || edge_threshold <= 0.0)
        throw ParameterError("detect: thresholds must be > 0");
    const int s = pyr.scales_per_octave;
    std::vector<Keypoint> out;
    for (int o = 0; o < pyr.octaves; ++o) {
        const auto& dog = pyr.dogs[static_cast<std::size_t>(o)];
        const int w = dog[0].width, h = dog[0].height;
        for (int lvl = 1; lvl <= s; ++lvl) {
            const FloatImage& d0 = dog[static_cast<std::size_t>(lvl) - 1];
            const FloatImage& d1 = dog[static_cast<std::size_t>(lvl)];
            const FloatImage& d2 = dog[static_cast<std::size_t>(lvl) + 1];
            for (int y = 1; y < h - 1; ++y) {
                for (int x = 1; x < w - 1; ++x) {
                    const double v = d1.at(x, y);
                    bool is_max = true, is_min = true;
                    for (int dy = -1; dy <= 1 && (is_max || is_min); ++dy) {
                        for (int dx = -1; dx <= 1; ++dx) {
                            const double n0 = d0.at(x + dx, y + dy);
                            const double n1 = d1.at(x + dx, y + dy);
                            const double n2 = d2.at(x + dx, y + dy);
                            if (v <= n0 || v <= n2 || (!(dx == 0 && dy == 0) && v <= n1)) is_max = false;
                            if (v >= n0 || v >= n2 || (!(dx == 0 && dy == 0) && v >= n1)) is_min = false;
                            if (!is_max && !is_min) break;
                        }
                    }
                    if (!is_max && !is_min) continue;

                    int rx = x, ry = y, rl = lvl;
                    double off[3] = {0, 0, 0}, refined = 0.0;
                    if (!detail::refine_extremum(dog, s, rx, ry, rl, off, &refined)) continue;
                    if (std::abs(refined) < contrast_threshold) continue;
                    if (!detail::passes_edge_test(dog[static_cast<std::size_t>(rl)], rx, ry, edge_threshold))
                        continue;

                    const double scale_factor = static_cast<double>(1 << o);
                    Keypoint kp;
                    kp.x = (rx + off[0]) * scale_factor;
                    kp.y = (ry + off[1]) * scale_factor;
                    kp.octave = o;
                    kp.level = rl;
                    kp.scale = pyr.base_sigma * std::pow(2.0, o + (rl + off[2]) / s);
                    kp.response = std::abs(refined);
                    out.push_back(kp);
                }
            }
        }
    }
    return out;
}

// 36-bin gradient-orientation histogram around the keypoint, Gaussian
// weighted at 1.5x its octave-relative scale. One keypoint per histogram
// peak >= 0.8 * max, orientation parabola-interpolated; an all-flat window
// yields nothing and the keypoint is dropped.
inline std::vector<Keypoint> assign_orientations(const Keypoint& kp, const DoGPyramid& pyr) {
    constexpr int kBins = 36;
    const int o = kp.octave;
    if (o < 0 || o >= pyr.octaves) throw ParameterError("assign_orientations: bad octave");
    const int lvl = std::clamp(kp.level, 0, pyr.scales_per_octave + 2);
    const FloatImage& img = pyr.gaussians[static_cast<std::size_t>(o)][static_cast<std::size_t>(lvl)];

    const double inv = 1.0 / static_cast<double>(1 << o);
    const double cx = kp.x * inv, cy = kp.y * inv;
    const double sigma_rel = kp.scale * inv;
    const double wsigma = 1.5 * sigma_rel;
    const int radius = std::max(1, static_cast<int>(std::lround(3.0 * wsigma)));

    double hist[kBins] = {0};
    const int x0 = std::max(1, static_cast<int>(std::lround(cx)) - radius);
    const int x1 = std::min(img.width - 2, static_cast<int>(std::lround(cx)) + radius);
    const int y0 = std::max(1, static_cast<int>(std::lround(cy)) - radius);
    const int y1 = std::min(img.height - 2, static_cast<int>(std::lround(cy)) + radius);
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            const double gx = img.at(x + 1, y) - img.at(x - 1, y);
            const double gy = img.at(x, y + 1) - img.at(x, y - 1);
            const double mag = std::sqrt(gx * gx + gy * gy);
            if (mag <= 0.0) continue;
            const double ddx = x - cx, ddy = y - cy;
            const double wgt = std::exp(-(ddx * ddx + ddy * ddy) / (2.0 * wsigma * wsigma));
            double theta = std::atan2(gy, gx);
            if (theta < 0.0) theta += 2.0 * M_PI;
            int bin = static_cast<int>(theta * kBins / (2.0 * M_PI));
            if (bin >= kBins) bin = kBins - 1;
            hist[bin] += wgt * mag;
        }
    }

    double hmax = 0.0;
    for (double v : hist) hmax = std::max(hmax, v);
    std::vector<Keypoint> out;
    if (hmax <= 0.0) return out;

    for (int b = 0; b < kBins; ++b) {
        const double l = hist[(b + kBins - 1) % kBins];
        const double c = hist[b];
        const double r = hist[(b + 1) % kBins];
        if (c < 0.8 * hmax || c <= l || c <= r) continue;
        const double denom = l - 2.0 * c + r;
        const double shift = denom != 0.0 ? 0.5 * (l - r) / denom : 0.0;
        double theta = (b + 0.5 + shift) * 2.0 * M_PI / kBins;
        theta = std::fmod(theta + 2.0 * M_PI, 2.0 * M_PI);
        Keypoint k = kp;
        k.orientation = theta;
        out.push_back(k);
    }
    return out;
}

enum class PatchReject { kNone, kTooSmall, kTooLarge };

// Axis-aligned square crop around the keypoint, side round(size_factor *
// scale * 2^octave), white outside the image. Sides below 8 px and patches
// covering more than 4x the word area are rejected.
inline std::optional<GrayImage> extract_patch(const GrayImage& image, const Keypoint& kp,
                                              double size_factor, PatchReject* why = nullptr) {
    if (size_factor <= 0.0) throw ParameterError("extract_patch: size_factor must be > 0");
    if (why) *why = PatchReject::kNone;
    const long side = std::lround(size_factor * kp.scale * static_cast<double>(1 << kp.octave));
    if (side < 8) {
        if (why) *why = PatchReject::kTooSmall;
        return std::nullopt;
    }
    if (side * side > 4L * image.width * image.height) {
        if (why) *why = PatchReject::kTooLarge;
        return std::nullopt;
    }
    const int n = static_cast<int>(side);
    const int x0 = static_cast<int>(std::lround(kp.x)) - n / 2;
    const int y0 = static_cast<int>(std::lround(kp.y)) - n / 2;
    GrayImage out(n, n, 255);
    for (int y = 0; y < n; ++y) {
        const int sy = y0 + y;
        if (sy < 0 || sy >= image.height) continue;
        for (int x = 0; x < n; ++x) {
            const int sx = x0 + x;
            if (sx < 0 || sx >= image.width) continue;
            out.at(x, y) = image.at(sx, sy);
        }
    }
    return out;
}

// Aspect-preserving bilinear resize so the larger side becomes 105 (smaller
// side rounded half-up), centered on a white 105x105 canvas.
inline NormalizedPatch normalize_patch(const GrayImage& patch) {
    constexpr int kSide = NormalizedPatch::kSide;
    if (patch.width < 8 || patch.height < 8)
        throw DimensionError("normalize_patch: crop must be at least 8x8");
    int nw, nh;
    if (patch.width >= patch.height) {
        nw = kSide;
        nh = static_cast<int>(std::floor(static_cast<double>(kSide) * patch.height / patch.width + 0.5));
    } else {
        nh = kSide;
        nw = static_cast<int>(std::floor(static_cast<double>(kSide) * patch.width / patch.height + 0.5));
    }
    nw = std::max(1, nw);
    nh = std::max(1, nh);
    const GrayImage resized = bilinear_resize(patch, nw, nh);
    NormalizedPatch out;
    out.image = GrayImage(kSide, kSide, 255);
    const int ox = (kSide - nw) / 2;
    const int oy = (kSide - nh) / 2;
    for (int y = 0; y < nh; ++y)
        for (int x = 0; x < nw; ++x) out.image.at(ox + x, oy + y) = resized.at(x, y);
    return out;
}

// Full per-word extraction: detect, orient, crop, normalize, then keep the
// strongest max_patches by response (stable on ties).
inline std::vector<std::pair<Keypoint, NormalizedPatch>> extract_word_patches(
    const GrayImage& word, const SiftParams& params, const std::string& word_id = "") {
    std::vector<std::pair<Keypoint, NormalizedPatch>> out;
    if (word.width < 16 || word.height < 16) return out;
    const DoGPyramid pyr = build_pyramid(word, params);
    std::vector<Keypoint> oriented;
    for (const Keypoint& kp : detect(pyr, params.contrast_threshold, params.edge_threshold)) {
        for (const Keypoint& okp : assign_orientations(kp, pyr)) oriented.push_back(okp);
    }
    std::stable_sort(oriented.begin(), oriented.end(),
                     [](const Keypoint& a, const Keypoint& b) { return a.response > b.response; });
    for (const Keypoint& kp : oriented) {
        if (params.max_patches > 0 && static_cast<int>(out.size()) >= params.max_patches) break;
        auto cropped = extract_patch(word, kp, params.size_factor);
        if (!cropped) continue;
        NormalizedPatch np = normalize_patch(*cropped);
        np.word_id = word_id;
        np.kp_index = static_cast<int>(out.size());
        out.emplace_back(kp, std::move(np));
    }
    return out;
}

} // namespace wid
