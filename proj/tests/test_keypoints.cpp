#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "wid/keypoints.hpp"
#include "wid/rng.hpp"
#include "oracles.hpp"

using namespace wid;

namespace {

GrayImage gaussian_blob(int w, int h, double cx, double cy, double sigma, double amplitude = 200.0) {
    GrayImage img(w, h, 255);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
            img.at(x, y) = clamp_u8(255.0 - amplitude * std::exp(-d2 / (2.0 * sigma * sigma)));
        }
    }
    return img;
}

struct Candidate {
    int octave, level, x, y;
};

// brute-force strict 26-neighborhood extrema scan over a pyramid
std::vector<Candidate> scan_extrema(const DoGPyramid& pyr) {
    std::vector<Candidate> out;
    for (int o = 0; o < pyr.octaves; ++o) {
        const auto& dog = pyr.dogs[static_cast<std::size_t>(o)];
        for (int lvl = 1; lvl <= pyr.scales_per_octave; ++lvl) {
            const FloatImage& d1 = dog[static_cast<std::size_t>(lvl)];
            for (int y = 1; y < d1.height - 1; ++y) {
                for (int x = 1; x < d1.width - 1; ++x) {
                    const double v = d1.at(x, y);
                    int greater = 0, smaller = 0;
                    for (int dl = -1; dl <= 1; ++dl) {
                        const FloatImage& n = dog[static_cast<std::size_t>(lvl + dl)];
                        for (int dy = -1; dy <= 1; ++dy)
                            for (int dx = -1; dx <= 1; ++dx) {
                                if (dl == 0 && dx == 0 && dy == 0) continue;
                                const double nv = n.at(x + dx, y + dy);
                                if (v > nv) greater++;
                                if (v < nv) smaller++;
                            }
                    }
                    if (greater == 26 || smaller == 26) out.push_back({o, lvl, x, y});
                }
            }
        }
    }
    return out;
}

double spatial_hessian_ratio(const FloatImage& d, int x, int y) {
    const double c = d.at(x, y);
    const double dxx = d.at(x + 1, y) + d.at(x - 1, y) - 2.0 * c;
    const double dyy = d.at(x, y + 1) + d.at(x, y - 1) - 2.0 * c;
    const double dxy = 0.25 * (d.at(x + 1, y + 1) - d.at(x - 1, y + 1) -
                               d.at(x + 1, y - 1) + d.at(x - 1, y - 1));
    const double tr = dxx + dyy;
    const double det = dxx * dyy - dxy * dxy;
    if (det <= 0.0) return 1e30;
    return tr * tr / det;
}

} // namespace

TEST_CASE("pyramid of constant image has zero DoG") {
    SiftParams p;
    const DoGPyramid pyr = build_pyramid(GrayImage(64, 64, 137), p);
    for (const auto& octave : pyr.dogs)
        for (const auto& d : octave)
            for (double v : d.data) CHECK(std::abs(v) < 1e-9);
}

TEST_CASE("pyramid halving rule") {
    SiftParams p;
    p.octaves = 3;
    const DoGPyramid pyr = build_pyramid(GrayImage(64, 64, 255), p);
    REQUIRE(pyr.octaves == 3);
    CHECK(pyr.gaussians[0][0].width == 64);
    CHECK(pyr.gaussians[1][0].width == 32);
    CHECK(pyr.gaussians[2][0].width == 16);
    CHECK(pyr.gaussians[0].size() == static_cast<std::size_t>(p.scales_per_octave) + 3);
    CHECK(pyr.dogs[0].size() == static_cast<std::size_t>(p.scales_per_octave) + 2);
}

TEST_CASE("pyramid DoG subtraction invariant is bit-exact") {
    Rng rng(5);
    GrayImage img(48, 40);
    for (auto& px : img.pixels) px = static_cast<std::uint8_t>(rng.next_below(256));
    SiftParams p;
    p.octaves = 2;
    const DoGPyramid pyr = build_pyramid(img, p);
    for (int o = 0; o < pyr.octaves; ++o)
        for (std::size_t i = 0; i + 1 < pyr.gaussians[o].size(); ++i) {
            const auto& a = pyr.gaussians[o][i];
            const auto& b = pyr.gaussians[o][i + 1];
            const auto& d = pyr.dogs[o][i];
            for (std::size_t j = 0; j < d.data.size(); ++j)
                CHECK(d.data[j] == b.data[j] - a.data[j]);
        }
}

TEST_CASE("pyramid octave clamp and error") {
    SiftParams p;
    p.octaves = 6;
    p.auto_clamp_octaves = false;
    CHECK_THROWS_AS(build_pyramid(GrayImage(64, 64, 255), p), DimensionError);
    p.auto_clamp_octaves = true;
    const DoGPyramid pyr = build_pyramid(GrayImage(64, 64, 255), p);
    CHECK(pyr.octaves == 4); // 64 -> 32 -> 16 -> 8
    CHECK_THROWS_AS(build_pyramid(GrayImage(12, 12, 255), p), DimensionError);
}

TEST_CASE("blob response peaks at the matching pyramid level") {
    // direct 2-D convolution oracle: G(next level) - G(level) applied to the
    // raw image, center response compared across levels
    const double blob_sigma = 4.0;
    const GrayImage img = gaussian_blob(96, 96, 47.5, 47.5, blob_sigma);
    SiftParams p;
    p.octaves = 1;
    p.scales_per_octave = 3;
    const DoGPyramid pyr = build_pyramid(img, p);

    const FloatImage base = to_float(img, 1.0 / 255.0);
    const int cx = 47, cy = 47;
    std::vector<double> oracle_resp;
    for (int i = 0; i < p.scales_per_octave + 2; ++i) {
        const double s0 = p.base_sigma * std::pow(2.0, static_cast<double>(i) / p.scales_per_octave);
        const double s1 = p.base_sigma * std::pow(2.0, static_cast<double>(i + 1) / p.scales_per_octave);
        const double a0 = std::sqrt(std::max(s0 * s0 - p.assumed_blur * p.assumed_blur, 0.01));
        const double a1 = std::sqrt(std::max(s1 * s1 - p.assumed_blur * p.assumed_blur, 0.01));
        const FloatImage a = oracle::gaussian_blur_2d(base, a0);
        const FloatImage b = oracle::gaussian_blur_2d(base, a1);
        oracle_resp.push_back(std::abs(b.at(cx, cy) - a.at(cx, cy)));
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < oracle_resp.size(); ++i)
        if (oracle_resp[i] > oracle_resp[best]) best = i;

    std::vector<double> pyr_resp;
    for (const auto& d : pyr.dogs[0]) pyr_resp.push_back(std::abs(d.at(cx, cy)));
    for (std::size_t i = 0; i < pyr_resp.size(); ++i) {
        if (i + 2 <= best) CHECK(pyr_resp[best] > pyr_resp[i]);
        if (i >= best + 2) CHECK(pyr_resp[best] > pyr_resp[i]);
    }
    // oracle and pyramid agree on the winning level
    std::size_t pyr_best = 0;
    for (std::size_t i = 1; i < pyr_resp.size(); ++i)
        if (pyr_resp[i] > pyr_resp[pyr_best]) pyr_best = i;
    CHECK(pyr_best == best);
}

TEST_CASE("detect on constant image returns nothing") {
    SiftParams p;
    const DoGPyramid pyr = build_pyramid(GrayImage(64, 64, 80), p);
    CHECK(detect(pyr, 0.03, 10.0).empty());
    CHECK_THROWS_AS(detect(pyr, 0.0, 10.0), ParameterError);
}

TEST_CASE("detect finds a centered blob") {
    // center kept off the pixel grid and off half-integers so the discrete
    // extremum is unique (a strict one cannot exist among exactly tied pixels)
    const GrayImage img = gaussian_blob(64, 64, 31.3, 31.7, 3.0);
    SiftParams p;
    p.octaves = 3;
    const DoGPyramid pyr = build_pyramid(img, p);

    // oracle scan sees at least one extremum near the center
    bool oracle_hit = false;
    for (const Candidate& c : scan_extrema(pyr)) {
        const double fx = c.x * (1 << c.octave), fy = c.y * (1 << c.octave);
        if (std::abs(fx - 31.3) <= 2.0 && std::abs(fy - 31.7) <= 2.0) oracle_hit = true;
    }
    CHECK(oracle_hit);

    const auto kps = detect(pyr, 0.03, 10.0);
    REQUIRE_FALSE(kps.empty());
    bool hit = false;
    for (const Keypoint& kp : kps)
        if (std::abs(kp.x - 31.3) <= 2.0 && std::abs(kp.y - 31.7) <= 2.0) hit = true;
    CHECK(hit);
    for (const Keypoint& kp : kps) {
        CHECK(kp.scale > 0.0);
        CHECK(kp.response >= 0.03);
    }
}

TEST_CASE("curvature test rejects edge responses") {
    // gently curved step edge: candidates exist but sit on a ridge
    GrayImage img(96, 96, 255);
    for (int y = 0; y < 96; ++y) {
        const double boundary = 40.0 + 6.0 * std::sin(y * 0.05);
        for (int x = 0; x < 96; ++x)
            if (x < boundary) img.at(x, y) = 30;
    }
    SiftParams p;
    p.octaves = 2;
    const DoGPyramid pyr = build_pyramid(img, p);

    const auto candidates = scan_extrema(pyr);
    REQUIRE_FALSE(candidates.empty());
    const double r = 10.0;
    const double limit = (r + 1.0) * (r + 1.0) / r;
    for (const Candidate& c : candidates) {
        const double ratio = spatial_hessian_ratio(pyr.dogs[c.octave][c.level], c.x, c.y);
        CHECK(ratio >= limit);
    }
    CHECK(detect(pyr, 0.03, r).empty());
}

TEST_CASE("orientation of a linear ramp") {
    GrayImage img(64, 64);
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) img.at(x, y) = clamp_u8(40.0 + 2.5 * x);
    SiftParams p;
    p.octaves = 1;
    const DoGPyramid pyr = build_pyramid(img, p);

    Keypoint kp;
    kp.x = 32;
    kp.y = 32;
    kp.octave = 0;
    kp.level = 1;
    kp.scale = p.base_sigma * std::pow(2.0, 1.0 / 3.0);
    const auto oriented = assign_orientations(kp, pyr);
    REQUIRE(oriented.size() == 1);
    // +x gradient -> orientation near 0 (mod 2pi), one bin is 10 degrees
    double deg = oriented[0].orientation * 180.0 / M_PI;
    if (deg > 180.0) deg -= 360.0;
    CHECK(std::abs(deg) <= 10.0);
}

TEST_CASE("two perpendicular gradient populations give two orientations") {
    // corner of a dark quadrant: the window sees a vertical and a horizontal
    // step edge of equal contrast, i.e. two equal perpendicular populations
    GrayImage img(64, 64, 220);
    for (int y = 32; y < 64; ++y)
        for (int x = 32; x < 64; ++x) img.at(x, y) = 40;
    SiftParams p;
    p.octaves = 1;
    const DoGPyramid pyr = build_pyramid(img, p);

    Keypoint kp;
    kp.x = 32;
    kp.y = 32;
    kp.octave = 0;
    kp.level = 1;
    kp.scale = p.base_sigma * std::pow(2.0, 1.0 / 3.0);
    const auto oriented = assign_orientations(kp, pyr);
    REQUIRE(oriented.size() == 2);
    // the two orientations are a quarter turn apart
    double diff = std::abs(oriented[0].orientation - oriented[1].orientation);
    diff = std::min(diff, 2.0 * M_PI - diff);
    CHECK(std::abs(diff - M_PI / 2.0) < 0.3); // within about two bin widths
}

TEST_CASE("flat window drops the keypoint") {
    SiftParams p;
    p.octaves = 1;
    const DoGPyramid pyr = build_pyramid(GrayImage(64, 64, 200), p);
    Keypoint kp;
    kp.x = 32;
    kp.y = 32;
    kp.octave = 0;
    kp.level = 1;
    kp.scale = 2.0;
    CHECK(assign_orientations(kp, pyr).empty());
}

TEST_CASE("extract_patch side arithmetic") {
    const GrayImage img(200, 200, 128);
    Keypoint kp;
    kp.x = 100;
    kp.y = 100;
    kp.octave = 0;
    kp.scale = 2.0;
    auto patch = extract_patch(img, kp, 6.0);
    REQUIRE(patch.has_value());
    CHECK(patch->width == 12);
    CHECK(patch->height == 12);

    Keypoint kp1 = kp;
    kp1.octave = 1;
    auto patch1 = extract_patch(img, kp1, 6.0);
    REQUIRE(patch1.has_value());
    CHECK(patch1->width == 24); // exactly double
}

TEST_CASE("extract_patch white fill at the border") {
    GrayImage img(60, 60, 77);
    Keypoint kp;
    kp.x = 3;
    kp.y = 30;
    kp.octave = 0;
    kp.scale = 20.0 / 12.0;
    auto patch = extract_patch(img, kp, 12.0);
    REQUIRE(patch.has_value());
    REQUIRE(patch->width == 20);
    for (int y = 0; y < 20; ++y)
        for (int x = 0; x < 20; ++x) {
            // direct-indexing oracle: source pixel = (3 - 10 + x, 20 + y)
            const int sx = -7 + x;
            const int sy = 20 + y;
            const std::uint8_t expect = (sx >= 0 && sx < 60 && sy >= 0 && sy < 60) ? 77 : 255;
            CHECK(patch->at(x, y) == expect);
        }
}

TEST_CASE("extract_patch rejections") {
    const GrayImage img(40, 40, 0);
    Keypoint kp;
    kp.x = 20;
    kp.y = 20;
    kp.octave = 0;
    kp.scale = 0.5;
    PatchReject why;
    CHECK_FALSE(extract_patch(img, kp, 12.0, &why).has_value());
    CHECK(why == PatchReject::kTooSmall);

    kp.scale = 100.0;
    CHECK_FALSE(extract_patch(img, kp, 12.0, &why).has_value());
    CHECK(why == PatchReject::kTooLarge);

    CHECK_THROWS_AS(extract_patch(img, kp, 0.0), ParameterError);
}

TEST_CASE("normalize_patch identity at 105x105") {
    Rng rng(3);
    GrayImage img(105, 105);
    for (auto& px : img.pixels) px = static_cast<std::uint8_t>(rng.next_below(256));
    const NormalizedPatch np = normalize_patch(img);
    CHECK(np.image.pixels == img.pixels);
}

TEST_CASE("normalize_patch 210x105 pads 26 white rows top and bottom") {
    GrayImage img(210, 105, 0);
    const NormalizedPatch np = normalize_patch(img);
    REQUIRE(np.image.width == 105);
    REQUIRE(np.image.height == 105);
    for (int y = 0; y < 26; ++y)
        for (int x = 0; x < 105; ++x) CHECK(np.image.at(x, y) == 255);
    for (int y = 79; y < 105; ++y)
        for (int x = 0; x < 105; ++x) CHECK(np.image.at(x, y) == 255);
    for (int y = 26; y < 79; ++y)
        for (int x = 0; x < 105; ++x) CHECK(np.image.at(x, y) == 0);
}

TEST_CASE("normalize_patch square upscale has no padding") {
    GrayImage img(50, 50, 10);
    const NormalizedPatch np = normalize_patch(img);
    for (auto px : np.image.pixels) CHECK(px == 10);
    CHECK_THROWS_AS(normalize_patch(GrayImage(5, 5, 0)), DimensionError);
}

TEST_CASE("normalize_patch keeps every resized pixel") {
    Rng rng(17);
    for (int trial = 0; trial < 10; ++trial) {
        const int w = 9 + static_cast<int>(rng.next_below(180));
        const int h = 9 + static_cast<int>(rng.next_below(180));
        GrayImage img(w, h);
        for (auto& px : img.pixels) px = static_cast<std::uint8_t>(rng.next_below(256));
        const NormalizedPatch np = normalize_patch(img);

        int nw, nh;
        if (w >= h) {
            nw = 105;
            nh = static_cast<int>(std::floor(105.0 * h / w + 0.5));
        } else {
            nh = 105;
            nw = static_cast<int>(std::floor(105.0 * w / h + 0.5));
        }
        const GrayImage resized = bilinear_resize(img, nw, nh);
        const int ox = (105 - nw) / 2, oy = (105 - nh) / 2;
        std::uint64_t sum_resized = 0, sum_canvas = 0;
        for (int y = 0; y < nh; ++y)
            for (int x = 0; x < nw; ++x) {
                sum_resized += resized.at(x, y);
                sum_canvas += np.image.at(ox + x, oy + y);
            }
        CHECK(sum_resized == sum_canvas);
    }
}

TEST_CASE("intensity scaling leaves keypoints in place") {
    // even intensities so halving is exact on 8-bit pixels
    GrayImage img(96, 96, 254);
    Rng rng(9);
    for (int i = 0; i < 6; ++i) {
        const double cx = 16 + rng.next_below(64);
        const double cy = 16 + rng.next_below(64);
        const GrayImage blob = gaussian_blob(96, 96, cx, cy, 2.0 + rng.next_double() * 2.0, 180.0);
        for (std::size_t j = 0; j < img.pixels.size(); ++j)
            img.pixels[j] = static_cast<std::uint8_t>(
                std::min<int>(img.pixels[j], blob.pixels[j]) & ~1);
    }
    GrayImage half = img;
    for (auto& px : half.pixels) px = static_cast<std::uint8_t>(px / 2);

    SiftParams p;
    const auto kps_full = detect(build_pyramid(img, p), 0.03, 10.0);
    const auto kps_half = detect(build_pyramid(half, p), 0.015, 10.0);
    REQUIRE_FALSE(kps_full.empty());
    REQUIRE(kps_full.size() == kps_half.size());
    for (std::size_t i = 0; i < kps_full.size(); ++i) {
        CHECK(std::abs(kps_full[i].x - kps_half[i].x) <= 0.5);
        CHECK(std::abs(kps_full[i].y - kps_half[i].y) <= 0.5);
        CHECK(std::abs(kps_full[i].scale - kps_half[i].scale) <= 0.05 * kps_full[i].scale);
    }
}

TEST_CASE("translation equivariance of detection") {
    const GrayImage blob = gaussian_blob(40, 40, 19.3, 19.7, 3.0);
    auto paste = [&](GrayImage& dst, int ox, int oy) {
        for (int y = 0; y < 40; ++y)
            for (int x = 0; x < 40; ++x) dst.at(ox + x, oy + y) = blob.at(x, y);
    };
    GrayImage a(160, 160, 255), b(160, 160, 255);
    paste(a, 40, 40);
    paste(b, 48, 48);

    SiftParams p;
    p.octaves = 3;
    const auto ka = detect(build_pyramid(a, p), 0.03, 10.0);
    const auto kb = detect(build_pyramid(b, p), 0.03, 10.0);
    REQUIRE_FALSE(ka.empty());
    REQUIRE(ka.size() == kb.size());
    for (std::size_t i = 0; i < ka.size(); ++i) {
        CHECK(std::abs(kb[i].x - ka[i].x - 8.0) <= 1.0);
        CHECK(std::abs(kb[i].y - ka[i].y - 8.0) <= 1.0);
    }
}

TEST_CASE("extract_word_patches produces normalized patches") {
    GrayImage word(160, 80, 255);
    Rng rng(31);
    for (int i = 0; i < 5; ++i) {
        const GrayImage blob =
            gaussian_blob(160, 80, 20 + rng.next_below(120), 20 + rng.next_below(40), 2.5, 220.0);
        for (std::size_t j = 0; j < word.pixels.size(); ++j)
            word.pixels[j] = std::min(word.pixels[j], blob.pixels[j]);
    }
    SiftParams p;
    p.max_patches = 4;
    const auto patches = extract_word_patches(word, p, "word-1");
    CHECK_FALSE(patches.empty());
    CHECK(patches.size() <= 4);
    for (std::size_t i = 0; i < patches.size(); ++i) {
        CHECK(patches[i].second.image.width == 105);
        CHECK(patches[i].second.image.height == 105);
        CHECK(patches[i].second.word_id == "word-1");
        CHECK(patches[i].second.kp_index == static_cast<int>(i));
    }
}
