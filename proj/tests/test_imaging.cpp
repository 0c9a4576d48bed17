#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "wid/imaging.hpp"
#include "wid/rng.hpp"
#include "oracles.hpp"

using namespace wid;

namespace {

RgbImage solid_rgb(int w, int h, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    RgbImage img(w, h);
    for (int i = 0; i < w * h; ++i) {
        img.rgb[3 * i + 0] = r;
        img.rgb[3 * i + 1] = g;
        img.rgb[3 * i + 2] = b;
    }
    return img;
}

GrayImage white(int w, int h) { return GrayImage(w, h, 255); }

void stamp_square(GrayImage& img, int x0, int y0, int side, std::uint8_t v) {
    for (int y = y0; y < y0 + side; ++y)
        for (int x = x0; x < x0 + side; ++x) img.at(x, y) = v;
}

// a small multi-stroke "word": three blobs close together
GrayImage synthetic_word(int shift_x = 0, int shift_y = 0) {
    GrayImage img = white(160, 80);
    stamp_square(img, 30 + shift_x, 30 + shift_y, 12, 0);
    stamp_square(img, 48 + shift_x, 26 + shift_y, 10, 10);
    stamp_square(img, 64 + shift_x, 32 + shift_y, 14, 5);
    return img;
}

} // namespace

TEST_CASE("to_grayscale identities") {
    const GrayImage g = to_grayscale(solid_rgb(4, 3, 255, 255, 255));
    for (auto p : g.pixels) CHECK(p == 255);

    for (int v : {0, 1, 17, 128, 200, 254, 255}) {
        const GrayImage gv = to_grayscale(solid_rgb(2, 2, v, v, v));
        CHECK(gv.at(0, 0) == v); // weights sum to 1
    }
}

TEST_CASE("to_grayscale luma formula") {
    // 0.299*200 + 0.587*100 + 0.114*50 = 124.2 -> 124
    const GrayImage g = to_grayscale(solid_rgb(1, 1, 200, 100, 50));
    CHECK(g.at(0, 0) == 124);
}

TEST_CASE("to_grayscale idempotent on achromatic input") {
    Rng rng(11);
    GrayImage src(9, 7);
    for (auto& p : src.pixels) p = static_cast<std::uint8_t>(rng.next_below(256));
    RgbImage rgb(9, 7);
    for (int i = 0; i < 9 * 7; ++i)
        rgb.rgb[3 * i] = rgb.rgb[3 * i + 1] = rgb.rgb[3 * i + 2] = src.pixels[i];
    const GrayImage g = to_grayscale(rgb);
    CHECK(g.pixels == src.pixels);
}

TEST_CASE("to_grayscale rejects empty raster") {
    RgbImage empty;
    CHECK_THROWS_AS(to_grayscale(empty), DimensionError);
}

TEST_CASE("denoise keeps a white page empty") {
    const BinaryImage m = denoise(white(20, 20), 1.0, 254);
    for (bool b : m.mask) CHECK_FALSE(b);
}

TEST_CASE("denoise matches dense 2-D convolution oracle") {
    GrayImage img = white(40, 40);
    stamp_square(img, 10, 10, 20, 0);
    const double sigma = 0.5;
    const int threshold = 128;
    const BinaryImage m = denoise(img, sigma, threshold);

    const FloatImage blurred = oracle::gaussian_blur_2d(to_float(img), sigma);
    for (int y = 0; y < 40; ++y)
        for (int x = 0; x < 40; ++x)
            CHECK(m.at(x, y) == (blurred.at(x, y) < threshold));

    // interior of the square survives
    for (int y = 13; y < 27; ++y)
        for (int x = 13; x < 27; ++x) CHECK(m.at(x, y));
}

TEST_CASE("denoise removes an isolated speckle") {
    GrayImage img = white(31, 31);
    img.at(15, 15) = 0;
    const BinaryImage m = denoise(img, 2.0, 100);
    for (bool b : m.mask) CHECK_FALSE(b);

    // oracle confirms the blurred minimum stays above the threshold
    const FloatImage blurred = oracle::gaussian_blur_2d(to_float(img), 2.0);
    double lowest = 255.0;
    for (double v : blurred.data) lowest = std::min(lowest, v);
    CHECK(lowest > 100.0);
}

TEST_CASE("denoise parameter validation") {
    CHECK_THROWS_AS(denoise(white(4, 4), 0.0, 128), ParameterError);
    CHECK_THROWS_AS(denoise(white(4, 4), -1.0, 128), ParameterError);
}

TEST_CASE("denoise is monotone in threshold") {
    Rng rng(23);
    GrayImage img(48, 32);
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.next_below(256));
    const BinaryImage lo = denoise(img, 1.3, 90);
    const BinaryImage hi = denoise(img, 1.3, 200);
    for (std::size_t i = 0; i < lo.mask.size(); ++i)
        if (lo.mask[i]) CHECK(hi.mask[i]);
}

TEST_CASE("segment_words on blank image") {
    const BinaryImage blank(64, 64, false);
    CHECK(segment_words(blank, 6.0, 30).empty());
}

TEST_CASE("segment_words separates two distant blobs") {
    GrayImage img = white(220, 80);
    stamp_square(img, 20, 25, 30, 0);
    stamp_square(img, 150, 25, 30, 0); // 100 px of white between the blobs
    const BinaryImage mask = denoise(img, 1.0, 180);
    const auto regions = segment_words(mask, 8.0, 30, &img);
    REQUIRE(regions.size() == 2);

    // oracle: components of the ink mask give the expected bboxes
    std::vector<int> labels;
    REQUIRE(oracle::connected_components(mask, labels) == 2);
    oracle::Box boxes[2];
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x)
            if (mask.at(x, y)) boxes[labels[static_cast<std::size_t>(y) * mask.width + x]].grow(x, y);

    for (int i = 0; i < 2; ++i) {
        CHECK(regions[i].x == boxes[i].x0);
        CHECK(regions[i].y == boxes[i].y0);
        CHECK(regions[i].w == boxes[i].x1 - boxes[i].x0 + 1);
        CHECK(regions[i].h == boxes[i].y1 - boxes[i].y0 + 1);
    }
    // each bbox contains exactly one stamped blob
    CHECK(regions[0].x <= 20);
    CHECK(regions[0].x + regions[0].w >= 50);
    CHECK(regions[0].x + regions[0].w < 150);
    CHECK(regions[1].x <= 150);
    CHECK(regions[1].x + regions[1].w >= 180);
}

TEST_CASE("segment_words merges strokes of one word and covers all ink") {
    const GrayImage img = synthetic_word();
    const BinaryImage mask = denoise(img, 1.0, 180);
    const auto regions = segment_words(mask, 6.0, 30, &img);
    REQUIRE(regions.size() == 1);

    const oracle::Box box = oracle::ink_bbox(mask);
    CHECK(regions[0].x == box.x0);
    CHECK(regions[0].y == box.y0);
    CHECK(regions[0].w == box.x1 - box.x0 + 1);
    CHECK(regions[0].h == box.y1 - box.y0 + 1);
}

TEST_CASE("segment_words region properties") {
    GrayImage img = white(200, 120);
    stamp_square(img, 15, 15, 20, 0);
    stamp_square(img, 90, 20, 16, 0);
    stamp_square(img, 40, 80, 25, 0);
    img.at(180, 100) = 0; // lone pixel, below min_area
    const BinaryImage mask = denoise(img, 0.8, 180);
    const auto regions = segment_words(mask, 5.0, 30, &img);
    REQUIRE(regions.size() == 3);

    for (std::size_t i = 0; i < regions.size(); ++i) {
        int ink = 0;
        for (const auto p : regions[i].image.pixels) ink += p < 128 ? 1 : 0;
        CHECK(ink >= 30);
        for (std::size_t j = i + 1; j < regions.size(); ++j) {
            const bool same = regions[i].x == regions[j].x && regions[i].y == regions[j].y &&
                              regions[i].w == regions[j].w && regions[i].h == regions[j].h;
            CHECK_FALSE(same);
        }
    }

    // ordering: top-to-bottom then left-to-right
    CHECK(regions[0].y <= regions[1].y);
    CHECK(regions[1].y <= regions[2].y);
}

TEST_CASE("segmentation is translation equivariant") {
    const GrayImage a = synthetic_word();
    const GrayImage b = synthetic_word(7, 9);
    const auto ra = segment_words(denoise(a, 1.0, 180), 6.0, 30, &a);
    const auto rb = segment_words(denoise(b, 1.0, 180), 6.0, 30, &b);
    REQUIRE(ra.size() == 1);
    REQUIRE(rb.size() == 1);
    CHECK(rb[0].x - ra[0].x == 7);
    CHECK(rb[0].y - ra[0].y == 9);
    CHECK(rb[0].w == ra[0].w);
    CHECK(rb[0].h == ra[0].h);
}

TEST_CASE("segment_words parameter validation") {
    CHECK_THROWS_AS(segment_words(BinaryImage(8, 8), 0.0, 10), ParameterError);
}
