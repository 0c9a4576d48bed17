#pragma once

#include <cctype>
#include <cstdio>
#include <cstring>
#include <memory>
#include <string>
#include <variant>

#include <png.h>

#include "wid/image.hpp"

namespace wid {

using AnyImage = std::variant<GrayImage, RgbImage>;

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline FilePtr open_file(const std::string& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) throw IoError("cannot open " + path);
    return f;
}

} // namespace detail

inline bool has_suffix(const std::string& s, const std::string& suf) {
    return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
}

// --- PNG ---------------------------------------------------------------

inline AnyImage read_png(const std::string& path) {
    detail::FilePtr f = detail::open_file(path, "rb");
    png_byte header[8];
    if (std::fread(header, 1, 8, f.get()) != 8 || png_sig_cmp(header, 0, 8))
        throw IoError("not a PNG file: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("libpng init failed");
    }
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("PNG decode failed: " + path);
    }
    png_init_io(png, f.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    const png_uint_32 w = png_get_image_width(png, info);
    const png_uint_32 h = png_get_image_height(png, info);
    const png_byte color = png_get_color_type(png, info);
    const png_byte depth = png_get_bit_depth(png, info);

    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    const png_byte out_color = png_get_color_type(png, info);
    const bool gray = (out_color == PNG_COLOR_TYPE_GRAY);
    const std::size_t stride = png_get_rowbytes(png, info);

    AnyImage result;
    if (gray) {
        GrayImage img(static_cast<int>(w), static_cast<int>(h));
        rows.resize(h);
        for (png_uint_32 y = 0; y < h; ++y) rows[y] = &img.pixels[static_cast<std::size_t>(y) * w];
        png_read_image(png, rows.data());
        result = std::move(img);
    } else {
        if (stride != static_cast<std::size_t>(w) * 3) {
            png_destroy_read_struct(&png, &info, nullptr);
            throw IoError("unsupported PNG layout: " + path);
        }
        RgbImage img(static_cast<int>(w), static_cast<int>(h));
        rows.resize(h);
        for (png_uint_32 y = 0; y < h; ++y) rows[y] = &img.rgb[static_cast<std::size_t>(y) * w * 3];
        png_read_image(png, rows.data());
        result = std::move(img);
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return result;
}

inline void write_png(const std::string& path, const GrayImage& img) {
    detail::FilePtr f = detail::open_file(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("PNG encode failed: " + path);
    }
    png_init_io(png, f.get());
    // fixed settings keep output byte-stable across runs
    png_set_compression_level(png, 6);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height),
                 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
    for (int y = 0; y < img.height; ++y)
        rows[static_cast<std::size_t>(y)] =
            const_cast<png_bytep>(&img.pixels[static_cast<std::size_t>(y) * img.width]);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

// --- PGM (P5 binary, P2 ascii) ------------------------------------------

inline GrayImage read_pgm(const std::string& path) {
    detail::FilePtr f = detail::open_file(path, "rb");
    auto next_token = [&]() -> std::string {
        std::string tok;
        int c;
        while ((c = std::fgetc(f.get())) != EOF) {
            if (c == '#') {
                while ((c = std::fgetc(f.get())) != EOF && c != '\n') {}
                continue;
            }
            if (std::isspace(c)) {
                if (!tok.empty()) break;
                continue;
            }
            tok.push_back(static_cast<char>(c));
        }
        return tok;
    };
    const std::string magic = next_token();
    if (magic != "P5" && magic != "P2") throw IoError("not a PGM file: " + path);
    const int w = std::stoi(next_token());
    const int h = std::stoi(next_token());
    const int maxval = std::stoi(next_token());
    if (w < 1 || h < 1 || maxval < 1 || maxval > 255) throw IoError("unsupported PGM: " + path);
    GrayImage img(w, h);
    if (magic == "P5") {
        if (std::fread(img.pixels.data(), 1, img.pixels.size(), f.get()) != img.pixels.size())
            throw IoError("truncated PGM: " + path);
    } else {
        for (auto& p : img.pixels) p = static_cast<std::uint8_t>(std::stoi(next_token()));
    }
    return img;
}

inline void write_pgm(const std::string& path, const GrayImage& img) {
    detail::FilePtr f = detail::open_file(path, "wb");
    std::string head = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    if (std::fwrite(head.data(), 1, head.size(), f.get()) != head.size() ||
        std::fwrite(img.pixels.data(), 1, img.pixels.size(), f.get()) != img.pixels.size())
        throw IoError("cannot write " + path);
}

inline AnyImage read_image(const std::string& path) {
    if (has_suffix(path, ".pgm") || has_suffix(path, ".PGM")) return read_pgm(path);
    return read_png(path);
}

} // namespace wid
