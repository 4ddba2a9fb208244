#pragma once

#include <png.h>

#include <algorithm>
#include <csetjmp>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "errors.hpp"
#include "image.hpp"

namespace tamiseg::png {

/// 8-bit raster with interleaved channels.
struct Raster {
    int height = 0, width = 0, channels = 0;
    std::vector<std::uint8_t> bytes;
};

namespace detail {
struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using File = std::unique_ptr<std::FILE, FileCloser>;
}  // namespace detail

inline void write(const std::filesystem::path& path, const Raster& r) {
    if (r.channels != 1 && r.channels != 3) throw DatasetError("png: unsupported channel count");
    detail::File f(std::fopen(path.c_str(), "wb"));
    if (!f) throw DatasetError("cannot open for writing: " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw DatasetError("png: allocation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DatasetError("png: write failed for " + path.string());
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, r.width, r.height, 8,
                 r.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    // Fixed compression settings and no timestamps keep output byte-stable.
    png_set_compression_level(png, 6);
    png_write_info(png, info);
    const std::size_t stride = static_cast<std::size_t>(r.width) * r.channels;
    for (int y = 0; y < r.height; ++y)
        png_write_row(png, const_cast<png_bytep>(r.bytes.data() + y * stride));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

inline Raster read(const std::filesystem::path& path) {
    detail::File f(std::fopen(path.c_str(), "rb"));
    if (!f) throw DatasetError("missing file: " + path.string());
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DatasetError("png: allocation failed");
    }
    Raster r;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DatasetError("png: cannot decode " + path.string());
    }
    png_init_io(png, f.get());
    png_read_info(png, info);
    const int color = png_get_color_type(png, info);
    if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8)
        png_set_expand_gray_1_2_4_to_8(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    r.width = static_cast<int>(png_get_image_width(png, info));
    r.height = static_cast<int>(png_get_image_height(png, info));
    r.channels = png_get_channels(png, info);
    const std::size_t stride = png_get_rowbytes(png, info);
    r.bytes.resize(stride * r.height);
    for (int y = 0; y < r.height; ++y) png_read_row(png, r.bytes.data() + y * stride, nullptr);
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return r;
}

inline void write_image(const std::filesystem::path& path, const Image& img) {
    Raster r{img.height(), img.width(), 3, {}};
    r.bytes.resize(static_cast<std::size_t>(r.height) * r.width * 3);
    for (int y = 0; y < r.height; ++y)
        for (int x = 0; x < r.width; ++x)
            for (int c = 0; c < 3; ++c)
                r.bytes[(static_cast<std::size_t>(y) * r.width + x) * 3 + c] = to_byte(img.at(c, y, x));
    write(path, r);
}

inline Image read_image(const std::filesystem::path& path) {
    Raster r = read(path);
    Image img(r.height, r.width);
    for (int y = 0; y < r.height; ++y)
        for (int x = 0; x < r.width; ++x)
            for (int c = 0; c < 3; ++c) {
                const int src = r.channels == 3 ? c : 0;
                img.at(c, y, x) =
                    r.bytes[(static_cast<std::size_t>(y) * r.width + x) * r.channels + src] / 255.f;
            }
    return img;
}

/// Masks are stored as {0,255}.
inline void write_mask(const std::filesystem::path& path, const BinaryMask& m) {
    Raster r{m.height, m.width, 1, {}};
    r.bytes.resize(m.values.size());
    for (std::size_t i = 0; i < m.values.size(); ++i) r.bytes[i] = m.values[i] ? 255 : 0;
    write(path, r);
}

/// Gray levels of 128 and above read as foreground.
inline BinaryMask read_mask(const std::filesystem::path& path) {
    Raster r = read(path);
    BinaryMask m(r.height, r.width);
    for (std::size_t i = 0; i < m.values.size(); ++i) {
        std::uint8_t v = r.bytes[i * r.channels];
        if (r.channels == 3) v = std::max({v, r.bytes[i * 3 + 1], r.bytes[i * 3 + 2]});
        m.values[i] = v >= 128 ? 1 : 0;
    }
    return m;
}

}  // namespace tamiseg::png
