#pragma once

// Minimal PNG reader/writer over libpng: 8-bit RGB, 8/16-bit gray.

#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include <png.h>

#include "segnet/error.hpp"

namespace segnet::io {

/// Interleaved raster. Samples are stored widened to 16 bits; bit_depth
/// records the on-disk precision (8 or 16).
struct Image {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t channels = 1;
    int bit_depth = 8;
    std::vector<std::uint16_t> samples;

    Image() = default;
    Image(std::size_t w, std::size_t h, std::size_t c, int depth)
        : width(w), height(h), channels(c), bit_depth(depth), samples(w * h * c, 0) {}

    std::uint16_t& at(std::size_t y, std::size_t x, std::size_t c = 0) { return samples[(y * width + x) * channels + c]; }
    std::uint16_t at(std::size_t y, std::size_t x, std::size_t c = 0) const {
        return samples[(y * width + x) * channels + c];
    }
    bool operator==(const Image&) const = default;
};

namespace detail {
struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;
}  // namespace detail

inline Image read_png(const std::string& path) {
    detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError("cannot open image: " + path);
    unsigned char sig[8];
    if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
        throw IoError("not a PNG file: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("libpng initialization failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("libpng initialization failed");
    }
    Image img;
    std::vector<png_bytep> rows;
    std::vector<unsigned char> buffer;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("cannot decode PNG: " + path);
    }
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    const int color = png_get_color_type(png, info);
    int depth = png_get_bit_depth(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (depth < 8) depth = 8;
    if (depth == 16) png_set_swap(png);  // little-endian sample pairs
    png_read_update_info(png, info);

    img.width = png_get_image_width(png, info);
    img.height = png_get_image_height(png, info);
    img.channels = png_get_channels(png, info);
    img.bit_depth = png_get_bit_depth(png, info);
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    buffer.resize(rowbytes * img.height);
    rows.resize(img.height);
    for (std::size_t y = 0; y < img.height; ++y) rows[y] = buffer.data() + y * rowbytes;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    img.samples.resize(img.width * img.height * img.channels);
    if (img.bit_depth == 16) {
        for (std::size_t i = 0; i < img.samples.size(); ++i)
            img.samples[i] = static_cast<std::uint16_t>(buffer[2 * i] | (buffer[2 * i + 1] << 8));
    } else {
        for (std::size_t i = 0; i < img.samples.size(); ++i) img.samples[i] = buffer[i];
    }
    return img;
}

inline void write_png(const std::string& path, const Image& img) {
    if (img.channels != 1 && img.channels != 3) throw IoError("write_png: only gray and RGB images are supported");
    if (img.bit_depth != 8 && img.bit_depth != 16) throw IoError("write_png: bit depth must be 8 or 16");
    if (img.samples.size() != img.width * img.height * img.channels) throw IoError("write_png: sample count mismatch");
    detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IoError("cannot open image for writing: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("libpng initialization failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("libpng initialization failed");
    }
    const std::size_t bytes = img.bit_depth / 8;
    const std::size_t rowbytes = img.width * img.channels * bytes;
    std::vector<unsigned char> buffer(rowbytes * img.height);
    for (std::size_t i = 0; i < img.samples.size(); ++i) {
        if (bytes == 2) {
            buffer[2 * i] = static_cast<unsigned char>(img.samples[i] >> 8);  // PNG is big-endian
            buffer[2 * i + 1] = static_cast<unsigned char>(img.samples[i] & 0xFF);
        } else {
            buffer[i] = static_cast<unsigned char>(img.samples[i]);
        }
    }
    std::vector<png_bytep> rows(img.height);
    for (std::size_t y = 0; y < img.height; ++y) rows[y] = buffer.data() + y * rowbytes;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("cannot encode PNG: " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), img.bit_depth,
                 img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace segnet::io
