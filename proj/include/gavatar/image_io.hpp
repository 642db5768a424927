// Copyright Contributors to the gavatar project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gavatar/binary.hpp"
#include "gavatar/metrics.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace gav {

/// 8-bit image as decoded from PNG: channels is 1 (gray) or 3 (RGB).
struct Image8 {
    int width = 0, height = 0, channels = 3;
    std::vector<std::uint8_t> data;
};

/// Linear quantization, round(c·255) on the clamped value.
inline Image8 quantize(const Image& img) {
    Image8 out{img.width, img.height, 3, std::vector<std::uint8_t>(img.data.size())};
    for (std::size_t i = 0; i < img.data.size(); ++i)
        out.data[i] = static_cast<std::uint8_t>(std::lround(std::clamp(img.data[i], 0.0, 1.0) * 255.0));
    return out;
}

inline Image dequantize(const Image8& img) {
    if (img.channels != 3) fail(ErrorCode::ShapeMismatch, "expected an RGB image");
    Image out(img.width, img.height);
    for (std::size_t i = 0; i < img.data.size(); ++i) out.data[i] = img.data[i] / 255.0;
    return out;
}

namespace detail {

struct PngMemReader {
    std::span<const unsigned char> data;
    std::size_t pos = 0;
};

inline void png_error_fn(png_structp png, png_const_charp msg) {
    auto* buf = static_cast<std::string*>(png_get_error_ptr(png));
    if (buf) *buf = msg;
    png_longjmp(png, 1);
}

inline void png_warning_fn(png_structp, png_const_charp) {}

} // namespace detail

inline std::vector<unsigned char> encode_png(const Image8& img) {
    if (img.channels != 1 && img.channels != 3) fail(ErrorCode::InvalidArgument, "PNG encoder takes 1 or 3 channels");
    if (img.width <= 0 || img.height <= 0) fail(ErrorCode::InvalidArgument, "PNG must have a positive size");
    std::string err;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, detail::png_error_fn, detail::png_warning_fn);
    if (!png) fail(ErrorCode::IoError, "png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    std::vector<unsigned char> out;
    std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        fail(ErrorCode::IoError, "PNG encode failed: " + err);
    }
    png_set_write_fn(png, &out, [](png_structp p, png_bytep d, png_size_t n) {
        auto* v = static_cast<std::vector<unsigned char>*>(png_get_io_ptr(p));
        v->insert(v->end(), d, d + n);
    }, [](png_structp) {});
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
                 img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const std::size_t stride = static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.channels);
    for (int y = 0; y < img.height; ++y)
        rows[static_cast<std::size_t>(y)] = const_cast<png_bytep>(img.data.data() + static_cast<std::size_t>(y) * stride);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return out;
}

/// Decodes 8-bit gray or RGB PNG (palette and 16-bit inputs are converted;
/// alpha is dropped).
inline Image8 decode_png(std::span<const unsigned char> bytes, bool header_only = false) {
    if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) fail(ErrorCode::ParseError, "not a PNG file");
    std::string err;
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, detail::png_error_fn, detail::png_warning_fn);
    if (!png) fail(ErrorCode::IoError, "png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    detail::PngMemReader src{bytes, 0};
    Image8 img;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail(ErrorCode::ParseError, "PNG decode failed: " + err);
    }
    png_set_read_fn(png, &src, [](png_structp p, png_bytep d, png_size_t n) {
        auto* s = static_cast<detail::PngMemReader*>(png_get_io_ptr(p));
        if (s->data.size() - s->pos < n) png_error(p, "truncated PNG");
        std::memcpy(d, s->data.data() + s->pos, n);
        s->pos += n;
    });
    png_read_info(png, info);
    img.width = static_cast<int>(png_get_image_width(png, info));
    img.height = static_cast<int>(png_get_image_height(png, info));
    const int color = png_get_color_type(png, info);
    img.channels = (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) ? 1 : 3;
    if (header_only) {
        png_destroy_read_struct(&png, &info, nullptr);
        return img;
    }
    if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    const std::size_t stride = png_get_rowbytes(png, info);
    if (stride != static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.channels)) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail(ErrorCode::ParseError, "unsupported PNG layout");
    }
    img.data.resize(stride * static_cast<std::size_t>(img.height));
    rows.resize(static_cast<std::size_t>(img.height));
    for (int y = 0; y < img.height; ++y) rows[static_cast<std::size_t>(y)] = img.data.data() + static_cast<std::size_t>(y) * stride;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

inline Image8 read_png(const std::filesystem::path& path, bool header_only = false) {
    const auto bytes = read_file_bytes(path);
    try {
        return decode_png(bytes, header_only);
    } catch (const Error& e) {
        fail(e.code(), path.string() + ": " + e.detail());
    }
}

inline void write_png(const Image8& img, const std::filesystem::path& path) { write_file_atomic(path, encode_png(img)); }
inline void write_png(const Image& img, const std::filesystem::path& path) { write_png(quantize(img), path); }

// PFM: "PF\n<w> <h>\n-1.0\n" then little-endian f32 RGB rows, bottom row first.
inline std::vector<unsigned char> encode_pfm(const Image& img) {
    ByteWriter w;
    w.put_raw("PF\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n-1.0\n");
    for (int y = img.height - 1; y >= 0; --y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) w.put(static_cast<float>(img.at(x, y, c)));
    return std::move(w.bytes());
}

inline Image decode_pfm(std::span<const unsigned char> bytes) {
    std::size_t pos = 0;
    auto token = [&] {
        while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
        std::string t;
        while (pos < bytes.size() && !std::isspace(bytes[pos])) t += static_cast<char>(bytes[pos++]);
        return t;
    };
    if (token() != "PF") fail(ErrorCode::ParseError, "not an RGB PFM file");
    int w = 0, h = 0;
    double scale = 0;
    try {
        w = std::stoi(token());
        h = std::stoi(token());
        scale = std::stod(token());
    } catch (...) {
        fail(ErrorCode::ParseError, "bad PFM header");
    }
    ++pos;  // single whitespace byte after the scale
    if (w <= 0 || h <= 0) fail(ErrorCode::ParseError, "bad PFM size");
    if (scale > 0) fail(ErrorCode::ParseError, "big-endian PFM is not supported");
    ByteReader r(bytes.subspan(std::min(pos, bytes.size())));
    Image img(w, h);
    for (int y = h - 1; y >= 0; --y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) img.at(x, y, c) = r.get<float>();
    return img;
}

inline Image read_pfm(const std::filesystem::path& path) { return decode_pfm(read_file_bytes(path)); }
inline void write_pfm(const Image& img, const std::filesystem::path& path) { write_file_atomic(path, encode_pfm(img)); }

/// RGB image in [0,1] from PNG or PFM by extension.
inline Image read_image(const std::filesystem::path& path) {
    if (path.extension() == ".pfm") return read_pfm(path);
    const Image8 i8 = read_png(path);
    if (i8.channels != 3) fail(ErrorCode::ShapeMismatch, path.string() + ": expected an RGB image");
    return dequantize(i8);
}

} // namespace gav
