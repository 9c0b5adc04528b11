#include "charbench/image.hpp"

#include <png.h>

#include <algorithm>
#include <cstdio>
#include <cstring>

#include "charbench/error.hpp"

namespace charbench {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

} // namespace

ImageU8 read_png(const std::filesystem::path& path) {
    FilePtr f(std::fopen(path.string().c_str(), "rb"));
    if (!f) throw IoError(cat("cannot open '", path.string(), "'"));

    png_byte header[8];
    if (std::fread(header, 1, 8, f.get()) != 8 || png_sig_cmp(header, 0, 8) != 0) {
        throw IoError(cat("'", path.string(), "' is not a PNG file"));
    }

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("libpng allocation failed");
    }

    ImageU8 img;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError(cat("failed to decode PNG '", path.string(), "'"));
    }

    png_init_io(png, f.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    png_set_strip_16(png);
    png_set_strip_alpha(png);
    const png_byte color_type = png_get_color_type(png, info);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) {
        png_set_expand_gray_1_2_4_to_8(png);
    }
    png_read_update_info(png, info);

    img.width = static_cast<int>(png_get_image_width(png, info));
    img.height = static_cast<int>(png_get_image_height(png, info));
    img.channels = static_cast<int>(png_get_channels(png, info));
    if (img.channels != 1 && img.channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError(cat("'", path.string(), "' decodes to ", img.channels,
                          " channels; expected 1 or 3"));
    }

    img.pixels.resize(static_cast<size_t>(img.width) * img.height * img.channels);
    rows.resize(static_cast<size_t>(img.height));
    const size_t stride = static_cast<size_t>(img.width) * img.channels;
    for (int y = 0; y < img.height; ++y) rows[static_cast<size_t>(y)] = img.pixels.data() + y * stride;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

void write_png_gray8(const std::filesystem::path& path, int width, int height,
                     std::span<const uint8_t> pixels) {
    if (static_cast<size_t>(width) * height != pixels.size()) {
        throw IoError(cat("pixel buffer size ", pixels.size(), " does not match ", width, "x",
                          height));
    }
    FilePtr f(std::fopen(path.string().c_str(), "wb"));
    if (!f) throw IoError(cat("cannot write '", path.string(), "'"));

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng allocation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError(cat("failed to encode PNG '", path.string(), "'"));
    }

    png_init_io(png, f.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
                 PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_set_compression_level(png, 6);
    png_write_info(png, info);
    std::vector<png_bytep> rows(static_cast<size_t>(height));
    for (int y = 0; y < height; ++y) {
        rows[static_cast<size_t>(y)] = const_cast<png_bytep>(pixels.data() + y * width);
    }
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

std::vector<float> to_gray_f32(const ImageU8& img, bool* was_color) {
    const size_t n = static_cast<size_t>(img.width) * img.height;
    std::vector<float> out(n);
    if (img.channels == 1) {
        if (was_color) *was_color = false;
        for (size_t i = 0; i < n; ++i) out[i] = img.pixels[i] / 255.0f;
    } else {
        if (was_color) *was_color = true;
        for (size_t i = 0; i < n; ++i) {
            const float r = img.pixels[3 * i] / 255.0f;
            const float g = img.pixels[3 * i + 1] / 255.0f;
            const float b = img.pixels[3 * i + 2] / 255.0f;
            out[i] = 0.299f * r + 0.587f * g + 0.114f * b;
        }
    }
    return out;
}

std::vector<float> resize_bilinear(const std::vector<float>& src, int w, int h, int out_w,
                                   int out_h) {
    if (static_cast<size_t>(w) * h != src.size()) {
        throw IoError(cat("source buffer size ", src.size(), " does not match ", w, "x", h));
    }
    std::vector<float> dst(static_cast<size_t>(out_w) * out_h);
    const float sx = static_cast<float>(w) / static_cast<float>(out_w);
    const float sy = static_cast<float>(h) / static_cast<float>(out_h);
    auto lerp = [](float a, float b, float t) { return a + (b - a) * t; };
    for (int oy = 0; oy < out_h; ++oy) {
        float fy = std::clamp((oy + 0.5f) * sy - 0.5f, 0.0f, static_cast<float>(h - 1));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, h - 1);
        const float ty = fy - static_cast<float>(y0);
        for (int ox = 0; ox < out_w; ++ox) {
            float fx = std::clamp((ox + 0.5f) * sx - 0.5f, 0.0f, static_cast<float>(w - 1));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, w - 1);
            const float tx = fx - static_cast<float>(x0);
            const float top = lerp(src[static_cast<size_t>(y0) * w + x0],
                                   src[static_cast<size_t>(y0) * w + x1], tx);
            const float bot = lerp(src[static_cast<size_t>(y1) * w + x0],
                                   src[static_cast<size_t>(y1) * w + x1], tx);
            dst[static_cast<size_t>(oy) * out_w + ox] = lerp(top, bot, ty);
        }
    }
    return dst;
}

} // namespace charbench
