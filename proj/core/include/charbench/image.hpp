#ifndef CHARBENCH_IMAGE_HPP
#define CHARBENCH_IMAGE_HPP

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace charbench {

/// Interleaved 8-bit image; channels is 1 (gray) or 3 (rgb).
struct ImageU8 {
    int width = 0;
    int height = 0;
    int channels = 1;
    std::vector<uint8_t> pixels;
};

/// Decodes a PNG. Palette and 16-bit inputs are reduced to 8-bit gray or
/// rgb; alpha is stripped. Throws IoError with the path on failure.
ImageU8 read_png(const std::filesystem::path& path);

/// 8-bit grayscale PNG writer; fixed settings so identical pixels give
/// identical bytes.
void write_png_gray8(const std::filesystem::path& path, int width, int height,
                     std::span<const uint8_t> pixels);

/// Gray [0,1] floats; rgb input is luminance-converted (Rec.601) and
/// `was_color`, when given, reports that it happened.
std::vector<float> to_gray_f32(const ImageU8& img, bool* was_color = nullptr);

/// Bilinear resample with half-pixel centers and edge clamping. Constant
/// images stay exactly constant.
std::vector<float> resize_bilinear(const std::vector<float>& src, int w, int h, int out_w,
                                   int out_h);

} // namespace charbench

#endif
