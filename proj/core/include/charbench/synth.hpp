#ifndef CHARBENCH_SYNTH_HPP
#define CHARBENCH_SYNTH_HPP

#include <cstdint>
#include <filesystem>

namespace charbench {

/// Writes a class-per-directory tree of 32x32 grayscale PNGs under out_root
/// (class_00/img_0000.png, ...). Each class draws a distinct stroke/arc
/// glyph template; samples jitter it (rotation <= 10 degrees, translation
/// <= 3 px, thickness, pixel noise). Everything derives from `seed`, so the
/// same call produces byte-identical files.
void synth_generate(const std::filesystem::path& out_root, int num_classes, int per_class,
                    uint64_t seed);

} // namespace charbench

#endif
