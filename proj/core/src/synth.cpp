#include "charbench/synth.hpp"

#include <algorithm>
#include <bitset>
#include <cmath>
#include <vector>

#include "charbench/error.hpp"
#include "charbench/image.hpp"
#include "charbench/rng.hpp"

namespace charbench {

namespace {

constexpr int kSize = 32;
constexpr float kPi = 3.14159265358979323846f;

struct Stroke {
    bool is_arc = false;
    // segment: (x0,y0)-(x1,y1); arc: center (x0,y0), radius r, angles a0..a1
    float x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    float r = 0, a0 = 0, a1 = 0;
};

using Glyph = std::vector<Stroke>;

float dist_segment(float px, float py, const Stroke& s) {
    const float dx = s.x1 - s.x0, dy = s.y1 - s.y0;
    const float len2 = dx * dx + dy * dy;
    float t = len2 > 0 ? ((px - s.x0) * dx + (py - s.y0) * dy) / len2 : 0.0f;
    t = std::clamp(t, 0.0f, 1.0f);
    const float cx = s.x0 + t * dx, cy = s.y0 + t * dy;
    return std::hypot(px - cx, py - cy);
}

float dist_arc(float px, float py, const Stroke& s) {
    const float vx = px - s.x0, vy = py - s.y0;
    float ang = std::atan2(vy, vx);
    if (ang < s.a0) ang += 2 * kPi;
    if (ang <= s.a1) return std::abs(std::hypot(vx, vy) - s.r);
    const float ex0 = s.x0 + s.r * std::cos(s.a0), ey0 = s.y0 + s.r * std::sin(s.a0);
    const float ex1 = s.x0 + s.r * std::cos(s.a1), ey1 = s.y0 + s.r * std::sin(s.a1);
    return std::min(std::hypot(px - ex0, py - ey0), std::hypot(px - ex1, py - ey1));
}

float dist_glyph(float px, float py, const Glyph& g) {
    float best = 1e9f;
    for (const Stroke& s : g) {
        best = std::min(best, s.is_arc ? dist_arc(px, py, s) : dist_segment(px, py, s));
    }
    return best;
}

/// Renders strokes of width `thickness` with a one-pixel soft edge.
std::vector<float> render(const Glyph& g, float thickness) {
    std::vector<float> img(kSize * kSize, 0.0f);
    for (int y = 0; y < kSize; ++y) {
        for (int x = 0; x < kSize; ++x) {
            const float d = dist_glyph(x + 0.5f, y + 0.5f, g);
            img[static_cast<size_t>(y) * kSize + x] =
                std::clamp(thickness * 0.5f + 0.5f - d, 0.0f, 1.0f);
        }
    }
    return img;
}

Glyph rotate_translate(const Glyph& g, float angle, float dx, float dy) {
    const float c = std::cos(angle), s = std::sin(angle);
    const float cx = kSize / 2.0f, cy = kSize / 2.0f;
    auto rx = [&](float x, float y) { return cx + c * (x - cx) - s * (y - cy) + dx; };
    auto ry = [&](float x, float y) { return cy + s * (x - cx) + c * (y - cy) + dy; };
    Glyph out = g;
    for (Stroke& st : out) {
        if (st.is_arc) {
            const float nx = rx(st.x0, st.y0), ny = ry(st.x0, st.y0);
            st.x0 = nx;
            st.y0 = ny;
            st.a0 += angle;
            st.a1 += angle;
        } else {
            const float nx0 = rx(st.x0, st.y0), ny0 = ry(st.x0, st.y0);
            const float nx1 = rx(st.x1, st.y1), ny1 = ry(st.x1, st.y1);
            st.x0 = nx0;
            st.y0 = ny0;
            st.x1 = nx1;
            st.y1 = ny1;
        }
    }
    return out;
}

Glyph make_template(Rng& rng) {
    // stroke endpoints snap to a 4x4 anchor grid inside the 2 px border
    static const float anchors[4] = {5.0f, 12.0f, 19.0f, 26.0f};
    Glyph g;
    const int strokes = static_cast<int>(rng.uniform_int(3, 5));
    for (int i = 0; i < strokes; ++i) {
        Stroke s;
        if (rng.uniform() < 0.35) {
            s.is_arc = true;
            s.x0 = anchors[rng.uniform_int(1, 2)];
            s.y0 = anchors[rng.uniform_int(1, 2)];
            s.r = static_cast<float>(rng.uniform(4.5, 9.0));
            s.a0 = static_cast<float>(rng.uniform(0.0, 2.0 * kPi));
            s.a1 = s.a0 + static_cast<float>(rng.uniform(kPi * 2.0 / 3.0, 2.0 * kPi));
        } else {
            int ax0 = static_cast<int>(rng.uniform_int(0, 3));
            int ay0 = static_cast<int>(rng.uniform_int(0, 3));
            int ax1 = static_cast<int>(rng.uniform_int(0, 3));
            int ay1 = static_cast<int>(rng.uniform_int(0, 3));
            while (ax0 == ax1 && ay0 == ay1) {
                ax1 = static_cast<int>(rng.uniform_int(0, 3));
                ay1 = static_cast<int>(rng.uniform_int(0, 3));
            }
            s.x0 = anchors[ax0];
            s.y0 = anchors[ay0];
            s.x1 = anchors[ax1];
            s.y1 = anchors[ay1];
        }
        g.push_back(s);
    }
    return g;
}

std::bitset<kSize * kSize> footprint(const Glyph& g) {
    std::bitset<kSize * kSize> bits;
    const std::vector<float> img = render(g, 1.6f);
    for (size_t i = 0; i < img.size(); ++i) bits[i] = img[i] > 0.5f;
    return bits;
}

double jaccard(const std::bitset<kSize * kSize>& a, const std::bitset<kSize * kSize>& b) {
    const size_t uni = (a | b).count();
    return uni == 0 ? 1.0 : static_cast<double>((a & b).count()) / static_cast<double>(uni);
}

/// Per-class glyphs; templates too similar to an earlier class are
/// redrawn with a bumped salt. Keyed on (seed, num_classes, class), so
/// datasets with different class counts are related but distinct tasks.
std::vector<Glyph> make_templates(int num_classes, uint64_t seed) {
    std::vector<Glyph> glyphs;
    std::vector<std::bitset<kSize * kSize>> prints;
    for (int c = 0; c < num_classes; ++c) {
        for (uint64_t salt = 0;; ++salt) {
            uint64_t s = hash_combine(seed, hash_combine(hash_str("template"),
                                                         hash_combine(num_classes, c)));
            Rng rng(hash_combine(s, salt));
            Glyph g = make_template(rng);
            auto fp = footprint(g);
            if (fp.count() < 40) continue; // too faint to be a character
            bool distinct = true;
            for (const auto& other : prints) distinct = distinct && jaccard(fp, other) < 0.6;
            if (!distinct) continue;
            glyphs.push_back(std::move(g));
            prints.push_back(fp);
            break;
        }
    }
    return glyphs;
}

std::string zero_pad(int value, int width) {
    std::string s = std::to_string(value);
    while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
    return s;
}

} // namespace

void synth_generate(const std::filesystem::path& out_root, int num_classes, int per_class,
                    uint64_t seed) {
    if (num_classes < 2) throw ValueError(cat("num_classes must be >= 2, got ", num_classes));
    if (per_class < 1) throw ValueError(cat("per_class must be >= 1, got ", per_class));

    std::error_code ec;
    std::filesystem::create_directories(out_root, ec);
    if (ec || !std::filesystem::is_directory(out_root)) {
        throw IoError(cat("cannot create dataset root '", out_root.string(), "'"));
    }

    const std::vector<Glyph> glyphs = make_templates(num_classes, seed);
    const int cls_width = std::max<int>(2, static_cast<int>(std::to_string(num_classes - 1).size()));
    const int img_width = std::max<int>(4, static_cast<int>(std::to_string(per_class - 1).size()));

    std::vector<uint8_t> quantized(kSize * kSize);
    for (int c = 0; c < num_classes; ++c) {
        const std::filesystem::path dir = out_root / ("class_" + zero_pad(c, cls_width));
        std::filesystem::create_directories(dir, ec);
        if (ec) throw IoError(cat("cannot create class directory '", dir.string(), "'"));

        for (int i = 0; i < per_class; ++i) {
            Rng rng(hash_combine(seed, hash_combine(hash_str("sample"), hash_combine(c, i))));
            const float angle = static_cast<float>(rng.uniform(-10.0, 10.0)) * kPi / 180.0f;
            const float dx = static_cast<float>(rng.uniform(-3.0, 3.0));
            const float dy = static_cast<float>(rng.uniform(-3.0, 3.0));
            const float thickness = static_cast<float>(rng.uniform(1.2, 2.0));
            std::vector<float> img = render(rotate_translate(glyphs[static_cast<size_t>(c)], angle, dx, dy),
                                            thickness);
            for (size_t p = 0; p < img.size(); ++p) {
                const float noisy = img[p] + 0.04f * static_cast<float>(rng.normal());
                quantized[p] = static_cast<uint8_t>(
                    std::lround(std::clamp(noisy, 0.0f, 1.0f) * 255.0f));
            }
            write_png_gray8(dir / ("img_" + zero_pad(i, img_width) + ".png"), kSize, kSize,
                            quantized);
        }
    }
}

} // namespace charbench
