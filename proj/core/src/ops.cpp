#include "charbench/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>

namespace charbench {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<RowMat>;
using CMapRM = Eigen::Map<const RowMat>;

bool want_grad(Tape* tape, std::initializer_list<const Tensor*> inputs) {
    if (!tape) return false;
    for (const Tensor* t : inputs) {
        if (t->defined() && t->requires_grad()) return true;
    }
    return false;
}

void check_rank(const Tensor& t, int rank, const char* what) {
    if (t.rank() != rank) {
        throw ShapeError(cat(what, " must have rank ", rank, ", got ", shape_str(t.shape())));
    }
}

// cols is (C*kh*kw) x (Ho*Wo), row-major; zero padding.
void im2col(const float* x, int C, int H, int W, int kh, int kw, int sh, int sw, int ph, int pw,
            int Ho, int Wo, float* cols) {
    const int64_t plane = static_cast<int64_t>(Ho) * Wo;
    for (int c = 0; c < C; ++c) {
        const float* xc = x + static_cast<int64_t>(c) * H * W;
        for (int i = 0; i < kh; ++i) {
            for (int j = 0; j < kw; ++j) {
                float* row = cols + ((static_cast<int64_t>(c) * kh + i) * kw + j) * plane;
                for (int oy = 0; oy < Ho; ++oy) {
                    int y = oy * sh - ph + i;
                    float* dst = row + static_cast<int64_t>(oy) * Wo;
                    if (y < 0 || y >= H) {
                        std::fill(dst, dst + Wo, 0.0f);
                        continue;
                    }
                    const float* src = xc + static_cast<int64_t>(y) * W;
                    for (int ox = 0; ox < Wo; ++ox) {
                        int xpos = ox * sw - pw + j;
                        dst[ox] = (xpos >= 0 && xpos < W) ? src[xpos] : 0.0f;
                    }
                }
            }
        }
    }
}

void col2im_add(const float* cols, int C, int H, int W, int kh, int kw, int sh, int sw, int ph,
                int pw, int Ho, int Wo, float* dx) {
    const int64_t plane = static_cast<int64_t>(Ho) * Wo;
    for (int c = 0; c < C; ++c) {
        float* dxc = dx + static_cast<int64_t>(c) * H * W;
        for (int i = 0; i < kh; ++i) {
            for (int j = 0; j < kw; ++j) {
                const float* row = cols + ((static_cast<int64_t>(c) * kh + i) * kw + j) * plane;
                for (int oy = 0; oy < Ho; ++oy) {
                    int y = oy * sh - ph + i;
                    if (y < 0 || y >= H) continue;
                    const float* src = row + static_cast<int64_t>(oy) * Wo;
                    float* dst = dxc + static_cast<int64_t>(y) * W;
                    for (int ox = 0; ox < Wo; ++ox) {
                        int xpos = ox * sw - pw + j;
                        if (xpos >= 0 && xpos < W) dst[xpos] += src[ox];
                    }
                }
            }
        }
    }
}

} // namespace

int conv_out_extent(int in, int kernel, int stride, int pad, const char* what) {
    if (stride < 1) throw ValueError(cat(what, ": stride must be >= 1, got ", stride));
    if (pad < 0) throw ValueError(cat(what, ": padding must be >= 0, got ", pad));
    if (kernel > in + 2 * pad) {
        throw ShapeError(cat(what, ": kernel ", kernel, " exceeds padded input ", in + 2 * pad));
    }
    int out = (in + 2 * pad - kernel) / stride + 1;
    if (out <= 0) {
        throw ShapeError(cat(what, ": non-positive output size for input ", in, ", kernel ",
                             kernel, ", stride ", stride, ", pad ", pad));
    }
    return out;
}

Tensor conv2d(Tape* tape, const Tensor& input, const Tensor& weight, const Tensor& bias,
              Int2 stride, Int2 pad) {
    check_rank(input, 4, "conv2d input");
    check_rank(weight, 4, "conv2d weight");
    const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const int F = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
    if (weight.dim(1) != C) {
        throw ShapeError(cat("conv2d channel mismatch: input has ", C, " channels, weight expects ",
                             weight.dim(1)));
    }
    if (bias.defined()) {
        if (bias.rank() != 1 || bias.dim(0) != F) {
            throw ShapeError(cat("conv2d bias must be [", F, "], got ", shape_str(bias.shape())));
        }
    }
    const int Ho = conv_out_extent(H, kh, stride.h, pad.h, "conv2d height");
    const int Wo = conv_out_extent(W, kw, stride.w, pad.w, "conv2d width");

    const int64_t ckk = static_cast<int64_t>(C) * kh * kw;
    const int64_t plane = static_cast<int64_t>(Ho) * Wo;
    Tensor out(Shape{N, F, Ho, Wo});

    std::vector<float> cols(static_cast<size_t>(ckk * plane));
    CMapRM wmat(weight.data().data(), F, ckk);
    for (int n = 0; n < N; ++n) {
        const float* xn = input.data().data() + static_cast<int64_t>(n) * C * H * W;
        im2col(xn, C, H, W, kh, kw, stride.h, stride.w, pad.h, pad.w, Ho, Wo, cols.data());
        MapRM on(out.data().data() + static_cast<int64_t>(n) * F * plane, F, plane);
        CMapRM cm(cols.data(), ckk, plane);
        on.noalias() = wmat * cm;
        if (bias.defined()) {
            auto b = bias.data();
            for (int f = 0; f < F; ++f) on.row(f).array() += b[static_cast<size_t>(f)];
        }
    }

    if (want_grad(tape, {&input, &weight, &bias})) {
        out.set_requires_grad(true);
        tape->track_output(out);
        Tensor x = input, w = weight, b = bias, o = out;
        Int2 s = stride, p = pad;
        tape->record([x, w, b, o, s, p]() mutable {
            const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
            const int F = w.dim(0), kh = w.dim(2), kw = w.dim(3);
            const int Ho = o.dim(2), Wo = o.dim(3);
            const int64_t ckk = static_cast<int64_t>(C) * kh * kw;
            const int64_t plane = static_cast<int64_t>(Ho) * Wo;
            auto gout = o.grad();
            std::vector<float> cols(static_cast<size_t>(ckk * plane));
            std::vector<float> dcols;
            if (x.requires_grad()) dcols.resize(static_cast<size_t>(ckk * plane));
            CMapRM wmat(w.data().data(), F, ckk);
            for (int n = 0; n < N; ++n) {
                CMapRM gn(gout.data() + static_cast<int64_t>(n) * F * plane, F, plane);
                if (w.requires_grad() || x.requires_grad()) {
                    if (w.requires_grad()) {
                        const float* xn = x.data().data() + static_cast<int64_t>(n) * C * H * W;
                        im2col(xn, C, H, W, kh, kw, s.h, s.w, p.h, p.w, Ho, Wo, cols.data());
                        CMapRM cm(cols.data(), ckk, plane);
                        MapRM gw(w.grad().data(), F, ckk);
                        gw.noalias() += gn * cm.transpose();
                    }
                    if (x.requires_grad()) {
                        MapRM dcm(dcols.data(), ckk, plane);
                        dcm.noalias() = wmat.transpose() * gn;
                        float* dxn = x.grad().data() + static_cast<int64_t>(n) * C * H * W;
                        col2im_add(dcols.data(), C, H, W, kh, kw, s.h, s.w, p.h, p.w, Ho, Wo, dxn);
                    }
                }
                if (b.defined() && b.requires_grad()) {
                    auto gb = b.grad();
                    for (int f = 0; f < F; ++f) gb[static_cast<size_t>(f)] += gn.row(f).sum();
                }
            }
        });
    }
    return out;
}

Tensor maxpool2d(Tape* tape, const Tensor& input, Int2 kernel, Int2 stride, Int2 pad) {
    check_rank(input, 4, "maxpool2d input");
    if (pad.h * 2 > kernel.h || pad.w * 2 > kernel.w) {
        throw ValueError(cat("maxpool2d padding (", pad.h, ",", pad.w, ") must be at most half the kernel (",
                             kernel.h, ",", kernel.w, ")"));
    }
    const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const int Ho = conv_out_extent(H, kernel.h, stride.h, pad.h, "maxpool2d height");
    const int Wo = conv_out_extent(W, kernel.w, stride.w, pad.w, "maxpool2d width");

    Tensor out(Shape{N, C, Ho, Wo});
    auto argmax = std::make_shared<std::vector<int>>(static_cast<size_t>(out.numel()));
    const float* x = input.data().data();
    float* y = out.data().data();
    int64_t oi = 0;
    for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
            const float* xc = x + (static_cast<int64_t>(n) * C + c) * H * W;
            for (int oy = 0; oy < Ho; ++oy) {
                for (int ox = 0; ox < Wo; ++ox, ++oi) {
                    float best = -std::numeric_limits<float>::infinity();
                    int best_idx = -1;
                    for (int i = 0; i < kernel.h; ++i) {
                        int yy = oy * stride.h - pad.h + i;
                        if (yy < 0 || yy >= H) continue;
                        for (int j = 0; j < kernel.w; ++j) {
                            int xx = ox * stride.w - pad.w + j;
                            if (xx < 0 || xx >= W) continue;
                            float v = xc[yy * W + xx];
                            if (v > best) {
                                best = v;
                                best_idx = yy * W + xx;
                            }
                        }
                    }
                    y[oi] = best;
                    (*argmax)[static_cast<size_t>(oi)] = best_idx;
                }
            }
        }
    }

    if (want_grad(tape, {&input})) {
        out.set_requires_grad(true);
        tape->track_output(out);
        Tensor x_in = input, o = out;
        tape->record([x_in, o, argmax]() mutable {
            const int H = x_in.dim(2), W = x_in.dim(3);
            const int64_t per_plane = static_cast<int64_t>(o.dim(2)) * o.dim(3);
            auto g = o.grad();
            auto gx = x_in.grad();
            for (int64_t oi = 0; oi < o.numel(); ++oi) {
                int64_t plane_idx = oi / per_plane; // n*C + c
                int64_t base = plane_idx * H * W;
                gx[static_cast<size_t>(base + (*argmax)[static_cast<size_t>(oi)])] +=
                    g[static_cast<size_t>(oi)];
            }
        });
    }
    return out;
}

Tensor avgpool2d(Tape* tape, const Tensor& input, Int2 kernel, Int2 stride, Int2 pad) {
    check_rank(input, 4, "avgpool2d input");
    const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const int Ho = conv_out_extent(H, kernel.h, stride.h, pad.h, "avgpool2d height");
    const int Wo = conv_out_extent(W, kernel.w, stride.w, pad.w, "avgpool2d width");
    const float inv_area = 1.0f / static_cast<float>(kernel.h * kernel.w);

    Tensor out(Shape{N, C, Ho, Wo});
    const float* x = input.data().data();
    float* y = out.data().data();
    int64_t oi = 0;
    for (int64_t pl = 0; pl < static_cast<int64_t>(N) * C; ++pl) {
        const float* xc = x + pl * H * W;
        for (int oy = 0; oy < Ho; ++oy) {
            for (int ox = 0; ox < Wo; ++ox, ++oi) {
                float acc = 0.0f;
                for (int i = 0; i < kernel.h; ++i) {
                    int yy = oy * stride.h - pad.h + i;
                    if (yy < 0 || yy >= H) continue;
                    for (int j = 0; j < kernel.w; ++j) {
                        int xx = ox * stride.w - pad.w + j;
                        if (xx >= 0 && xx < W) acc += xc[yy * W + xx];
                    }
                }
                y[oi] = acc * inv_area;
            }
        }
    }

    if (want_grad(tape, {&input})) {
        out.set_requires_grad(true);
        tape->track_output(out);
        Tensor x_in = input, o = out;
        Int2 k = kernel, s = stride, p = pad;
        tape->record([x_in, o, k, s, p, inv_area]() mutable {
            const int H = x_in.dim(2), W = x_in.dim(3);
            const int Ho = o.dim(2), Wo = o.dim(3);
            auto g = o.grad();
            auto gx = x_in.grad();
            int64_t oi = 0;
            for (int64_t pl = 0; pl < static_cast<int64_t>(o.dim(0)) * o.dim(1); ++pl) {
                float* gxc = gx.data() + pl * H * W;
                for (int oy = 0; oy < Ho; ++oy) {
                    for (int ox = 0; ox < Wo; ++ox, ++oi) {
                        float gv = g[static_cast<size_t>(oi)] * inv_area;
                        for (int i = 0; i < k.h; ++i) {
                            int yy = oy * s.h - p.h + i;
                            if (yy < 0 || yy >= H) continue;
                            for (int j = 0; j < k.w; ++j) {
                                int xx = ox * s.w - p.w + j;
                                if (xx >= 0 && xx < W) gxc[yy * W + xx] += gv;
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

Tensor adaptive_avgpool2d(Tape* tape, const Tensor& input, Int2 out_hw) {
    check_rank(input, 4, "adaptive_avgpool2d input");
    const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const int oh = out_hw.h, ow = out_hw.w;
    if (oh < 1 || ow < 1 || oh > H || ow > W) {
        throw ShapeError(cat("adaptive_avgpool2d target ", oh, "x", ow,
                             " must be within input ", H, "x", W));
    }

    auto lo = [](int i, int in, int out) { return (i * in) / out; };
    auto hi = [](int i, int in, int out) { return ((i + 1) * in + out - 1) / out; };

    Tensor out(Shape{N, C, oh, ow});
    const float* x = input.data().data();
    float* y = out.data().data();
    int64_t oi = 0;
    for (int64_t pl = 0; pl < static_cast<int64_t>(N) * C; ++pl) {
        const float* xc = x + pl * H * W;
        for (int i = 0; i < oh; ++i) {
            int y0 = lo(i, H, oh), y1 = hi(i, H, oh);
            for (int j = 0; j < ow; ++j, ++oi) {
                int x0 = lo(j, W, ow), x1 = hi(j, W, ow);
                float acc = 0.0f;
                for (int yy = y0; yy < y1; ++yy) {
                    for (int xx = x0; xx < x1; ++xx) acc += xc[yy * W + xx];
                }
                y[oi] = acc / static_cast<float>((y1 - y0) * (x1 - x0));
            }
        }
    }

    if (want_grad(tape, {&input})) {
        out.set_requires_grad(true);
        tape->track_output(out);
        Tensor x_in = input, o = out;
        tape->record([x_in, o, lo, hi]() mutable {
            const int H = x_in.dim(2), W = x_in.dim(3);
            const int oh = o.dim(2), ow = o.dim(3);
            auto g = o.grad();
            auto gx = x_in.grad();
            int64_t oi = 0;
            for (int64_t pl = 0; pl < static_cast<int64_t>(o.dim(0)) * o.dim(1); ++pl) {
                float* gxc = gx.data() + pl * H * W;
                for (int i = 0; i < oh; ++i) {
                    int y0 = lo(i, H, oh), y1 = hi(i, H, oh);
                    for (int j = 0; j < ow; ++j, ++oi) {
                        int x0 = lo(j, W, ow), x1 = hi(j, W, ow);
                        float gv = g[static_cast<size_t>(oi)] /
                                   static_cast<float>((y1 - y0) * (x1 - x0));
                        for (int yy = y0; yy < y1; ++yy) {
                            for (int xx = x0; xx < x1; ++xx) gxc[yy * W + xx] += gv;
                        }
                    }
                }
            }
        });
    }
    return out;
}

Tensor linear(Tape* tape, const Tensor& input, const Tensor& weight, const Tensor& bias) {
    check_rank(input, 2, "linear input");
    check_rank(weight, 2, "linear weight");
    const int N = input.dim(0), I = input.dim(1), O = weight.dim(0);
    if (weight.dim(1) != I) {
        throw ShapeError(cat("linear dimension mismatch: input features ", I,
                             " vs weight in-features ", weight.dim(1)));
    }
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != O)) {
        throw ShapeError(cat("linear bias must be [", O, "], got ", shape_str(bias.shape())));
    }

    Tensor out(Shape{N, O});
    CMapRM x(input.data().data(), N, I);
    CMapRM w(weight.data().data(), O, I);
    MapRM y(out.data().data(), N, O);
    y.noalias() = x * w.transpose();
    if (bias.defined()) {
        auto b = bias.data();
        for (int n = 0; n < N; ++n) {
            for (int o = 0; o < O; ++o) y(n, o) += b[static_cast<size_t>(o)];
        }
    }

    if (want_grad(tape, {&input, &weight, &bias})) {
        out.set_requires_grad(true);
        tape->track_output(out);
        Tensor xi = input, wi = weight, bi = bias, oi = out;
        tape->record([xi, wi, bi, oi]() mutable {
            const int N = xi.dim(0), I = xi.dim(1), O = wi.dim(0);
            CMapRM g(oi.grad().data(), N, O);
            if (xi.requires_grad()) {
                MapRM gx(xi.grad().data(), N, I);
                CMapRM w(wi.data().data(), O, I);
                gx.noalias() += g * w;
            }
            if (wi.requires_grad()) {
                MapRM gw(wi.grad().data(), O, I);
                CMapRM x(xi.data().data(), N, I);
                gw.noalias() += g.transpose() * x;
            }
            if (bi.defined() && bi.requires_grad()) {
                auto gb = bi.grad();
                for (int o = 0; o < O; ++o) gb[static_cast<size_t>(o)] += g.col(o).sum();
            }
        });
    }
    return out;
}

Tensor relu(Tape* tape, const Tensor& input) {
    Tensor out(input.shape());
    auto x = input.data();
    auto y = out.data();
    for (size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;

    if (want_grad(tape, {&input})) {
        out.set_requires_grad(true);
        tape->track_output(out);
        Tensor xi = input, oi = out;
        tape->record([xi, oi]() mutable {
            auto x = xi.data();
            auto g = oi.grad();
            auto gx = xi.grad();
            for (size_t i = 0; i < x.size(); ++i) {
                if (x[i] > 0.0f) gx[i] += g[i];
            }
        });
    }
    return out;
}

Tensor batchnorm2d(Tape* tape, const Tensor& input, const Tensor& gamma, const Tensor& beta,
                   BatchNormStats& stats, Phase phase, float momentum, float epsilon) {
    check_rank(input, 4, "batchnorm2d input");
    const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    if (gamma.rank() != 1 || gamma.dim(0) != C || beta.rank() != 1 || beta.dim(0) != C) {
        throw ShapeError(cat("batchnorm2d affine params must be [", C, "], got gamma ",
                             shape_str(gamma.shape()), ", beta ", shape_str(beta.shape())));
    }
    const int64_t M = static_cast<int64_t>(N) * H * W;
    if (phase == Phase::train && M < 2) {
        throw ValueError(cat("batchnorm2d train mode needs at least 2 values per channel, got ", M));
    }

    Tensor out(input.shape());
    const float* x = input.data().data();
    float* y = out.data().data();
    const float* g = gamma.data().data();
    const float* b = beta.data().data();
    const int64_t hw = static_cast<int64_t>(H) * W;

    if (phase == Phase::eval) {
        const float* rm = stats.running_mean.data().data();
        const float* rv = stats.running_var.data().data();
        for (int c = 0; c < C; ++c) {
            const float inv_std = 1.0f / std::sqrt(rv[c] + epsilon);
            const float sc = g[c] * inv_std;
            const float sh = b[c] - rm[c] * sc;
            for (int n = 0; n < N; ++n) {
                const float* xs = x + (static_cast<int64_t>(n) * C + c) * hw;
                float* ys = y + (static_cast<int64_t>(n) * C + c) * hw;
                for (int64_t i = 0; i < hw; ++i) ys[i] = xs[i] * sc + sh;
            }
        }
        if (want_grad(tape, {&input, &gamma, &beta})) {
            out.set_requires_grad(true);
            tape->track_output(out);
        tape->track_output(out);
            Tensor xi = input, gi = gamma, bi = beta, oi = out;
            Tensor rmc = stats.running_mean.clone(), rvc = stats.running_var.clone();
            tape->record([xi, gi, bi, oi, rmc, rvc, epsilon]() mutable {
                const int N = xi.dim(0), C = xi.dim(1);
                const int64_t hw = static_cast<int64_t>(xi.dim(2)) * xi.dim(3);
                auto go = oi.grad();
                const float* x = xi.data().data();
                const float* rm = rmc.data().data();
                const float* rv = rvc.data().data();
                const float* g = gi.data().data();
                for (int c = 0; c < C; ++c) {
                    const float inv_std = 1.0f / std::sqrt(rv[c] + epsilon);
                    double dg = 0.0, db = 0.0;
                    for (int n = 0; n < N; ++n) {
                        const int64_t base = (static_cast<int64_t>(n) * C + c) * hw;
                        for (int64_t i = 0; i < hw; ++i) {
                            const float gv = go[static_cast<size_t>(base + i)];
                            db += gv;
                            dg += gv * (x[base + i] - rm[c]) * inv_std;
                        }
                    }
                    if (xi.requires_grad()) {
                        auto gx = xi.grad();
                        const float sc = g[c] * inv_std;
                        for (int n = 0; n < N; ++n) {
                            const int64_t base = (static_cast<int64_t>(n) * C + c) * hw;
                            for (int64_t i = 0; i < hw; ++i) {
                                gx[static_cast<size_t>(base + i)] +=
                                    go[static_cast<size_t>(base + i)] * sc;
                            }
                        }
                    }
                    if (gi.requires_grad()) gi.grad()[static_cast<size_t>(c)] += static_cast<float>(dg);
                    if (bi.requires_grad()) bi.grad()[static_cast<size_t>(c)] += static_cast<float>(db);
                }
            });
        }
        return out;
    }

    // Train mode: normalize by batch statistics, then fold them into the
    // running estimates (unbiased variance goes into the running buffer).
    auto xhat = std::make_shared<std::vector<float>>(static_cast<size_t>(input.numel()));
    auto inv_std_c = std::make_shared<std::vector<float>>(static_cast<size_t>(C));
    float* rm = stats.running_mean.data().data();
    float* rv = stats.running_var.data().data();
    for (int c = 0; c < C; ++c) {
        double sum = 0.0;
        for (int n = 0; n < N; ++n) {
            const float* xs = x + (static_cast<int64_t>(n) * C + c) * hw;
            for (int64_t i = 0; i < hw; ++i) sum += xs[i];
        }
        const float mean = static_cast<float>(sum / static_cast<double>(M));
        double sq = 0.0;
        for (int n = 0; n < N; ++n) {
            const float* xs = x + (static_cast<int64_t>(n) * C + c) * hw;
            for (int64_t i = 0; i < hw; ++i) {
                const double d = xs[i] - mean;
                sq += d * d;
            }
        }
        const float var = static_cast<float>(sq / static_cast<double>(M));
        const float var_unbiased = static_cast<float>(sq / static_cast<double>(M - 1));
        const float inv_std = 1.0f / std::sqrt(var + epsilon);
        (*inv_std_c)[static_cast<size_t>(c)] = inv_std;
        rm[c] = (1.0f - momentum) * rm[c] + momentum * mean;
        rv[c] = (1.0f - momentum) * rv[c] + momentum * var_unbiased;
        for (int n = 0; n < N; ++n) {
            const int64_t base = (static_cast<int64_t>(n) * C + c) * hw;
            const float* xs = x + base;
            float* hs = xhat->data() + base;
            float* ys = y + base;
            for (int64_t i = 0; i < hw; ++i) {
                hs[i] = (xs[i] - mean) * inv_std;
                ys[i] = hs[i] * g[c] + b[c];
            }
        }
    }

    if (want_grad(tape, {&input, &gamma, &beta})) {
        out.set_requires_grad(true);
        tape->track_output(out);
        Tensor xi = input, gi = gamma, bi = beta, oi = out;
        tape->record([xi, gi, bi, oi, xhat, inv_std_c, M]() mutable {
            const int N = xi.dim(0), C = xi.dim(1);
            const int64_t hw = static_cast<int64_t>(xi.dim(2)) * xi.dim(3);
            auto go = oi.grad();
            const float* h = xhat->data();
            const float* g = gi.data().data();
            for (int c = 0; c < C; ++c) {
                double sum_g = 0.0, sum_gh = 0.0;
                for (int n = 0; n < N; ++n) {
                    const int64_t base = (static_cast<int64_t>(n) * C + c) * hw;
                    for (int64_t i = 0; i < hw; ++i) {
                        const double gv = go[static_cast<size_t>(base + i)];
                        sum_g += gv;
                        sum_gh += gv * h[base + i];
                    }
                }
                if (gi.requires_grad()) gi.grad()[static_cast<size_t>(c)] += static_cast<float>(sum_gh);
                if (bi.requires_grad()) bi.grad()[static_cast<size_t>(c)] += static_cast<float>(sum_g);
                if (xi.requires_grad()) {
                    auto gx = xi.grad();
                    const float inv_std = (*inv_std_c)[static_cast<size_t>(c)];
                    const float k = g[c] * inv_std / static_cast<float>(M);
                    const float mg = static_cast<float>(sum_g);
                    const float mgh = static_cast<float>(sum_gh);
                    for (int n = 0; n < N; ++n) {
                        const int64_t base = (static_cast<int64_t>(n) * C + c) * hw;
                        for (int64_t i = 0; i < hw; ++i) {
                            const float gv = go[static_cast<size_t>(base + i)];
                            gx[static_cast<size_t>(base + i)] +=
                                k * (static_cast<float>(M) * gv - mg - h[base + i] * mgh);
                        }
                    }
                }
            }
        });
    }
    return out;
}

Tensor concat_channels(Tape* tape, std::span<const Tensor> inputs) {
    if (inputs.empty()) throw ValueError("concat_channels needs at least one input");
    for (const Tensor& t : inputs) check_rank(t, 4, "concat_channels input");
    const int N = inputs[0].dim(0), H = inputs[0].dim(2), W = inputs[0].dim(3);
    int total_c = 0;
    for (size_t i = 0; i < inputs.size(); ++i) {
        const Tensor& t = inputs[i];
        if (t.dim(0) != N || t.dim(2) != H || t.dim(3) != W) {
            throw ShapeError(cat("concat_channels input ", i, " has shape ", shape_str(t.shape()),
                                 ", expected [", N, ",*,", H, ",", W, "]"));
        }
        total_c += t.dim(1);
    }

    Tensor out(Shape{N, total_c, H, W});
    const int64_t hw = static_cast<int64_t>(H) * W;
    float* y = out.data().data();
    int offset_c = 0;
    bool any_grad = false;
    for (const Tensor& t : inputs) {
        const int Ci = t.dim(1);
        const float* x = t.data().data();
        for (int n = 0; n < N; ++n) {
            std::copy(x + static_cast<int64_t>(n) * Ci * hw,
                      x + static_cast<int64_t>(n + 1) * Ci * hw,
                      y + (static_cast<int64_t>(n) * total_c + offset_c) * hw);
        }
        offset_c += Ci;
        any_grad = any_grad || t.requires_grad();
    }

    if (tape && any_grad) {
        out.set_requires_grad(true);
        tape->track_output(out);
        std::vector<Tensor> ins(inputs.begin(), inputs.end());
        Tensor o = out;
        tape->record([ins, o]() mutable {
            const int N = o.dim(0), total_c = o.dim(1);
            const int64_t hw = static_cast<int64_t>(o.dim(2)) * o.dim(3);
            auto g = o.grad();
            int offset_c = 0;
            for (Tensor& t : ins) {
                const int Ci = t.dim(1);
                if (t.requires_grad()) {
                    auto gx = t.grad();
                    for (int n = 0; n < N; ++n) {
                        const float* src =
                            g.data() + (static_cast<int64_t>(n) * total_c + offset_c) * hw;
                        float* dst = gx.data() + static_cast<int64_t>(n) * Ci * hw;
                        for (int64_t i = 0; i < Ci * hw; ++i) dst[i] += src[i];
                    }
                }
                offset_c += Ci;
            }
        });
    }
    return out;
}

Tensor dropout(Tape* tape, const Tensor& input, float p, Phase phase, Rng& rng) {
    if (p < 0.0f || p >= 1.0f) throw ValueError(cat("dropout p must be in [0,1), got ", p));
    if (phase == Phase::eval || p == 0.0f) return input;

    const float keep_scale = 1.0f / (1.0f - p);
    auto mask = std::make_shared<std::vector<float>>(static_cast<size_t>(input.numel()));
    Tensor out(input.shape());
    auto x = input.data();
    auto y = out.data();
    for (size_t i = 0; i < x.size(); ++i) {
        const float m = rng.uniform() < p ? 0.0f : keep_scale;
        (*mask)[i] = m;
        y[i] = x[i] * m;
    }

    if (want_grad(tape, {&input})) {
        out.set_requires_grad(true);
        tape->track_output(out);
        Tensor xi = input, oi = out;
        tape->record([xi, oi, mask]() mutable {
            auto g = oi.grad();
            auto gx = xi.grad();
            for (size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * (*mask)[i];
        });
    }
    return out;
}

Tensor softmax_cross_entropy(Tape* tape, const Tensor& logits, std::span<const int> labels) {
    check_rank(logits, 2, "softmax_cross_entropy logits");
    const int N = logits.dim(0), C = logits.dim(1);
    if (static_cast<int>(labels.size()) != N) {
        throw ShapeError(cat("expected ", N, " labels, got ", labels.size()));
    }
    for (int i = 0; i < N; ++i) {
        if (labels[static_cast<size_t>(i)] < 0 || labels[static_cast<size_t>(i)] >= C) {
            throw ValueError(cat("label ", labels[static_cast<size_t>(i)], " at row ", i,
                                 " out of range [0,", C, ")"));
        }
    }

    auto probs = std::make_shared<std::vector<float>>(static_cast<size_t>(logits.numel()));
    const float* x = logits.data().data();
    double total = 0.0;
    for (int n = 0; n < N; ++n) {
        const float* row = x + static_cast<int64_t>(n) * C;
        float m = row[0];
        for (int c = 1; c < C; ++c) m = std::max(m, row[c]);
        double se = 0.0;
        for (int c = 0; c < C; ++c) se += std::exp(static_cast<double>(row[c]) - m);
        const double lse = m + std::log(se);
        float* prow = probs->data() + static_cast<int64_t>(n) * C;
        for (int c = 0; c < C; ++c) {
            prow[c] = static_cast<float>(std::exp(static_cast<double>(row[c]) - lse));
        }
        total += lse - row[labels[static_cast<size_t>(n)]];
    }
    Tensor loss = Tensor::scalar(static_cast<float>(total / N));

    if (want_grad(tape, {&logits})) {
        loss.set_requires_grad(true);
        tape->track_output(loss);
        Tensor xi = logits, li = loss;
        std::vector<int> labs(labels.begin(), labels.end());
        tape->record([xi, li, probs, labs]() mutable {
            const int N = xi.dim(0), C = xi.dim(1);
            const float g = li.grad()[0];
            auto gx = xi.grad();
            const float inv_n = 1.0f / static_cast<float>(N);
            for (int n = 0; n < N; ++n) {
                const float* prow = probs->data() + static_cast<int64_t>(n) * C;
                float* grow = gx.data() + static_cast<int64_t>(n) * C;
                for (int c = 0; c < C; ++c) {
                    float delta = prow[c] - (c == labs[static_cast<size_t>(n)] ? 1.0f : 0.0f);
                    grow[c] += g * delta * inv_n;
                }
            }
        });
    }
    return loss;
}

Tensor flatten(Tape* tape, const Tensor& input) {
    if (input.rank() < 1) throw ShapeError("flatten needs at least rank 1");
    int64_t rest = input.numel() / input.dim(0);
    // A reshape view shares both data and grad storage with its input, so no
    // backward node is needed.
    (void)tape;
    return input.reshaped(Shape{input.dim(0), static_cast<int>(rest)});
}

Tensor sum(Tape* tape, const Tensor& input) {
    double acc = 0.0;
    for (float v : input.data()) acc += v;
    Tensor out = Tensor::scalar(static_cast<float>(acc));
    if (want_grad(tape, {&input})) {
        out.set_requires_grad(true);
        tape->track_output(out);
        Tensor xi = input, oi = out;
        tape->record([xi, oi]() mutable {
            const float g = oi.grad()[0];
            auto gx = xi.grad();
            for (size_t i = 0; i < gx.size(); ++i) gx[i] += g;
        });
    }
    return out;
}

Tensor mul(Tape* tape, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError(cat("mul shape mismatch: ", shape_str(a.shape()), " vs ",
                             shape_str(b.shape())));
    }
    Tensor out(a.shape());
    auto xa = a.data();
    auto xb = b.data();
    auto y = out.data();
    for (size_t i = 0; i < y.size(); ++i) y[i] = xa[i] * xb[i];
    if (want_grad(tape, {&a, &b})) {
        out.set_requires_grad(true);
        tape->track_output(out);
        Tensor ai = a, bi = b, oi = out;
        tape->record([ai, bi, oi]() mutable {
            auto g = oi.grad();
            if (ai.requires_grad()) {
                auto ga = ai.grad();
                auto xb = bi.data();
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * xb[i];
            }
            if (bi.requires_grad()) {
                auto gb = bi.grad();
                auto xa = ai.data();
                for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * xa[i];
            }
        });
    }
    return out;
}

Tensor scale(Tape* tape, const Tensor& input, float c) {
    Tensor out(input.shape());
    auto x = input.data();
    auto y = out.data();
    for (size_t i = 0; i < y.size(); ++i) y[i] = x[i] * c;
    if (want_grad(tape, {&input})) {
        out.set_requires_grad(true);
        tape->track_output(out);
        Tensor xi = input, oi = out;
        tape->record([xi, oi, c]() mutable {
            auto g = oi.grad();
            auto gx = xi.grad();
            for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * c;
        });
    }
    return out;
}

std::vector<int> argmax_rows(const Tensor& logits) {
    check_rank(logits, 2, "argmax input");
    const int N = logits.dim(0), C = logits.dim(1);
    std::vector<int> out(static_cast<size_t>(N));
    const float* x = logits.data().data();
    for (int n = 0; n < N; ++n) {
        const float* row = x + static_cast<int64_t>(n) * C;
        int best = 0;
        for (int c = 1; c < C; ++c) {
            if (row[c] > row[best]) best = c;
        }
        out[static_cast<size_t>(n)] = best;
    }
    return out;
}

} // namespace charbench
