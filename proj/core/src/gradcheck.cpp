#include "charbench/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace charbench {

namespace {

using Vec64 = std::vector<double>;

// ---- 64-bit reference forwards (naive loops, independent of the f32 path) ----

Vec64 conv64(const Vec64& x, int N, int C, int H, int W, const Vec64& w, int F, int kh, int kw,
             const Vec64& b, Int2 stride, Int2 pad) {
    const int Ho = (H + 2 * pad.h - kh) / stride.h + 1;
    const int Wo = (W + 2 * pad.w - kw) / stride.w + 1;
    Vec64 y(static_cast<size_t>(N) * F * Ho * Wo, 0.0);
    for (int n = 0; n < N; ++n)
        for (int f = 0; f < F; ++f)
            for (int oy = 0; oy < Ho; ++oy)
                for (int ox = 0; ox < Wo; ++ox) {
                    double acc = b.empty() ? 0.0 : b[static_cast<size_t>(f)];
                    for (int c = 0; c < C; ++c)
                        for (int i = 0; i < kh; ++i)
                            for (int j = 0; j < kw; ++j) {
                                int yy = oy * stride.h - pad.h + i;
                                int xx = ox * stride.w - pad.w + j;
                                if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
                                acc += x[((static_cast<size_t>(n) * C + c) * H + yy) * W + xx] *
                                       w[((static_cast<size_t>(f) * C + c) * kh + i) * kw + j];
                            }
                    y[((static_cast<size_t>(n) * F + f) * Ho + oy) * Wo + ox] = acc;
                }
    return y;
}

Vec64 maxpool64(const Vec64& x, int N, int C, int H, int W, Int2 k, Int2 s, Int2 p) {
    const int Ho = (H + 2 * p.h - k.h) / s.h + 1;
    const int Wo = (W + 2 * p.w - k.w) / s.w + 1;
    Vec64 y(static_cast<size_t>(N) * C * Ho * Wo);
    size_t oi = 0;
    for (int pl = 0; pl < N * C; ++pl)
        for (int oy = 0; oy < Ho; ++oy)
            for (int ox = 0; ox < Wo; ++ox, ++oi) {
                double best = -1e300;
                for (int i = 0; i < k.h; ++i)
                    for (int j = 0; j < k.w; ++j) {
                        int yy = oy * s.h - p.h + i;
                        int xx = ox * s.w - p.w + j;
                        if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
                        best = std::max(best, x[static_cast<size_t>(pl) * H * W + yy * W + xx]);
                    }
                y[oi] = best;
            }
    return y;
}

Vec64 avgpool64(const Vec64& x, int N, int C, int H, int W, Int2 k, Int2 s, Int2 p) {
    const int Ho = (H + 2 * p.h - k.h) / s.h + 1;
    const int Wo = (W + 2 * p.w - k.w) / s.w + 1;
    Vec64 y(static_cast<size_t>(N) * C * Ho * Wo);
    size_t oi = 0;
    for (int pl = 0; pl < N * C; ++pl)
        for (int oy = 0; oy < Ho; ++oy)
            for (int ox = 0; ox < Wo; ++ox, ++oi) {
                double acc = 0.0;
                for (int i = 0; i < k.h; ++i)
                    for (int j = 0; j < k.w; ++j) {
                        int yy = oy * s.h - p.h + i;
                        int xx = ox * s.w - p.w + j;
                        if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
                        acc += x[static_cast<size_t>(pl) * H * W + yy * W + xx];
                    }
                y[oi] = acc / (k.h * k.w);
            }
    return y;
}

Vec64 adaptpool64(const Vec64& x, int N, int C, int H, int W, int oh, int ow) {
    Vec64 y(static_cast<size_t>(N) * C * oh * ow);
    size_t oi = 0;
    for (int pl = 0; pl < N * C; ++pl)
        for (int i = 0; i < oh; ++i) {
            int y0 = i * H / oh, y1 = ((i + 1) * H + oh - 1) / oh;
            for (int j = 0; j < ow; ++j, ++oi) {
                int x0 = j * W / ow, x1 = ((j + 1) * W + ow - 1) / ow;
                double acc = 0.0;
                for (int yy = y0; yy < y1; ++yy)
                    for (int xx = x0; xx < x1; ++xx)
                        acc += x[static_cast<size_t>(pl) * H * W + yy * W + xx];
                y[oi] = acc / ((y1 - y0) * (x1 - x0));
            }
        }
    return y;
}

Vec64 linear64(const Vec64& x, int N, int I, const Vec64& w, int O, const Vec64& b) {
    Vec64 y(static_cast<size_t>(N) * O);
    for (int n = 0; n < N; ++n)
        for (int o = 0; o < O; ++o) {
            double acc = b.empty() ? 0.0 : b[static_cast<size_t>(o)];
            for (int i = 0; i < I; ++i)
                acc += x[static_cast<size_t>(n) * I + i] * w[static_cast<size_t>(o) * I + i];
            y[static_cast<size_t>(n) * O + o] = acc;
        }
    return y;
}

Vec64 batchnorm_train64(const Vec64& x, int N, int C, int H, int W, const Vec64& gamma,
                        const Vec64& beta, double eps) {
    const int64_t hw = static_cast<int64_t>(H) * W;
    const double M = static_cast<double>(N) * hw;
    Vec64 y(x.size());
    for (int c = 0; c < C; ++c) {
        double sum = 0.0;
        for (int n = 0; n < N; ++n)
            for (int64_t i = 0; i < hw; ++i) sum += x[(static_cast<size_t>(n) * C + c) * hw + i];
        const double mean = sum / M;
        double sq = 0.0;
        for (int n = 0; n < N; ++n)
            for (int64_t i = 0; i < hw; ++i) {
                double d = x[(static_cast<size_t>(n) * C + c) * hw + i] - mean;
                sq += d * d;
            }
        const double inv_std = 1.0 / std::sqrt(sq / M + eps);
        for (int n = 0; n < N; ++n)
            for (int64_t i = 0; i < hw; ++i) {
                size_t idx = (static_cast<size_t>(n) * C + c) * hw + i;
                y[idx] = (x[idx] - mean) * inv_std * gamma[static_cast<size_t>(c)] +
                         beta[static_cast<size_t>(c)];
            }
    }
    return y;
}

double softmax_ce64(const Vec64& x, int N, int C, const std::vector<int>& labels) {
    double total = 0.0;
    for (int n = 0; n < N; ++n) {
        const double* row = x.data() + static_cast<size_t>(n) * C;
        double m = row[0];
        for (int c = 1; c < C; ++c) m = std::max(m, row[c]);
        double se = 0.0;
        for (int c = 0; c < C; ++c) se += std::exp(row[c] - m);
        total += m + std::log(se) - row[labels[static_cast<size_t>(n)]];
    }
    return total / N;
}

// ---- sampling helpers ----

/// n distinct values evenly spaced over [lo, hi], shuffled: adjacent order
/// statistics stay (hi-lo)/(n-1) apart, keeping max windows stable under
/// the finite-difference step.
std::vector<float> spread_values(Rng& rng, int64_t n, double lo, double hi) {
    std::vector<float> v(static_cast<size_t>(n));
    if (n == 1) {
        v[0] = static_cast<float>((lo + hi) / 2);
        return v;
    }
    const double step = (hi - lo) / static_cast<double>(n - 1);
    for (int64_t i = 0; i < n; ++i) v[static_cast<size_t>(i)] = static_cast<float>(lo + step * i);
    rng.shuffle(v);
    return v;
}

std::vector<float> uniform_values(Rng& rng, int64_t n, double lo, double hi) {
    std::vector<float> v(static_cast<size_t>(n));
    for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
    return v;
}

Vec64 to64(const Tensor& t) {
    Vec64 v(static_cast<size_t>(t.numel()));
    auto d = t.data();
    for (size_t i = 0; i < v.size(); ++i) v[i] = d[i];
    return v;
}

/// Fixed random projection weights turning a tensor output into a scalar.
std::vector<float> projection(Rng& rng, int64_t n) { return uniform_values(rng, n, -1.0, 1.0); }

Tensor project_f32(Tape& tape, const Tensor& t, const std::vector<float>& w) {
    Tensor weights(t.shape(), std::vector<float>(w));
    return sum(&tape, mul(&tape, t, weights));
}

double project_f64(const Vec64& y, const std::vector<float>& w) {
    double acc = 0.0;
    for (size_t i = 0; i < y.size(); ++i) acc += y[i] * static_cast<double>(w[i]);
    return acc;
}

} // namespace

GradCheckResult grad_check(const GradCheckCase& c, double tolerance, double step) {
    GradCheckResult res;
    res.op_name = c.op_name;

    std::vector<Tensor> inputs = c.inputs;
    Tape tape;
    Tensor loss = c.forward(tape, inputs);
    backward(loss, tape);

    std::vector<Vec64> base;
    base.reserve(inputs.size());
    for (const Tensor& t : inputs) base.push_back(to64(t));

    double max_rel = 0.0;
    for (size_t i = 0; i < inputs.size(); ++i) {
        if (!inputs[i].requires_grad()) continue;
        auto analytic = inputs[i].grad();
        for (size_t j = 0; j < base[i].size(); ++j) {
            std::vector<Vec64> probe = base;
            probe[i][j] = base[i][j] + step;
            const double fp = c.forward64(probe);
            probe[i][j] = base[i][j] - step;
            const double fm = c.forward64(probe);
            const double numeric = (fp - fm) / (2.0 * step);
            const double rel = std::abs(static_cast<double>(analytic[j]) - numeric) /
                               std::max(1.0, std::abs(numeric));
            max_rel = std::max(max_rel, rel);
        }
    }
    res.max_rel_error = max_rel;
    res.passed = max_rel <= tolerance;
    return res;
}

const std::vector<std::string>& gradcheck_op_names() {
    static const std::vector<std::string> names = {
        "conv2d",          "linear",           "relu",
        "maxpool2d",       "avgpool2d",        "adaptive_avgpool2d",
        "batchnorm2d",     "concat_channels",  "dropout",
        "softmax_cross_entropy", "composite",
    };
    return names;
}

GradCheckCase make_gradcheck_case(const std::string& op_name, uint64_t seed) {
    Rng rng(hash_combine(seed, hash_str(op_name)));
    GradCheckCase c;
    c.op_name = op_name;

    if (op_name == "conv2d") {
        Tensor x(Shape{1, 2, 5, 5}, uniform_values(rng, 50, -1, 1), true);
        Tensor w(Shape{3, 2, 3, 3}, uniform_values(rng, 54, -1, 1), true);
        Tensor b(Shape{3}, uniform_values(rng, 3, -1, 1), true);
        auto pw = projection(rng, 1 * 3 * 5 * 5);
        c.inputs = {x, w, b};
        c.forward = [pw](Tape& t, std::vector<Tensor>& in) {
            return project_f32(t, conv2d(&t, in[0], in[1], in[2], {1, 1}, {1, 1}), pw);
        };
        c.forward64 = [pw](const std::vector<Vec64>& in) {
            return project_f64(conv64(in[0], 1, 2, 5, 5, in[1], 3, 3, 3, in[2], {1, 1}, {1, 1}), pw);
        };
    } else if (op_name == "linear") {
        Tensor x(Shape{2, 4}, uniform_values(rng, 8, -1, 1), true);
        Tensor w(Shape{3, 4}, uniform_values(rng, 12, -1, 1), true);
        Tensor b(Shape{3}, uniform_values(rng, 3, -1, 1), true);
        auto pw = projection(rng, 6);
        c.inputs = {x, w, b};
        c.forward = [pw](Tape& t, std::vector<Tensor>& in) {
            return project_f32(t, linear(&t, in[0], in[1], in[2]), pw);
        };
        c.forward64 = [pw](const std::vector<Vec64>& in) {
            return project_f64(linear64(in[0], 2, 4, in[1], 3, in[2]), pw);
        };
    } else if (op_name == "relu") {
        // magnitudes spaced in [0.05, 1], random signs: |x| stays clear of 0
        auto mags = spread_values(rng, 24, 0.05, 1.0);
        for (auto& m : mags) {
            if (rng.uniform() < 0.5) m = -m;
        }
        Tensor x(Shape{2, 3, 2, 2}, std::move(mags), true);
        auto pw = projection(rng, 24);
        c.inputs = {x};
        c.forward = [pw](Tape& t, std::vector<Tensor>& in) {
            return project_f32(t, relu(&t, in[0]), pw);
        };
        c.forward64 = [pw](const std::vector<Vec64>& in) {
            Vec64 y(in[0].size());
            for (size_t i = 0; i < y.size(); ++i) y[i] = in[0][i] > 0.0 ? in[0][i] : 0.0;
            return project_f64(y, pw);
        };
    } else if (op_name == "maxpool2d") {
        Tensor x(Shape{1, 1, 6, 6}, spread_values(rng, 36, -1, 1), true);
        auto pw = projection(rng, 9);
        c.inputs = {x};
        c.forward = [pw](Tape& t, std::vector<Tensor>& in) {
            return project_f32(t, maxpool2d(&t, in[0], {2, 2}, {2, 2}), pw);
        };
        c.forward64 = [pw](const std::vector<Vec64>& in) {
            return project_f64(maxpool64(in[0], 1, 1, 6, 6, {2, 2}, {2, 2}, {0, 0}), pw);
        };
    } else if (op_name == "avgpool2d") {
        Tensor x(Shape{1, 2, 5, 5}, uniform_values(rng, 50, -1, 1), true);
        auto pw = projection(rng, 2 * 3 * 3);
        c.inputs = {x};
        c.forward = [pw](Tape& t, std::vector<Tensor>& in) {
            return project_f32(t, avgpool2d(&t, in[0], {3, 3}, {2, 2}, {1, 1}), pw);
        };
        c.forward64 = [pw](const std::vector<Vec64>& in) {
            return project_f64(avgpool64(in[0], 1, 2, 5, 5, {3, 3}, {2, 2}, {1, 1}), pw);
        };
    } else if (op_name == "adaptive_avgpool2d") {
        Tensor x(Shape{1, 2, 7, 7}, uniform_values(rng, 98, -1, 1), true);
        auto pw = projection(rng, 2 * 3 * 3);
        c.inputs = {x};
        c.forward = [pw](Tape& t, std::vector<Tensor>& in) {
            return project_f32(t, adaptive_avgpool2d(&t, in[0], {3, 3}), pw);
        };
        c.forward64 = [pw](const std::vector<Vec64>& in) {
            return project_f64(adaptpool64(in[0], 1, 2, 7, 7, 3, 3), pw);
        };
    } else if (op_name == "batchnorm2d") {
        Tensor x(Shape{4, 3, 2, 2}, uniform_values(rng, 48, -1, 1), true);
        Tensor gamma(Shape{3}, uniform_values(rng, 3, 0.5, 1.5), true);
        Tensor beta(Shape{3}, uniform_values(rng, 3, -0.5, 0.5), true);
        auto pw = projection(rng, 48);
        const float eps = 1e-5f;
        c.inputs = {x, gamma, beta};
        c.forward = [pw, eps](Tape& t, std::vector<Tensor>& in) {
            BatchNormStats stats{Tensor(Shape{3}, 0.0f), Tensor(Shape{3}, 1.0f)};
            return project_f32(
                t, batchnorm2d(&t, in[0], in[1], in[2], stats, Phase::train, 0.1f, eps), pw);
        };
        c.forward64 = [pw, eps](const std::vector<Vec64>& in) {
            return project_f64(batchnorm_train64(in[0], 4, 3, 2, 2, in[1], in[2], eps), pw);
        };
    } else if (op_name == "concat_channels") {
        Tensor a(Shape{1, 2, 3, 3}, uniform_values(rng, 18, -1, 1), true);
        Tensor b(Shape{1, 3, 3, 3}, uniform_values(rng, 27, -1, 1), true);
        auto pw = projection(rng, 45);
        c.inputs = {a, b};
        c.forward = [pw](Tape& t, std::vector<Tensor>& in) {
            return project_f32(t, concat_channels(&t, std::span<const Tensor>(in.data(), 2)), pw);
        };
        c.forward64 = [pw](const std::vector<Vec64>& in) {
            Vec64 y = in[0];
            y.insert(y.end(), in[1].begin(), in[1].end());
            return project_f64(y, pw);
        };
    } else if (op_name == "dropout") {
        Tensor x(Shape{3, 8}, uniform_values(rng, 24, -1, 1), true);
        const float p = 0.3f;
        const uint64_t mask_seed = rng.next_u64();
        // Replay the exact mask the op will draw so both precisions agree.
        std::vector<double> mask(24);
        {
            Rng mrng(mask_seed);
            for (auto& m : mask) m = mrng.uniform() < p ? 0.0 : 1.0 / (1.0 - p);
        }
        auto pw = projection(rng, 24);
        c.inputs = {x};
        c.forward = [pw, p, mask_seed](Tape& t, std::vector<Tensor>& in) {
            Rng drng(mask_seed);
            return project_f32(t, dropout(&t, in[0], p, Phase::train, drng), pw);
        };
        c.forward64 = [pw, mask](const std::vector<Vec64>& in) {
            Vec64 y(in[0].size());
            for (size_t i = 0; i < y.size(); ++i) y[i] = in[0][i] * mask[i];
            return project_f64(y, pw);
        };
    } else if (op_name == "softmax_cross_entropy") {
        Tensor x(Shape{3, 5}, uniform_values(rng, 15, -2, 2), true);
        std::vector<int> labels(3);
        for (auto& l : labels) l = static_cast<int>(rng.uniform_int(0, 4));
        c.inputs = {x};
        c.forward = [labels](Tape& t, std::vector<Tensor>& in) {
            return softmax_cross_entropy(&t, in[0], labels);
        };
        c.forward64 = [labels](const std::vector<Vec64>& in) {
            return softmax_ce64(in[0], 3, 5, labels);
        };
    } else if (op_name == "composite") {
        // linear -> relu -> linear -> softmax CE; resample until every hidden
        // pre-activation is clear of the relu kink.
        std::vector<int> labels = {1, 2};
        for (uint64_t salt = 0;; ++salt) {
            Rng r(hash_combine(seed, hash_combine(hash_str("composite"), salt)));
            Tensor x(Shape{2, 6}, uniform_values(r, 12, -1, 1), true);
            Tensor w1(Shape{4, 6}, uniform_values(r, 24, -1, 1), true);
            Tensor b1(Shape{4}, uniform_values(r, 4, -0.5, 0.5), true);
            Tensor w2(Shape{3, 4}, uniform_values(r, 12, -1, 1), true);
            Tensor b2(Shape{3}, uniform_values(r, 3, -0.5, 0.5), true);
            Tensor hidden = linear(nullptr, x, w1, b1);
            bool clear = true;
            for (float v : hidden.data()) clear = clear && std::abs(v) > 0.02f;
            if (!clear) continue;
            c.inputs = {x, w1, b1, w2, b2};
            c.forward = [labels](Tape& t, std::vector<Tensor>& in) {
                Tensor h = relu(&t, linear(&t, in[0], in[1], in[2]));
                return softmax_cross_entropy(&t, linear(&t, h, in[3], in[4]), labels);
            };
            c.forward64 = [labels](const std::vector<Vec64>& in) {
                Vec64 h = linear64(in[0], 2, 6, in[1], 4, in[2]);
                for (auto& v : h) v = v > 0.0 ? v : 0.0;
                Vec64 logits = linear64(h, 2, 4, in[3], 3, in[4]);
                return softmax_ce64(logits, 2, 3, labels);
            };
            break;
        }
    } else {
        throw ValueError(cat("unknown gradcheck op '", op_name, "'"));
    }
    return c;
}

std::vector<GradCheckSummary> run_gradcheck_suite(const std::vector<std::string>& ops,
                                                  int num_seeds, double tolerance) {
    std::vector<GradCheckSummary> out;
    for (const std::string& op : ops) {
        GradCheckSummary s;
        s.op_name = op;
        s.passed = true;
        s.seeds = num_seeds;
        for (int i = 0; i < num_seeds; ++i) {
            GradCheckResult r = grad_check(make_gradcheck_case(op, 1000 + static_cast<uint64_t>(i)),
                                           tolerance);
            s.max_rel_error = std::max(s.max_rel_error, r.max_rel_error);
            s.passed = s.passed && r.passed;
        }
        out.push_back(std::move(s));
    }
    return out;
}

} // namespace charbench
