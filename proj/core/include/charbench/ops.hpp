#ifndef CHARBENCH_OPS_HPP
#define CHARBENCH_OPS_HPP

#include <span>

#include "charbench/rng.hpp"
#include "charbench/tape.hpp"
#include "charbench/tensor.hpp"

namespace charbench {

/// (h, w) pair for kernels, strides, paddings and pool targets.
struct Int2 {
    int h = 1;
    int w = 1;
};

enum class Phase { train, eval };

// Every op runs the forward pass and, when `tape` is non-null and an input
// requires grad, records its backward rule. With tape == nullptr the ops are
// pure forward evaluation. Gradients accumulate into leaf grad buffers.

/// 2-D convolution, NCHW. `bias` may be an undefined tensor for bias-free
/// convs. Output HxW = floor((in + 2*pad - kernel)/stride) + 1.
Tensor conv2d(Tape* tape, const Tensor& input, const Tensor& weight, const Tensor& bias,
              Int2 stride, Int2 pad);

/// Max pooling; padded cells never win. Ties route the gradient to the
/// first maximal element in row-major window order.
Tensor maxpool2d(Tape* tape, const Tensor& input, Int2 kernel, Int2 stride, Int2 pad = {0, 0});

/// Average pooling; the divisor is the full kernel area (padded cells count
/// as zeros).
Tensor avgpool2d(Tape* tape, const Tensor& input, Int2 kernel, Int2 stride, Int2 pad = {0, 0});

/// Adaptive average pooling to out_hw; cell (i,j) averages the region
/// [floor(i*H/oh), ceil((i+1)*H/oh)) x same for W. Requires out <= in.
Tensor adaptive_avgpool2d(Tape* tape, const Tensor& input, Int2 out_hw);

/// out = input * weight^T + bias. input [N,I], weight [O,I], bias [O].
Tensor linear(Tape* tape, const Tensor& input, const Tensor& weight, const Tensor& bias);

/// Elementwise max(0, x); subgradient 0 at x == 0.
Tensor relu(Tape* tape, const Tensor& input);

struct BatchNormStats {
    Tensor running_mean; // [C]
    Tensor running_var;  // [C]
};

/// Per-channel batch normalization over NCHW input. Train mode normalizes by
/// batch statistics (biased variance) and folds the batch mean/unbiased
/// variance into the running stats as new = (1-momentum)*old + momentum*batch;
/// eval mode normalizes by the running stats. Train mode needs N*H*W >= 2.
Tensor batchnorm2d(Tape* tape, const Tensor& input, const Tensor& gamma, const Tensor& beta,
                   BatchNormStats& stats, Phase phase, float momentum = 0.1f,
                   float epsilon = 1e-5f);

/// Channel-axis concatenation; all inputs must agree on N, H, W.
Tensor concat_channels(Tape* tape, std::span<const Tensor> inputs);

/// Train mode zeroes each element with probability p and scales survivors by
/// 1/(1-p), mask drawn from `rng`; eval mode is the identity. 0 <= p < 1.
Tensor dropout(Tape* tape, const Tensor& input, float p, Phase phase, Rng& rng);

/// Mean over the batch of -log softmax(logits)[label], max-subtracted for
/// stability. logits [N,C]; gradient is (softmax - onehot)/N.
Tensor softmax_cross_entropy(Tape* tape, const Tensor& logits, std::span<const int> labels);

/// [N, d1, d2, ...] -> [N, d1*d2*...].
Tensor flatten(Tape* tape, const Tensor& input);

/// Scalar sum of all elements.
Tensor sum(Tape* tape, const Tensor& input);

/// Elementwise product; shapes must match.
Tensor mul(Tape* tape, const Tensor& a, const Tensor& b);

/// c * x.
Tensor scale(Tape* tape, const Tensor& input, float c);

/// Row-wise argmax of [N,C] logits, first index on ties.
std::vector<int> argmax_rows(const Tensor& logits);

/// Output extent of a conv/pool axis; throws on non-positive result.
int conv_out_extent(int in, int kernel, int stride, int pad, const char* what);

} // namespace charbench

#endif
