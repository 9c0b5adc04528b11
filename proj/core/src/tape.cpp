#include "charbench/tape.hpp"

namespace charbench {

void backward(Tensor& loss, Tape& tape) {
    if (loss.numel() != 1) {
        throw ShapeError(cat("backward requires a scalar loss, got ", shape_str(loss.shape())));
    }
    tape.zero_output_grads();
    if (loss.requires_grad()) loss.grad()[0] += 1.0f;
    tape.run_backward();
}

} // namespace charbench
