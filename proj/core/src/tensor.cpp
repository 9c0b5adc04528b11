#include "charbench/tensor.hpp"

#include <numeric>

namespace charbench {

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    out += "]";
    return out;
}

Tensor::Tensor(Shape shape, float fill, bool requires_grad)
    : shape_(std::move(shape)), requires_grad_(requires_grad) {
    for (int d : shape_) {
        if (d <= 0) throw ShapeError(cat("tensor dims must be positive, got ", shape_str(shape_)));
    }
    data_ = std::make_shared<std::vector<float>>(static_cast<size_t>(shape_numel(shape_)), fill);
    if (requires_grad_) ensure_grad();
}

Tensor::Tensor(Shape shape, std::vector<float> data, bool requires_grad)
    : shape_(std::move(shape)), requires_grad_(requires_grad) {
    for (int d : shape_) {
        if (d <= 0) throw ShapeError(cat("tensor dims must be positive, got ", shape_str(shape_)));
    }
    if (shape_numel(shape_) != static_cast<int64_t>(data.size())) {
        throw ShapeError(cat("data length ", data.size(), " does not match shape ", shape_str(shape_)));
    }
    data_ = std::make_shared<std::vector<float>>(std::move(data));
    if (requires_grad_) ensure_grad();
}

Tensor Tensor::scalar(float v, bool requires_grad) {
    return Tensor(Shape{1}, std::vector<float>{v}, requires_grad);
}

float Tensor::item() const {
    if (numel() != 1) throw ShapeError(cat("item() on non-scalar tensor ", shape_str(shape_)));
    return (*data_)[0];
}

// requires_grad implies the gradient buffer exists: handle copies are
// shallow, so the buffer must be in place before closures capture them.
void Tensor::set_requires_grad(bool b) {
    requires_grad_ = b;
    if (b && data_) {
        ensure_grad();
    } else if (!b) {
        grad_.reset();
    }
}

void Tensor::ensure_grad() {
    if (!grad_) grad_ = std::make_shared<std::vector<float>>(data_->size(), 0.0f);
}

std::span<float> Tensor::grad() {
    ensure_grad();
    return {grad_->data(), grad_->size()};
}

std::span<const float> Tensor::grad() const {
    if (!grad_) throw ValueError("gradient buffer not populated");
    return {grad_->data(), grad_->size()};
}

void Tensor::zero_grad() {
    if (grad_) std::fill(grad_->begin(), grad_->end(), 0.0f);
}

void Tensor::accumulate_grad(std::span<const float> g) {
    ensure_grad();
    if (g.size() != grad_->size()) {
        throw ShapeError(cat("gradient length ", g.size(), " does not match tensor ", shape_str(shape_)));
    }
    float* dst = grad_->data();
    for (size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

Tensor Tensor::reshaped(Shape new_shape) const {
    if (shape_numel(new_shape) != numel()) {
        throw ShapeError(cat("cannot reshape ", shape_str(shape_), " to ", shape_str(new_shape)));
    }
    Tensor t;
    t.shape_ = std::move(new_shape);
    t.data_ = data_;
    t.grad_ = grad_;
    t.requires_grad_ = requires_grad_;
    return t;
}

Tensor Tensor::clone() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = std::make_shared<std::vector<float>>(*data_);
    t.requires_grad_ = requires_grad_;
    if (t.requires_grad_) t.ensure_grad();
    return t;
}

} // namespace charbench
