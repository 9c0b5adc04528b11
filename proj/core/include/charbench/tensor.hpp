#ifndef CHARBENCH_TENSOR_HPP
#define CHARBENCH_TENSOR_HPP

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "charbench/error.hpp"

namespace charbench {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Dense float32 tensor, row-major. Copies are shallow: they share the data
// and gradient buffers, so a parameter handle captured by a tape closure
// aliases the buffers the optimizer updates. Shape is fixed at construction;
// reshaped() gives a same-storage view with equal element count.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, float fill = 0.0f, bool requires_grad = false);
    Tensor(Shape shape, std::vector<float> data, bool requires_grad = false);

    static Tensor scalar(float v, bool requires_grad = false);

    bool defined() const { return data_ != nullptr; }
    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    int64_t numel() const { return data_ ? static_cast<int64_t>(data_->size()) : 0; }

    std::span<float> data() { return {data_->data(), data_->size()}; }
    std::span<const float> data() const { return {data_->data(), data_->size()}; }
    float item() const;

    bool requires_grad() const { return requires_grad_; }
    void set_requires_grad(bool b);

    bool has_grad() const { return grad_ != nullptr; }
    /// Allocates a zeroed gradient buffer if absent.
    void ensure_grad();
    std::span<float> grad();
    std::span<const float> grad() const;
    void zero_grad();
    void drop_grad() { grad_.reset(); }
    void accumulate_grad(std::span<const float> g);

    /// Same storage, new shape (element counts must agree).
    Tensor reshaped(Shape new_shape) const;
    /// Deep copy with fresh buffers (gradient not copied).
    Tensor clone() const;

private:
    Shape shape_;
    std::shared_ptr<std::vector<float>> data_;
    std::shared_ptr<std::vector<float>> grad_;
    bool requires_grad_ = false;
};

} // namespace charbench

#endif
