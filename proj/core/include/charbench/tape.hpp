#ifndef CHARBENCH_TAPE_HPP
#define CHARBENCH_TAPE_HPP

#include <functional>
#include <vector>

#include "charbench/tensor.hpp"

namespace charbench {

// Reverse-mode gradient tape. Ops append one backward step per recorded
// node while the forward pass runs, so the node list is already in
// topological order; backward() walks it once, in reverse. A tape is
// single-threaded; independent tapes may run on independent threads.
class Tape {
public:
    /// Appends a backward step. Inputs of the step were recorded earlier.
    void record(std::function<void()> backward_step) {
        nodes_.push_back(std::move(backward_step));
    }

    /// Registers an op output. Leaf gradients accumulate across backward
    /// calls, but intermediates are transient per pass and get re-zeroed,
    /// otherwise a second backward would compound through them.
    void track_output(const Tensor& t) { outputs_.push_back(t); }

    size_t size() const { return nodes_.size(); }

    /// Fresh pass: clear transient op-output gradients (called before the
    /// loss gradient is seeded).
    void zero_output_grads() {
        for (Tensor& t : outputs_) t.zero_grad();
    }

    /// Runs every recorded step exactly once, newest first.
    void run_backward() {
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    }

private:
    std::vector<std::function<void()>> nodes_;
    std::vector<Tensor> outputs_;
};

/// Seeds d(loss)/d(loss) = 1 and propagates through the tape. Leaf
/// gradients accumulate across calls; zero them between optimizer steps.
void backward(Tensor& loss, Tape& tape);

} // namespace charbench

#endif
