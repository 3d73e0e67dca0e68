#pragma once

#include <functional>
#include <vector>

#include "sparsegrasp/tensor.hpp"

namespace sg {

// Reverse-mode tape. Ops push a backward closure when any input requires a
// gradient; backward() replays them in reverse. The tape owns shared_ptr
// references to every tensor it touches, so intermediates stay alive until
// clear().
class Tape {
public:
    void record(std::function<void()> backward_fn) {
        ops_.push_back(std::move(backward_fn));
    }

    // Seeds d(loss)/d(loss) = 1 and propagates.
    void backward(const TensorPtr& loss) {
        loss->ensure_grad();
        for (auto& gi : loss->g) gi = 1.0f;
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
    }

    void clear() { ops_.clear(); }
    size_t size() const { return ops_.size(); }

private:
    std::vector<std::function<void()>> ops_;
};

}  // namespace sg
