#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "smskd/errors.hpp"
#include "smskd/tensor.hpp"

namespace smskd {

// Ordered record of executed primitives. Because every node is appended after
// its inputs exist, replaying the record back-to-front is a reverse
// topological pass that visits each node exactly once. Each closure reads the
// output's grad buffer and accumulates (+=) into its inputs' grad buffers;
// zeroing leaf grads between optimizer steps is the caller's job.
template <typename T>
class GradTape {
  public:
    void record(std::function<void()> backward_fn) { nodes_.push_back(std::move(backward_fn)); }

    size_t size() const { return nodes_.size(); }

    void backward(Tensor<T>& loss) {
        if (loss.numel() != 1) {
            throw ContractError("backward requires a scalar loss, got shape " +
                                shape_str(loss.shape()));
        }
        if (!loss.requires_grad()) {
            throw ContractError("backward called on a loss that does not require grad");
        }
        loss.grad()[0] += T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            (*it)();
        }
    }

    void clear() { nodes_.clear(); }

  private:
    std::vector<std::function<void()>> nodes_;
};

}  // namespace smskd
