#pragma once

#include <string>
#include <utility>
#include <vector>

#include "smskd/errors.hpp"
#include "smskd/tensor.hpp"

namespace smskd {

// Per-parameter momentum buffers, aligned positionally with the parameter
// list handed to sgd_step.
template <typename T>
struct SgdState {
    std::vector<std::vector<T>> velocity;
};

// v <- momentum*v + grad + weight_decay*param; param <- param - lr*v
template <typename T>
void sgd_step(std::vector<std::pair<std::string, Tensor<T>>>& params, SgdState<T>& state, T lr,
              T momentum, T weight_decay) {
    if (state.velocity.empty()) {
        state.velocity.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i) {
            state.velocity[i].assign(static_cast<size_t>(params[i].second.numel()), T(0));
        }
    }
    if (state.velocity.size() != params.size()) {
        throw ContractError("sgd_step: state tracks " + std::to_string(state.velocity.size()) +
                            " parameters, got " + std::to_string(params.size()));
    }
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor<T>& p = params[i].second;
        std::vector<T>& v = state.velocity[i];
        if (v.size() != p.values().size()) {
            throw ContractError("sgd_step: velocity shape mismatch for " + params[i].first);
        }
        const std::vector<T>& g = p.grad();
        for (size_t j = 0; j < v.size(); ++j) {
            v[j] = momentum * v[j] + g[j] + weight_decay * p.values()[j];
            p.values()[j] -= lr * v[j];
        }
    }
}

}  // namespace smskd
