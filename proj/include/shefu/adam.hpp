#pragma once

#include <cstdint>
#include <vector>

#include "shefu/tensor.hpp"

namespace shefu {

// Bias-corrected Adam. Moment tensors are kept per parameter, index-aligned
// with the parameter list handed to init().
template <typename S>
struct AdamStateT {
    double lr = 8e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    uint64_t step = 0;
    std::vector<TensorT<S>> m, v;

    void init(const std::vector<ParamT<S>*>& params) {
        m.clear();
        v.clear();
        for (const auto* p : params) {
            m.push_back(TensorT<S>::zeros(p->value.shape));
            v.push_back(TensorT<S>::zeros(p->value.shape));
        }
        step = 0;
    }
};

template <typename S>
void adam_step(std::vector<ParamT<S>*>& params, AdamStateT<S>& st) {
    if (params.size() != st.m.size() || params.size() != st.v.size())
        throw ContractError("adam_step: state not initialized for this parameter list");
    st.step += 1;
    const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
    for (size_t pi = 0; pi < params.size(); ++pi) {
        ParamT<S>& p = *params[pi];
        if (p.grad.shape != p.value.shape || st.m[pi].shape != p.value.shape)
            throw ContractError("adam_step: shape mismatch for parameter " + p.name);
        for (size_t i = 0; i < p.value.numel(); ++i) {
            double g = static_cast<double>(p.grad.data[i]);
            double mi = st.beta1 * static_cast<double>(st.m[pi].data[i]) + (1.0 - st.beta1) * g;
            double vi = st.beta2 * static_cast<double>(st.v[pi].data[i]) + (1.0 - st.beta2) * g * g;
            st.m[pi].data[i] = static_cast<S>(mi);
            st.v[pi].data[i] = static_cast<S>(vi);
            double mhat = mi / bc1;
            double vhat = vi / bc2;
            p.value.data[i] -= static_cast<S>(st.lr * mhat / (std::sqrt(vhat) + st.eps));
        }
    }
}

using AdamState = AdamStateT<float>;

}  // namespace shefu
