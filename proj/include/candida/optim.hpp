#pragma once

#include "candida/nn.hpp"

#include <cmath>
#include <map>
#include <string>

namespace candida {

// Adam with bias correction; frozen parameters (trainable == false) are skipped.
template <typename T>
struct Adam {
    ParamStore<T>* store;
    T lr, beta1, beta2, eps;
    int64_t t = 0;
    std::map<std::string, Tensor<T>> m, v;

    explicit Adam(ParamStore<T>& ps, T lr_ = T(3e-4), T b1 = T(0.9), T b2 = T(0.999),
                  T eps_ = T(1e-8))
        : store(&ps), lr(lr_), beta1(b1), beta2(b2), eps(eps_) {}

    void zero_grad() { store->zero_grad(); }

    void step() {
        ++t;
        T bc1 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta1), static_cast<double>(t)));
        T bc2 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta2), static_cast<double>(t)));
        for (auto& [name, p] : store->params) {
            if (!p->trainable) continue;
            if (p->grad.data.empty()) continue;
            auto& mi = m.try_emplace(name, Tensor<T>::zeros(p->value.shape)).first->second;
            auto& vi = v.try_emplace(name, Tensor<T>::zeros(p->value.shape)).first->second;
            for (int64_t i = 0; i < p->value.numel(); ++i) {
                T g = p->grad[i];
                mi[i] = beta1 * mi[i] + (T(1) - beta1) * g;
                vi[i] = beta2 * vi[i] + (T(1) - beta2) * g * g;
                T mhat = mi[i] / bc1;
                T vhat = vi[i] / bc2;
                p->value[i] -= lr * mhat / (static_cast<T>(std::sqrt(static_cast<double>(vhat))) + eps);
            }
        }
    }
};

}  // namespace candida
