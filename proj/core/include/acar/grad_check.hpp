// Central-difference gradient verification. Instantiate with T=double for
// the 64-bit shadow mode (same code path, wider floats).

#pragma once

#include "acar/tensor.hpp"

namespace acar {

// fn must be deterministic (dropout in evaluation mode or fixed mask) and
// return a scalar tensor computed from `input`. Returns the max relative
// error between the analytic gradient and (f(x+eps)-f(x-eps))/(2 eps),
// with denominator max(|a|,|b|,1e-8).
template <typename T>
T finite_diff_check(const std::function<TensorPtrT<T>(const TensorPtrT<T>&)>& fn, const TensorPtrT<T>& input,
                    T eps) {
    const bool prev_rg = input->requires_grad;
    input->requires_grad = true;
    input->zero_grad();
    auto loss = fn(input);
    if (loss->numel() != 1) throw std::invalid_argument("finite_diff_check: fn must return a scalar");
    loss->backward();
    std::vector<T> analytic = input->grad;
    input->zero_grad();
    input->requires_grad = prev_rg;

    T max_rel = T(0);
    {
        NoGradGuard ng;
        for (std::size_t i = 0; i < input->numel(); ++i) {
            const T saved = input->data[i];
            input->data[i] = saved + eps;
            const T fp = fn(input)->item();
            input->data[i] = saved - eps;
            const T fm = fn(input)->item();
            input->data[i] = saved;
            const T fd = (fp - fm) / (T(2) * eps);
            const T an = analytic[i];
            const T denom = std::max({std::abs(fd), std::abs(an), T(1e-8)});
            max_rel = std::max(max_rel, std::abs(fd - an) / denom);
        }
    }
    return max_rel;
}

// Convenience overload for checks against a parameter of a larger model:
// the forward closure ignores its argument and recomputes the loss.
template <typename T>
T finite_diff_check(const std::function<TensorPtrT<T>()>& forward, const TensorPtrT<T>& wrt, T eps) {
    return finite_diff_check<T>([&forward](const TensorPtrT<T>&) { return forward(); }, wrt, eps);
}

}  // namespace acar
