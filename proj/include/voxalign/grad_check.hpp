#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "voxalign/common.hpp"
#include "voxalign/tensor.hpp"

namespace voxalign {

// Central-difference gradient check. `f` rebuilds and returns the scalar loss
// node from the current contents of `inputs` on every call, so it must be
// deterministic (fixed RNG streams, eval-mode dropout). Returns the maximum
// over all coordinates of
//   |analytic - numeric| / (|analytic| + |numeric| + 1e-8).
template <class T>
T grad_check(const std::function<TensorPtrT<T>()>& f,
             const std::vector<TensorPtrT<T>>& inputs, T eps) {
  require(eps > T(0), "grad_check: eps must be positive");
  auto eval = [&]() -> T {
    NoGradGuard ng;
    T v = f()->value();
    if (!std::isfinite(static_cast<double>(v)))
      throw NumericError("grad_check: non-finite function value");
    return v;
  };

  auto root = f();
  require(root->numel() == 1, "grad_check: f must return a scalar");
  backward(root);
  std::vector<std::vector<T>> analytic;
  for (const auto& x : inputs) {
    require(x->requires_grad, "grad_check: input does not require grad");
    analytic.push_back(x->grad);
  }

  T worst = 0;
  for (size_t xi = 0; xi < inputs.size(); ++xi) {
    auto& x = *inputs[xi];
    for (int64_t i = 0; i < x.numel(); ++i) {
      const T saved = x.data[i];
      x.data[i] = saved + eps;
      const T fp = eval();
      x.data[i] = saved - eps;
      const T fm = eval();
      x.data[i] = saved;
      const T numeric = (fp - fm) / (T(2) * eps);
      const T a = analytic[xi][i];
      const T rel = std::abs(a - numeric) /
                    (std::abs(a) + std::abs(numeric) + T(1e-8));
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

template <class T>
T grad_check(const std::function<TensorPtrT<T>()>& f, const TensorPtrT<T>& x,
             T eps) {
  return grad_check<T>(f, std::vector<TensorPtrT<T>>{x}, eps);
}

}  // namespace voxalign
