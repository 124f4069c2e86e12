#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "voxalign/common.hpp"
#include "voxalign/tensor.hpp"

namespace voxalign {

// Named trainable leaves, in a stable registration order that doubles as the
// checkpoint manifest order.
template <class T>
struct ParamSetT {
  std::vector<std::pair<std::string, TensorPtrT<T>>> items;

  TensorPtrT<T> add(const std::string& name, int64_t rows, int64_t cols) {
    require(find(name) == nullptr, "ParamSet: duplicate name " + name);
    auto t = tensor<T>(rows, cols, true);
    items.emplace_back(name, t);
    return t;
  }

  TensorPtrT<T> find(const std::string& name) const {
    for (const auto& [n, t] : items)
      if (n == name) return t;
    return nullptr;
  }

  TensorPtrT<T> get(const std::string& name) const {
    auto t = find(name);
    require(t != nullptr, "ParamSet: unknown name " + name);
    return t;
  }

  int64_t total_count() const {
    int64_t n = 0;
    for (const auto& [name, t] : items) n += t->numel();
    return n;
  }

  void zero_grad() {
    for (auto& [name, t] : items) {
      t->ensure_grad();
      t->zero_grad();
    }
  }
};

using ParamSet = ParamSetT<float>;

// AdamW with decoupled weight decay and bias correction. Moment buffers are
// lazily shaped on the first step; an update with any non-finite gradient is
// rejected before any state is touched.
template <class T>
struct AdamWT {
  T lr = T(3e-4);
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps = T(1e-8);
  T weight_decay = T(0.01);
  int64_t step_count = 0;
  std::vector<std::vector<T>> m, v;

  void step(ParamSetT<T>& params) {
    const size_t n = params.items.size();
    if (m.empty()) {
      m.resize(n);
      v.resize(n);
      for (size_t i = 0; i < n; ++i) {
        m[i].assign(params.items[i].second->numel(), T(0));
        v[i].assign(params.items[i].second->numel(), T(0));
      }
    }
    require(m.size() == n, "AdamW: parameter set changed size");
    for (size_t i = 0; i < n; ++i) {
      auto& t = *params.items[i].second;
      t.ensure_grad();
      if (!all_finite(t.grad))
        throw NumericError("AdamW: non-finite gradient in " +
                           params.items[i].first);
    }
    ++step_count;
    const T bc1 = T(1) - std::pow(beta1, T(step_count));
    const T bc2 = T(1) - std::pow(beta2, T(step_count));
    for (size_t i = 0; i < n; ++i) {
      auto& t = *params.items[i].second;
      for (int64_t j = 0; j < t.numel(); ++j) {
        const T g = t.grad[j];
        m[i][j] = beta1 * m[i][j] + (T(1) - beta1) * g;
        v[i][j] = beta2 * v[i][j] + (T(1) - beta2) * g * g;
        const T mhat = m[i][j] / bc1;
        const T vhat = v[i][j] / bc2;
        t.data[j] -= lr * (mhat / (std::sqrt(vhat) + eps) +
                           weight_decay * t.data[j]);
      }
    }
  }
};

using AdamW = AdamWT<float>;

}  // namespace voxalign
