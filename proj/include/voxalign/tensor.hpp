#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "voxalign/common.hpp"

namespace voxalign {

namespace detail {
inline thread_local bool grad_mode = true;
}

inline bool grad_enabled() { return detail::grad_mode; }

// Disables graph construction for its scope (forward-only evaluation).
struct NoGradGuard {
  NoGradGuard() : prev_(detail::grad_mode) { detail::grad_mode = false; }
  ~NoGradGuard() { detail::grad_mode = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <class T>
struct TensorT;

template <class T>
using TensorPtrT = std::shared_ptr<TensorT<T>>;

// A 2-D tensor node in a reverse-mode autodiff graph. Non-leaf nodes hold
// their inputs in `parents` and a `backward_fn` that scatters this node's
// grad into the parents' grads. backward() zeroes grads of every node it
// reaches, so gradients are fresh per call rather than accumulated across
// calls.
template <class T>
struct TensorT {
  int64_t rows = 0;
  int64_t cols = 0;
  std::vector<T> data;
  bool requires_grad = false;
  std::vector<T> grad;
  std::vector<TensorPtrT<T>> parents;
  std::function<void()> backward_fn;

  int64_t numel() const { return rows * cols; }
  T& at(int64_t r, int64_t c) { return data[r * cols + c]; }
  const T& at(int64_t r, int64_t c) const { return data[r * cols + c]; }
  T* row_ptr(int64_t r) { return data.data() + r * cols; }
  const T* row_ptr(int64_t r) const { return data.data() + r * cols; }
  T value() const {
    require(numel() == 1, "Tensor::value: tensor is not scalar");
    return data[0];
  }

  void ensure_grad() {
    if (static_cast<int64_t>(grad.size()) != numel()) grad.assign(numel(), T(0));
  }
  void zero_grad() { grad.assign(numel(), T(0)); }
};

template <class T>
TensorPtrT<T> tensor(int64_t rows, int64_t cols, bool requires_grad = false) {
  require(rows >= 1 && cols >= 1, "tensor: dimensions must be positive");
  auto t = std::make_shared<TensorT<T>>();
  t->rows = rows;
  t->cols = cols;
  t->data.assign(rows * cols, T(0));
  t->requires_grad = requires_grad;
  return t;
}

template <class T>
TensorPtrT<T> tensor_from(int64_t rows, int64_t cols, std::vector<T> data,
                          bool requires_grad = false) {
  require(rows >= 1 && cols >= 1, "tensor_from: dimensions must be positive");
  require(static_cast<int64_t>(data.size()) == rows * cols,
          "tensor_from: data size does not match shape");
  auto t = std::make_shared<TensorT<T>>();
  t->rows = rows;
  t->cols = cols;
  t->data = std::move(data);
  t->requires_grad = requires_grad;
  return t;
}

template <class T>
TensorPtrT<T> from_matrix(const Matrix& m, bool requires_grad = false) {
  auto t = tensor<T>(m.rows, m.cols, requires_grad);
  for (int64_t i = 0; i < m.numel(); ++i) t->data[i] = static_cast<T>(m.data[i]);
  return t;
}

inline Matrix to_matrix(const TensorT<float>& t) {
  Matrix m(t.rows, t.cols);
  m.data = t.data;
  return m;
}

// Reverse-mode pass from a scalar root. Zeroes the grad of every reachable
// node, seeds the root with 1, and runs backward_fns in reverse topological
// order. Nodes that do not require grad are never visited.
template <class T>
void backward(const TensorPtrT<T>& root) {
  require(root != nullptr, "backward: null root");
  require(root->numel() == 1, "backward: root must be a scalar");
  require(root->requires_grad, "backward: root does not require grad");

  std::vector<TensorT<T>*> order;  // postorder: inputs before outputs
  std::unordered_set<TensorT<T>*> seen;
  std::vector<std::pair<TensorT<T>*, size_t>> stack;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto* node = stack.back().first;
    size_t idx = stack.back().second;
    if (idx < node->parents.size()) {
      ++stack.back().second;
      TensorT<T>* p = node->parents[idx].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (auto* n : order) {
    n->ensure_grad();
    std::fill(n->grad.begin(), n->grad.end(), T(0));
  }
  root->grad[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn();
  }
}

namespace detail {

// Child-node factory: links parents and enables grad only when some parent
// requires it and grad mode is on.
template <class T>
TensorPtrT<T> make_node(int64_t rows, int64_t cols,
                        std::vector<TensorPtrT<T>> parents) {
  auto out = tensor<T>(rows, cols);
  if (voxalign::grad_enabled()) {
    for (const auto& p : parents) out->requires_grad |= p->requires_grad;
  }
  if (out->requires_grad) out->parents = std::move(parents);
  return out;
}

}  // namespace detail

using Tensor = TensorT<float>;
using TensorPtr = TensorPtrT<float>;

}  // namespace voxalign
