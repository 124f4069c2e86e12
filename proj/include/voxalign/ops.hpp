#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "voxalign/common.hpp"
#include "voxalign/gemm.hpp"
#include "voxalign/rng.hpp"
#include "voxalign/tensor.hpp"

// Differentiable operations. Each op computes its forward result eagerly and,
// when the output requires grad, installs a backward_fn that adds into the
// parents' grad buffers. Raw pointers captured by the lambdas stay valid
// because the graph root keeps every parent alive through shared_ptr chains.

namespace voxalign {

namespace detail {

template <class T>
void check_same_shape(const TensorPtrT<T>& a, const TensorPtrT<T>& b,
                      const char* op) {
  require_shape(a->rows == b->rows && a->cols == b->cols, op);
}

}  // namespace detail

template <class T>
TensorPtrT<T> add(const TensorPtrT<T>& a, const TensorPtrT<T>& b) {
  detail::check_same_shape(a, b, "add: shape mismatch");
  auto out = detail::make_node<T>(a->rows, a->cols, {a, b});
  for (int64_t i = 0; i < a->numel(); ++i) out->data[i] = a->data[i] + b->data[i];
  if (out->requires_grad) {
    auto *ar = a.get(), *br = b.get(), *o = out.get();
    out->backward_fn = [ar, br, o] {
      if (ar->requires_grad)
        for (int64_t i = 0; i < o->numel(); ++i) ar->grad[i] += o->grad[i];
      if (br->requires_grad)
        for (int64_t i = 0; i < o->numel(); ++i) br->grad[i] += o->grad[i];
    };
  }
  return out;
}

template <class T>
TensorPtrT<T> sub(const TensorPtrT<T>& a, const TensorPtrT<T>& b) {
  detail::check_same_shape(a, b, "sub: shape mismatch");
  auto out = detail::make_node<T>(a->rows, a->cols, {a, b});
  for (int64_t i = 0; i < a->numel(); ++i) out->data[i] = a->data[i] - b->data[i];
  if (out->requires_grad) {
    auto *ar = a.get(), *br = b.get(), *o = out.get();
    out->backward_fn = [ar, br, o] {
      if (ar->requires_grad)
        for (int64_t i = 0; i < o->numel(); ++i) ar->grad[i] += o->grad[i];
      if (br->requires_grad)
        for (int64_t i = 0; i < o->numel(); ++i) br->grad[i] -= o->grad[i];
    };
  }
  return out;
}

template <class T>
TensorPtrT<T> mul(const TensorPtrT<T>& a, const TensorPtrT<T>& b) {
  detail::check_same_shape(a, b, "mul: shape mismatch");
  auto out = detail::make_node<T>(a->rows, a->cols, {a, b});
  for (int64_t i = 0; i < a->numel(); ++i) out->data[i] = a->data[i] * b->data[i];
  if (out->requires_grad) {
    auto *ar = a.get(), *br = b.get(), *o = out.get();
    out->backward_fn = [ar, br, o] {
      if (ar->requires_grad)
        for (int64_t i = 0; i < o->numel(); ++i)
          ar->grad[i] += o->grad[i] * br->data[i];
      if (br->requires_grad)
        for (int64_t i = 0; i < o->numel(); ++i)
          br->grad[i] += o->grad[i] * ar->data[i];
    };
  }
  return out;
}

template <class T>
TensorPtrT<T> scale(const TensorPtrT<T>& a, T c) {
  auto out = detail::make_node<T>(a->rows, a->cols, {a});
  for (int64_t i = 0; i < a->numel(); ++i) out->data[i] = c * a->data[i];
  if (out->requires_grad) {
    auto *ar = a.get(), *o = out.get();
    out->backward_fn = [ar, o, c] {
      for (int64_t i = 0; i < o->numel(); ++i) ar->grad[i] += c * o->grad[i];
    };
  }
  return out;
}

// out[r,c] = x[r,c] + b[0,c]
template <class T>
TensorPtrT<T> add_rowvec(const TensorPtrT<T>& x, const TensorPtrT<T>& b) {
  require_shape(b->rows == 1 && b->cols == x->cols,
                "add_rowvec: bias must be [1, cols]");
  auto out = detail::make_node<T>(x->rows, x->cols, {x, b});
  for (int64_t r = 0; r < x->rows; ++r)
    for (int64_t c = 0; c < x->cols; ++c)
      out->at(r, c) = x->at(r, c) + b->data[c];
  if (out->requires_grad) {
    auto *xr = x.get(), *br = b.get(), *o = out.get();
    out->backward_fn = [xr, br, o] {
      if (xr->requires_grad)
        for (int64_t i = 0; i < o->numel(); ++i) xr->grad[i] += o->grad[i];
      if (br->requires_grad)
        for (int64_t r = 0; r < o->rows; ++r)
          for (int64_t c = 0; c < o->cols; ++c)
            br->grad[c] += o->grad[r * o->cols + c];
    };
  }
  return out;
}

// C = op(A)·op(B) with optional transposes on the stored operands.
template <class T>
TensorPtrT<T> matmul(const TensorPtrT<T>& a, const TensorPtrT<T>& b,
                     bool trans_a = false, bool trans_b = false) {
  const int64_t m = trans_a ? a->cols : a->rows;
  const int64_t k = trans_a ? a->rows : a->cols;
  const int64_t kb = trans_b ? b->cols : b->rows;
  const int64_t n = trans_b ? b->rows : b->cols;
  require_shape(k == kb, "matmul: inner dimensions disagree");
  auto out = detail::make_node<T>(m, n, {a, b});
  detail::gemm<T>(trans_a, trans_b, m, n, k, T(1), a->data.data(),
                  b->data.data(), T(0), out->data.data());
  if (out->requires_grad) {
    auto *ar = a.get(), *br = b.get(), *o = out.get();
    out->backward_fn = [ar, br, o, trans_a, trans_b, m, n, k] {
      const T* G = o->grad.data();
      if (ar->requires_grad) {
        if (!trans_a)
          detail::gemm<T>(false, !trans_b, m, k, n, T(1), G, br->data.data(),
                          T(1), ar->grad.data());
        else
          detail::gemm<T>(trans_b, true, k, m, n, T(1), br->data.data(), G,
                          T(1), ar->grad.data());
      }
      if (br->requires_grad) {
        if (!trans_b)
          detail::gemm<T>(!trans_a, false, k, n, m, T(1), ar->data.data(), G,
                          T(1), br->grad.data());
        else
          detail::gemm<T>(true, trans_a, n, k, m, T(1), G, ar->data.data(),
                          T(1), br->grad.data());
      }
    };
  }
  return out;
}

namespace detail {
constexpr double kGeluK0 = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluK1 = 0.044715;
}  // namespace detail

// Tanh-approximation GELU (cheap closed-form gradient).
template <class T>
TensorPtrT<T> gelu(const TensorPtrT<T>& x) {
  const T k0 = T(detail::kGeluK0), k1 = T(detail::kGeluK1);
  auto out = detail::make_node<T>(x->rows, x->cols, {x});
  for (int64_t i = 0; i < x->numel(); ++i) {
    const T v = x->data[i];
    const T t = std::tanh(k0 * (v + k1 * v * v * v));
    out->data[i] = T(0.5) * v * (T(1) + t);
  }
  if (out->requires_grad) {
    auto *xr = x.get(), *o = out.get();
    out->backward_fn = [xr, o, k0, k1] {
      for (int64_t i = 0; i < o->numel(); ++i) {
        const T v = xr->data[i];
        const T t = std::tanh(k0 * (v + k1 * v * v * v));
        const T d = T(0.5) * (T(1) + t) +
                    T(0.5) * v * (T(1) - t * t) * k0 * (T(1) + T(3) * k1 * v * v);
        xr->grad[i] += o->grad[i] * d;
      }
    };
  }
  return out;
}

// Row-wise layer normalization with affine gain/bias of shape [1, cols].
template <class T>
TensorPtrT<T> layer_norm(const TensorPtrT<T>& x, const TensorPtrT<T>& gain,
                         const TensorPtrT<T>& bias, T eps = T(1e-5)) {
  const int64_t R = x->rows, C = x->cols;
  require_shape(gain->rows == 1 && gain->cols == C && bias->rows == 1 &&
                    bias->cols == C,
                "layer_norm: gain/bias must be [1, cols]");
  auto out = detail::make_node<T>(R, C, {x, gain, bias});
  std::vector<T> xhat(R * C);
  std::vector<T> inv_std(R);
  for (int64_t r = 0; r < R; ++r) {
    const T* xr = x->row_ptr(r);
    T mean = 0;
    for (int64_t c = 0; c < C; ++c) mean += xr[c];
    mean /= T(C);
    T var = 0;
    for (int64_t c = 0; c < C; ++c) {
      const T d = xr[c] - mean;
      var += d * d;
    }
    var /= T(C);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (int64_t c = 0; c < C; ++c) {
      const T xh = (xr[c] - mean) * is;
      xhat[r * C + c] = xh;
      out->at(r, c) = xh * gain->data[c] + bias->data[c];
    }
  }
  if (out->requires_grad) {
    auto *xr = x.get(), *gr = gain.get(), *br = bias.get(), *o = out.get();
    out->backward_fn = [xr, gr, br, o, xh = std::move(xhat),
                        is = std::move(inv_std), R, C] {
      for (int64_t r = 0; r < R; ++r) {
        const T* gy = o->grad.data() + r * C;
        const T* xhr = xh.data() + r * C;
        if (gr->requires_grad)
          for (int64_t c = 0; c < C; ++c) gr->grad[c] += gy[c] * xhr[c];
        if (br->requires_grad)
          for (int64_t c = 0; c < C; ++c) br->grad[c] += gy[c];
        if (xr->requires_grad) {
          T sum_dxhat = 0, sum_dxhat_xhat = 0;
          for (int64_t c = 0; c < C; ++c) {
            const T dxh = gy[c] * gr->data[c];
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * xhr[c];
          }
          const T m1 = sum_dxhat / T(C);
          const T m2 = sum_dxhat_xhat / T(C);
          for (int64_t c = 0; c < C; ++c) {
            const T dxh = gy[c] * gr->data[c];
            xr->grad[r * C + c] += is[r] * (dxh - m1 - xhr[c] * m2);
          }
        }
      }
    };
  }
  return out;
}

// Inverted dropout: survivors scaled by 1/(1-rate); identity at eval.
template <class T>
TensorPtrT<T> dropout(const TensorPtrT<T>& x, double rate, Rng& rng,
                      bool training) {
  require(rate >= 0.0 && rate < 1.0, "dropout: rate must be in [0,1)");
  if (!training || rate == 0.0) return x;
  auto out = detail::make_node<T>(x->rows, x->cols, {x});
  const T scale_keep = T(1.0 / (1.0 - rate));
  std::vector<T> mask(x->numel());
  for (int64_t i = 0; i < x->numel(); ++i) {
    mask[i] = rng.uniform() >= rate ? scale_keep : T(0);
    out->data[i] = x->data[i] * mask[i];
  }
  if (out->requires_grad) {
    auto *xr = x.get(), *o = out.get();
    out->backward_fn = [xr, o, m = std::move(mask)] {
      for (int64_t i = 0; i < o->numel(); ++i) xr->grad[i] += o->grad[i] * m[i];
    };
  }
  return out;
}

template <class T>
TensorPtrT<T> softmax_rows(const TensorPtrT<T>& x) {
  const int64_t R = x->rows, C = x->cols;
  auto out = detail::make_node<T>(R, C, {x});
  for (int64_t r = 0; r < R; ++r) {
    const T* xr = x->row_ptr(r);
    T* yr = out->row_ptr(r);
    T mx = xr[0];
    for (int64_t c = 1; c < C; ++c) mx = std::max(mx, xr[c]);
    T sum = 0;
    for (int64_t c = 0; c < C; ++c) {
      yr[c] = std::exp(xr[c] - mx);
      sum += yr[c];
    }
    for (int64_t c = 0; c < C; ++c) yr[c] /= sum;
  }
  if (out->requires_grad) {
    auto *xr = x.get(), *o = out.get();
    out->backward_fn = [xr, o, R, C] {
      for (int64_t r = 0; r < R; ++r) {
        const T* p = o->row_ptr(r);
        const T* gy = o->grad.data() + r * C;
        T dot = 0;
        for (int64_t c = 0; c < C; ++c) dot += gy[c] * p[c];
        for (int64_t c = 0; c < C; ++c)
          xr->grad[r * C + c] += p[c] * (gy[c] - dot);
      }
    };
  }
  return out;
}

template <class T>
TensorPtrT<T> log_softmax_rows(const TensorPtrT<T>& x) {
  const int64_t R = x->rows, C = x->cols;
  auto out = detail::make_node<T>(R, C, {x});
  std::vector<T> probs(R * C);
  for (int64_t r = 0; r < R; ++r) {
    const T* xr = x->row_ptr(r);
    T mx = xr[0];
    for (int64_t c = 1; c < C; ++c) mx = std::max(mx, xr[c]);
    T sum = 0;
    for (int64_t c = 0; c < C; ++c) sum += std::exp(xr[c] - mx);
    const T lse = mx + std::log(sum);
    for (int64_t c = 0; c < C; ++c) {
      out->at(r, c) = xr[c] - lse;
      probs[r * C + c] = std::exp(xr[c] - lse);
    }
  }
  if (out->requires_grad) {
    auto *xr = x.get(), *o = out.get();
    out->backward_fn = [xr, o, p = std::move(probs), R, C] {
      for (int64_t r = 0; r < R; ++r) {
        const T* gy = o->grad.data() + r * C;
        T gsum = 0;
        for (int64_t c = 0; c < C; ++c) gsum += gy[c];
        for (int64_t c = 0; c < C; ++c)
          xr->grad[r * C + c] += gy[c] - p[r * C + c] * gsum;
      }
    };
  }
  return out;
}

template <class T>
TensorPtrT<T> l2_normalize_rows(const TensorPtrT<T>& x, T eps = T(1e-12)) {
  const int64_t R = x->rows, C = x->cols;
  auto out = detail::make_node<T>(R, C, {x});
  std::vector<T> norms(R);
  for (int64_t r = 0; r < R; ++r) {
    const T* xr = x->row_ptr(r);
    T s = 0;
    for (int64_t c = 0; c < C; ++c) s += xr[c] * xr[c];
    norms[r] = std::max(std::sqrt(s), eps);
    for (int64_t c = 0; c < C; ++c) out->at(r, c) = xr[c] / norms[r];
  }
  if (out->requires_grad) {
    auto *xr = x.get(), *o = out.get();
    out->backward_fn = [xr, o, n = std::move(norms), R, C] {
      for (int64_t r = 0; r < R; ++r) {
        const T* y = o->row_ptr(r);
        const T* gy = o->grad.data() + r * C;
        T dot = 0;
        for (int64_t c = 0; c < C; ++c) dot += gy[c] * y[c];
        for (int64_t c = 0; c < C; ++c)
          xr->grad[r * C + c] += (gy[c] - y[c] * dot) / n[r];
      }
    };
  }
  return out;
}

template <class T>
TensorPtrT<T> sum_all(const TensorPtrT<T>& x) {
  auto out = detail::make_node<T>(1, 1, {x});
  T s = 0;
  for (int64_t i = 0; i < x->numel(); ++i) s += x->data[i];
  out->data[0] = s;
  if (out->requires_grad) {
    auto *xr = x.get(), *o = out.get();
    out->backward_fn = [xr, o] {
      for (int64_t i = 0; i < xr->numel(); ++i) xr->grad[i] += o->grad[0];
    };
  }
  return out;
}

template <class T>
TensorPtrT<T> mean_all(const TensorPtrT<T>& x) {
  auto out = detail::make_node<T>(1, 1, {x});
  T s = 0;
  for (int64_t i = 0; i < x->numel(); ++i) s += x->data[i];
  const T inv = T(1) / T(x->numel());
  out->data[0] = s * inv;
  if (out->requires_grad) {
    auto *xr = x.get(), *o = out.get();
    out->backward_fn = [xr, o, inv] {
      for (int64_t i = 0; i < xr->numel(); ++i) xr->grad[i] += o->grad[0] * inv;
    };
  }
  return out;
}

// Mean over all elements of (a-b)^2.
template <class T>
TensorPtrT<T> mse_loss(const TensorPtrT<T>& a, const TensorPtrT<T>& b) {
  detail::check_same_shape(a, b, "mse_loss: shape mismatch");
  auto out = detail::make_node<T>(1, 1, {a, b});
  T s = 0;
  for (int64_t i = 0; i < a->numel(); ++i) {
    const T d = a->data[i] - b->data[i];
    s += d * d;
  }
  const T inv = T(1) / T(a->numel());
  out->data[0] = s * inv;
  if (out->requires_grad) {
    auto *ar = a.get(), *br = b.get(), *o = out.get();
    out->backward_fn = [ar, br, o, inv] {
      const T g = o->grad[0];
      for (int64_t i = 0; i < ar->numel(); ++i) {
        const T d = T(2) * (ar->data[i] - br->data[i]) * inv * g;
        if (ar->requires_grad) ar->grad[i] += d;
        if (br->requires_grad) br->grad[i] -= d;
      }
    };
  }
  return out;
}

// Row-major relabeling; the element order is unchanged.
template <class T>
TensorPtrT<T> reshape(const TensorPtrT<T>& x, int64_t rows, int64_t cols) {
  require_shape(rows * cols == x->numel(), "reshape: element count mismatch");
  auto out = detail::make_node<T>(rows, cols, {x});
  out->data = x->data;
  if (out->requires_grad) {
    auto *xr = x.get(), *o = out.get();
    out->backward_fn = [xr, o] {
      for (int64_t i = 0; i < o->numel(); ++i) xr->grad[i] += o->grad[i];
    };
  }
  return out;
}

template <class T>
TensorPtrT<T> slice_cols(const TensorPtrT<T>& x, int64_t c0, int64_t c1) {
  require_shape(0 <= c0 && c0 < c1 && c1 <= x->cols, "slice_cols: bad range");
  const int64_t W = c1 - c0;
  auto out = detail::make_node<T>(x->rows, W, {x});
  for (int64_t r = 0; r < x->rows; ++r)
    for (int64_t c = 0; c < W; ++c) out->at(r, c) = x->at(r, c0 + c);
  if (out->requires_grad) {
    auto *xr = x.get(), *o = out.get();
    out->backward_fn = [xr, o, c0, W] {
      for (int64_t r = 0; r < o->rows; ++r)
        for (int64_t c = 0; c < W; ++c)
          xr->grad[r * xr->cols + c0 + c] += o->grad[r * W + c];
    };
  }
  return out;
}

template <class T>
TensorPtrT<T> slice_rows(const TensorPtrT<T>& x, int64_t r0, int64_t r1) {
  require_shape(0 <= r0 && r0 < r1 && r1 <= x->rows, "slice_rows: bad range");
  const int64_t H = r1 - r0;
  auto out = detail::make_node<T>(H, x->cols, {x});
  for (int64_t r = 0; r < H; ++r)
    for (int64_t c = 0; c < x->cols; ++c) out->at(r, c) = x->at(r0 + r, c);
  if (out->requires_grad) {
    auto *xr = x.get(), *o = out.get();
    out->backward_fn = [xr, o, r0] {
      for (int64_t r = 0; r < o->rows; ++r)
        for (int64_t c = 0; c < o->cols; ++c)
          xr->grad[(r0 + r) * xr->cols + c] += o->grad[r * o->cols + c];
    };
  }
  return out;
}

template <class T>
TensorPtrT<T> concat_rows(const std::vector<TensorPtrT<T>>& parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  const int64_t C = parts[0]->cols;
  int64_t R = 0;
  for (const auto& p : parts) {
    require_shape(p->cols == C, "concat_rows: column mismatch");
    R += p->rows;
  }
  auto out = detail::make_node<T>(R, C, parts);
  int64_t off = 0;
  for (const auto& p : parts) {
    std::copy(p->data.begin(), p->data.end(), out->data.begin() + off);
    off += p->numel();
  }
  if (out->requires_grad) {
    std::vector<TensorT<T>*> raw;
    for (const auto& p : parts) raw.push_back(p.get());
    auto* o = out.get();
    out->backward_fn = [raw, o] {
      int64_t off = 0;
      for (auto* p : raw) {
        if (p->requires_grad)
          for (int64_t i = 0; i < p->numel(); ++i) p->grad[i] += o->grad[off + i];
        off += p->numel();
      }
    };
  }
  return out;
}

template <class T>
TensorPtrT<T> concat_cols(const std::vector<TensorPtrT<T>>& parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const int64_t R = parts[0]->rows;
  int64_t C = 0;
  for (const auto& p : parts) {
    require_shape(p->rows == R, "concat_cols: row mismatch");
    C += p->cols;
  }
  auto out = detail::make_node<T>(R, C, parts);
  int64_t coff = 0;
  for (const auto& p : parts) {
    for (int64_t r = 0; r < R; ++r)
      for (int64_t c = 0; c < p->cols; ++c)
        out->at(r, coff + c) = p->at(r, c);
    coff += p->cols;
  }
  if (out->requires_grad) {
    std::vector<TensorT<T>*> raw;
    for (const auto& p : parts) raw.push_back(p.get());
    auto* o = out.get();
    out->backward_fn = [raw, o, R] {
      int64_t coff = 0;
      for (auto* p : raw) {
        if (p->requires_grad)
          for (int64_t r = 0; r < R; ++r)
            for (int64_t c = 0; c < p->cols; ++c)
              p->grad[r * p->cols + c] += o->grad[r * o->cols + coff + c];
        coff += p->cols;
      }
    };
  }
  return out;
}

// Each row of x repeated `times` consecutive times.
template <class T>
TensorPtrT<T> repeat_rows(const TensorPtrT<T>& x, int64_t times) {
  require(times >= 1, "repeat_rows: times must be >= 1");
  const int64_t C = x->cols;
  auto out = detail::make_node<T>(x->rows * times, C, {x});
  for (int64_t r = 0; r < x->rows; ++r)
    for (int64_t j = 0; j < times; ++j)
      std::copy(x->row_ptr(r), x->row_ptr(r) + C,
                out->row_ptr(r * times + j));
  if (out->requires_grad) {
    auto *xr = x.get(), *o = out.get();
    out->backward_fn = [xr, o, times, C] {
      for (int64_t r = 0; r < xr->rows; ++r)
        for (int64_t j = 0; j < times; ++j)
          for (int64_t c = 0; c < C; ++c)
            xr->grad[r * C + c] += o->grad[(r * times + j) * C + c];
    };
  }
  return out;
}

// x is `groups` stacked blocks of emb->rows rows; emb is added to every block.
template <class T>
TensorPtrT<T> add_per_sample(const TensorPtrT<T>& x, const TensorPtrT<T>& emb,
                             int64_t groups) {
  require_shape(x->rows == emb->rows * groups && x->cols == emb->cols,
                "add_per_sample: shape mismatch");
  const int64_t B = groups, R = emb->rows, C = emb->cols;
  auto out = detail::make_node<T>(x->rows, C, {x, emb});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t r = 0; r < R; ++r)
      for (int64_t c = 0; c < C; ++c)
        out->at(b * R + r, c) = x->at(b * R + r, c) + emb->at(r, c);
  if (out->requires_grad) {
    auto *xr = x.get(), *er = emb.get(), *o = out.get();
    out->backward_fn = [xr, er, o, B, R, C] {
      if (xr->requires_grad)
        for (int64_t i = 0; i < o->numel(); ++i) xr->grad[i] += o->grad[i];
      if (er->requires_grad)
        for (int64_t b = 0; b < B; ++b)
          for (int64_t r = 0; r < R; ++r)
            for (int64_t c = 0; c < C; ++c)
              er->grad[r * C + c] += o->grad[(b * R + r) * C + c];
    };
  }
  return out;
}

// Interleaves per-sample row groups: part i carries group_i = rows/`samples`
// consecutive rows per sample; the output holds, for each sample, the
// concatenation of its groups across parts.
template <class T>
TensorPtrT<T> pack_rows(const std::vector<TensorPtrT<T>>& parts,
                        int64_t samples) {
  require(!parts.empty() && samples >= 1, "pack_rows: bad arguments");
  const int64_t C = parts[0]->cols;
  std::vector<int64_t> group(parts.size());
  int64_t L = 0;
  for (size_t i = 0; i < parts.size(); ++i) {
    require_shape(parts[i]->cols == C && parts[i]->rows % samples == 0,
                  "pack_rows: part shape mismatch");
    group[i] = parts[i]->rows / samples;
    L += group[i];
  }
  auto out = detail::make_node<T>(samples * L, C, parts);
  for (int64_t b = 0; b < samples; ++b) {
    int64_t dst = b * L;
    for (size_t i = 0; i < parts.size(); ++i) {
      const T* src = parts[i]->row_ptr(b * group[i]);
      std::copy(src, src + group[i] * C, out->row_ptr(dst));
      dst += group[i];
    }
  }
  if (out->requires_grad) {
    std::vector<TensorT<T>*> raw;
    for (const auto& p : parts) raw.push_back(p.get());
    auto* o = out.get();
    out->backward_fn = [raw, o, group, samples, L, C] {
      for (int64_t b = 0; b < samples; ++b) {
        int64_t src = b * L;
        for (size_t i = 0; i < raw.size(); ++i) {
          if (raw[i]->requires_grad) {
            T* g = raw[i]->grad.data() + b * group[i] * C;
            const T* og = o->grad.data() + src * C;
            for (int64_t j = 0; j < group[i] * C; ++j) g[j] += og[j];
          }
          src += group[i];
        }
      }
    };
  }
  return out;
}

// Reads `count` rows starting at `offset` out of each length-L sample block.
template <class T>
TensorPtrT<T> unpack_rows(const TensorPtrT<T>& x, int64_t samples, int64_t L,
                          int64_t offset, int64_t count) {
  require_shape(x->rows == samples * L && offset >= 0 && count >= 1 &&
                    offset + count <= L,
                "unpack_rows: bad range");
  const int64_t C = x->cols;
  auto out = detail::make_node<T>(samples * count, C, {x});
  for (int64_t b = 0; b < samples; ++b)
    std::copy(x->row_ptr(b * L + offset), x->row_ptr(b * L + offset) + count * C,
              out->row_ptr(b * count));
  if (out->requires_grad) {
    auto *xr = x.get(), *o = out.get();
    out->backward_fn = [xr, o, samples, L, offset, count, C] {
      for (int64_t b = 0; b < samples; ++b) {
        T* g = xr->grad.data() + (b * L + offset) * C;
        const T* og = o->grad.data() + b * count * C;
        for (int64_t j = 0; j < count * C; ++j) g[j] += og[j];
      }
    };
  }
  return out;
}

// Bidirectional multi-head self-attention over `samples` independent
// sequences of length L = rows/samples. q, k, v are the already-projected
// per-token features [samples*L, D]; heads split D evenly. Softmax
// probabilities are saved for the backward pass.
template <class T>
TensorPtrT<T> attention(const TensorPtrT<T>& q, const TensorPtrT<T>& k,
                        const TensorPtrT<T>& v, int64_t samples,
                        int64_t heads) {
  detail::check_same_shape(q, k, "attention: q/k mismatch");
  detail::check_same_shape(q, v, "attention: q/v mismatch");
  const int64_t D = q->cols;
  require_shape(q->rows % samples == 0, "attention: rows not divisible");
  require_shape(D % heads == 0, "attention: cols not divisible by heads");
  const int64_t L = q->rows / samples;
  const int64_t dh = D / heads;
  const T sc = T(1) / std::sqrt(T(dh));

  auto out = detail::make_node<T>(q->rows, D, {q, k, v});
  const bool save = out->requires_grad;
  std::vector<T> probs(save ? samples * heads * L * L : 0);

  std::vector<T> Qb(L * dh), Kb(L * dh), Vb(L * dh), S(L * L), Ob(L * dh);
  auto load_block = [&](const TensorPtrT<T>& src, int64_t b, int64_t h,
                        std::vector<T>& dst) {
    for (int64_t r = 0; r < L; ++r) {
      const T* p = src->row_ptr(b * L + r) + h * dh;
      std::copy(p, p + dh, dst.data() + r * dh);
    }
  };
  for (int64_t b = 0; b < samples; ++b) {
    for (int64_t h = 0; h < heads; ++h) {
      load_block(q, b, h, Qb);
      load_block(k, b, h, Kb);
      load_block(v, b, h, Vb);
      detail::gemm<T>(false, true, L, L, dh, sc, Qb.data(), Kb.data(), T(0),
                      S.data());
      for (int64_t r = 0; r < L; ++r) {
        T* sr = S.data() + r * L;
        T mx = sr[0];
        for (int64_t c = 1; c < L; ++c) mx = std::max(mx, sr[c]);
        T sum = 0;
        for (int64_t c = 0; c < L; ++c) {
          sr[c] = std::exp(sr[c] - mx);
          sum += sr[c];
        }
        for (int64_t c = 0; c < L; ++c) sr[c] /= sum;
      }
      if (save)
        std::copy(S.begin(), S.end(), probs.begin() + (b * heads + h) * L * L);
      detail::gemm<T>(false, false, L, dh, L, T(1), S.data(), Vb.data(), T(0),
                      Ob.data());
      for (int64_t r = 0; r < L; ++r)
        std::copy(Ob.data() + r * dh, Ob.data() + (r + 1) * dh,
                  out->row_ptr(b * L + r) + h * dh);
    }
  }

  if (save) {
    auto *qr = q.get(), *kr = k.get(), *vr = v.get(), *o = out.get();
    out->backward_fn = [qr, kr, vr, o, p = std::move(probs), samples, heads, L,
                        dh, sc] {
      const int64_t D = o->cols;
      std::vector<T> Qb(L * dh), Kb(L * dh), Vb(L * dh), Gb(L * dh);
      std::vector<T> dP(L * L), dS(L * L), blk(L * dh);
      auto load = [&](const TensorT<T>* src, int64_t b, int64_t h,
                      std::vector<T>& dst, bool from_grad) {
        for (int64_t r = 0; r < L; ++r) {
          const T* ptr = (from_grad ? src->grad.data() : src->data.data()) +
                         (b * L + r) * D + h * dh;
          std::copy(ptr, ptr + dh, dst.data() + r * dh);
        }
      };
      auto scatter = [&](TensorT<T>* dst, int64_t b, int64_t h,
                         const std::vector<T>& src) {
        for (int64_t r = 0; r < L; ++r) {
          T* ptr = dst->grad.data() + (b * L + r) * D + h * dh;
          for (int64_t c = 0; c < dh; ++c) ptr[c] += src[r * dh + c];
        }
      };
      for (int64_t b = 0; b < samples; ++b) {
        for (int64_t h = 0; h < heads; ++h) {
          const T* P = p.data() + (b * heads + h) * L * L;
          load(o, b, h, Gb, true);
          load(vr, b, h, Vb, false);
          detail::gemm<T>(false, true, L, L, dh, T(1), Gb.data(), Vb.data(),
                          T(0), dP.data());
          if (vr->requires_grad) {
            detail::gemm<T>(true, false, L, dh, L, T(1), P, Gb.data(), T(0),
                            blk.data());
            scatter(vr, b, h, blk);
          }
          for (int64_t r = 0; r < L; ++r) {
            T dot = 0;
            for (int64_t c = 0; c < L; ++c) dot += dP[r * L + c] * P[r * L + c];
            for (int64_t c = 0; c < L; ++c)
              dS[r * L + c] = P[r * L + c] * (dP[r * L + c] - dot);
          }
          load(qr, b, h, Qb, false);
          load(kr, b, h, Kb, false);
          if (qr->requires_grad) {
            detail::gemm<T>(false, false, L, dh, L, sc, dS.data(), Kb.data(),
                            T(0), blk.data());
            scatter(qr, b, h, blk);
          }
          if (kr->requires_grad) {
            detail::gemm<T>(true, false, L, dh, L, sc, dS.data(), Qb.data(),
                            T(0), blk.data());
            scatter(kr, b, h, blk);
          }
        }
      }
    };
  }
  return out;
}

}  // namespace voxalign
