#pragma once

#include <cstdint>
#include <vector>

#include "voxalign/common.hpp"
#include "voxalign/ops.hpp"
#include "voxalign/rng.hpp"

namespace voxalign {

// Mixup coefficients and partner indices for one batch. Self-pairing
// (partners[i] == i) is allowed; mixing is then the identity for any lambda.
struct MixSpec {
  std::vector<double> lambdas;
  std::vector<int64_t> partners;
  int64_t size() const { return static_cast<int64_t>(lambdas.size()); }
};

inline MixSpec sample_mixspec(int64_t n, double beta_param, Rng& rng) {
  require(n >= 1, "sample_mixspec: batch size must be >= 1");
  require(beta_param > 0.0, "sample_mixspec: beta parameter must be positive");
  MixSpec spec;
  spec.lambdas.reserve(n);
  spec.partners.reserve(n);
  for (int64_t i = 0; i < n; ++i) spec.lambdas.push_back(rng.beta(beta_param, beta_param));
  for (int64_t i = 0; i < n; ++i) spec.partners.push_back(rng.uniform_int(n));
  return spec;
}

namespace detail {

inline void check_mixspec(const MixSpec& spec, int64_t n) {
  require(spec.size() == n && static_cast<int64_t>(spec.partners.size()) == n,
          "MixSpec: size does not match batch");
  for (int64_t i = 0; i < n; ++i) {
    require(spec.lambdas[i] >= 0.0 && spec.lambdas[i] <= 1.0,
            "MixSpec: lambda out of [0,1]");
    require(spec.partners[i] >= 0 && spec.partners[i] < n,
            "MixSpec: partner index out of range");
  }
}

}  // namespace detail

// Row i becomes lambda_i * x_i + (1 - lambda_i) * x_{k_i}.
inline Matrix mix_rows(const Matrix& x, const MixSpec& spec) {
  detail::check_mixspec(spec, x.rows);
  Matrix out(x.rows, x.cols);
  for (int64_t i = 0; i < x.rows; ++i) {
    const float lam = static_cast<float>(spec.lambdas[i]);
    const float* xi = x.row(i);
    const float* xk = x.row(spec.partners[i]);
    float* oi = out.row(i);
    for (int64_t c = 0; c < x.cols; ++c)
      oi[c] = lam * xi[c] + (1.0f - lam) * xk[c];
  }
  return out;
}

// Voxels and targets share the same mixing kernel and ratios.
inline Matrix mix_voxels(const Matrix& x, const MixSpec& spec) {
  return mix_rows(x, spec);
}
inline Matrix mix_targets(const Matrix& t, const MixSpec& spec) {
  return mix_rows(t, spec);
}

enum class Phase { BIMIXCO, SOFTCLIP };

// BIMIXCO for the first floor(total/3) epochs, SOFTCLIP afterwards.
inline Phase phase_for_epoch(int64_t epoch, int64_t total_epochs) {
  require(total_epochs >= 1 && epoch >= 0 && epoch < total_epochs,
          "phase_for_epoch: epoch out of range");
  return epoch < total_epochs / 3 ? Phase::BIMIXCO : Phase::SOFTCLIP;
}

template <class T>
struct ContrastiveBatchT {
  TensorPtrT<T> pred;    // N x E, normalized internally by every loss
  TensorPtrT<T> target;  // N x E
  double tau = 0.2;
};

using ContrastiveBatch = ContrastiveBatchT<float>;

namespace detail {

// Temperature-scaled cosine similarity logits: rows of a against rows of b.
template <class T>
TensorPtrT<T> similarity_logits(const TensorPtrT<T>& a, const TensorPtrT<T>& b,
                                double tau) {
  require(tau > 0.0, "contrastive loss: temperature must be positive");
  check_same_shape(a, b, "contrastive loss: shape mismatch");
  return scale(matmul(l2_normalize_rows(a), l2_normalize_rows(b), false, true),
               T(1.0 / tau));
}

// -sum(weights ⊙ lsm) / denom with constant weights.
template <class T>
TensorPtrT<T> weighted_nll(const TensorPtrT<T>& lsm, std::vector<T> weights,
                           double denom) {
  auto w = tensor_from<T>(lsm->rows, lsm->cols, std::move(weights));
  return scale(sum_all(mul(lsm, w)), T(-1.0 / denom));
}

template <class T>
std::vector<T> eye_weights(int64_t n) {
  std::vector<T> w(n * n, T(0));
  for (int64_t i = 0; i < n; ++i) w[i * n + i] = T(1);
  return w;
}

}  // namespace detail

// One-directional cross-entropy: for each prediction row, the matching
// target must win the softmax over all targets in the batch.
template <class T>
TensorPtrT<T> info_nce(const TensorPtrT<T>& p, const TensorPtrT<T>& t,
                       double tau) {
  const int64_t n = p->rows;
  auto lsm = log_softmax_rows(detail::similarity_logits(p, t, tau));
  return detail::weighted_nll(lsm, detail::eye_weights<T>(n), double(n));
}

// Mean of both directional cross-entropies (prediction->target and
// target->prediction).
template <class T>
TensorPtrT<T> clip_loss(const TensorPtrT<T>& p, const TensorPtrT<T>& t,
                        double tau) {
  const int64_t n = p->rows;
  auto fwd = log_softmax_rows(detail::similarity_logits(p, t, tau));
  auto bwd = log_softmax_rows(detail::similarity_logits(t, p, tau));
  auto w = detail::eye_weights<T>(n);
  return add(detail::weighted_nll(fwd, w, 2.0 * n),
             detail::weighted_nll(bwd, w, 2.0 * n));
}

namespace detail {

// Forward-direction mixup weights: row i credits target i with lambda_i and
// target k_i with (1 - lambda_i).
template <class T>
std::vector<T> mixup_forward_weights(const MixSpec& spec) {
  const int64_t n = spec.size();
  std::vector<T> w(n * n, T(0));
  for (int64_t i = 0; i < n; ++i) {
    w[i * n + i] += T(spec.lambdas[i]);
    w[i * n + spec.partners[i]] += T(1.0 - spec.lambdas[i]);
  }
  return w;
}

// Transposed direction: target row j credits prediction j with lambda_j and
// every prediction l with partner j with (1 - lambda_l).
template <class T>
std::vector<T> mixup_backward_weights(const MixSpec& spec) {
  const int64_t n = spec.size();
  std::vector<T> w(n * n, T(0));
  for (int64_t j = 0; j < n; ++j) w[j * n + j] += T(spec.lambdas[j]);
  for (int64_t l = 0; l < n; ++l)
    w[spec.partners[l] * n + l] += T(1.0 - spec.lambdas[l]);
  return w;
}

}  // namespace detail

// One-sided mixup contrastive loss (the forward direction only).
template <class T>
TensorPtrT<T> info_nce_mixco(const TensorPtrT<T>& p_star,
                             const TensorPtrT<T>& t, const MixSpec& spec,
                             double tau) {
  const int64_t n = p_star->rows;
  detail::check_mixspec(spec, n);
  auto lsm = log_softmax_rows(detail::similarity_logits(p_star, t, tau));
  return detail::weighted_nll(lsm, detail::mixup_forward_weights<T>(spec),
                              double(n));
}

// Bidirectional mixup contrastive loss; reduction is the mean over both
// directions (divide by 2N).
template <class T>
TensorPtrT<T> bimixco_loss(const TensorPtrT<T>& p_star, const TensorPtrT<T>& t,
                           const MixSpec& spec, double tau) {
  const int64_t n = p_star->rows;
  detail::check_mixspec(spec, n);
  auto fwd = log_softmax_rows(detail::similarity_logits(p_star, t, tau));
  auto bwd = log_softmax_rows(detail::similarity_logits(t, p_star, tau));
  return add(detail::weighted_nll(fwd, detail::mixup_forward_weights<T>(spec),
                                  2.0 * n),
             detail::weighted_nll(bwd, detail::mixup_backward_weights<T>(spec),
                                  2.0 * n));
}

// Soft cross-entropy against the target-target similarity distribution, both
// directions, mean over 2N rows. Soft labels are constants (targets carry no
// gradient).
template <class T>
TensorPtrT<T> softclip_loss(const TensorPtrT<T>& p, const TensorPtrT<T>& t,
                            double tau) {
  const int64_t n = p->rows;
  std::vector<T> labels;
  {
    NoGradGuard ng;
    auto a = softmax_rows(detail::similarity_logits(t, t, tau));
    labels = a->data;
  }
  auto fwd = log_softmax_rows(detail::similarity_logits(p, t, tau));
  auto bwd = log_softmax_rows(detail::similarity_logits(t, p, tau));
  auto lhs = detail::weighted_nll(fwd, labels, 2.0 * n);
  auto rhs = detail::weighted_nll(bwd, std::move(labels), 2.0 * n);
  return add(lhs, rhs);
}

template <class T>
TensorPtrT<T> info_nce(const ContrastiveBatchT<T>& b) {
  return info_nce(b.pred, b.target, b.tau);
}
template <class T>
TensorPtrT<T> clip_loss(const ContrastiveBatchT<T>& b) {
  return clip_loss(b.pred, b.target, b.tau);
}
template <class T>
TensorPtrT<T> softclip_loss(const ContrastiveBatchT<T>& b) {
  return softclip_loss(b.pred, b.target, b.tau);
}

// Total training objective: contrastive + alpha * reconstruction MSE.
template <class T>
TensorPtrT<T> combined_loss(const TensorPtrT<T>& contrastive,
                            const TensorPtrT<T>& prior_mse, double alpha) {
  return add(contrastive, scale(prior_mse, T(alpha)));
}

inline double combined_loss(double contrastive, double prior_mse,
                            double alpha) {
  return contrastive + alpha * prior_mse;
}

}  // namespace voxalign
