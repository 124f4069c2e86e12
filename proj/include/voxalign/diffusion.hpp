#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "voxalign/common.hpp"
#include "voxalign/models.hpp"
#include "voxalign/ops.hpp"
#include "voxalign/rng.hpp"

namespace voxalign {

// Forward-process coefficients. alpha_bars[t] is the cumulative product of
// (1 - beta) up to and including step t.
struct NoiseSchedule {
  int64_t num_steps = 0;
  std::vector<double> betas;
  std::vector<double> alpha_bars;
};

inline NoiseSchedule build_schedule(int64_t num_steps,
                                    ScheduleKind kind = ScheduleKind::COSINE) {
  require(num_steps >= 1, "build_schedule: num_steps must be >= 1");
  NoiseSchedule s;
  s.num_steps = num_steps;
  s.betas.resize(num_steps);
  if (kind == ScheduleKind::COSINE) {
    // Squared-cosine decay of alpha_bar; betas derived from its ratios and
    // clipped, then alpha_bar rebuilt from the clipped betas.
    const double offs = 0.008;
    auto f = [offs](double x) {
      const double v = std::cos((x + offs) / (1.0 + offs) * M_PI / 2.0);
      return v * v;
    };
    const double f0 = f(0.0);
    double prev = 1.0;
    for (int64_t t = 0; t < num_steps; ++t) {
      const double ab = f(double(t + 1) / double(num_steps)) / f0;
      double beta = 1.0 - ab / prev;
      s.betas[t] = std::min(std::max(beta, 1e-8), 0.999);
      prev = ab;
    }
  } else {
    // Linear ramp rescaled so the endpoints match a 1000-step reference.
    const double scl = 1000.0 / double(num_steps);
    const double lo = 1e-4 * scl, hi = 0.02 * scl;
    for (int64_t t = 0; t < num_steps; ++t) {
      const double frac =
          num_steps == 1 ? 0.0 : double(t) / double(num_steps - 1);
      s.betas[t] = std::min(lo + (hi - lo) * frac, 0.999);
    }
  }
  s.alpha_bars.resize(num_steps);
  double acc = 1.0;
  for (int64_t t = 0; t < num_steps; ++t) {
    acc *= 1.0 - s.betas[t];
    s.alpha_bars[t] = acc;
  }
  return s;
}

// x_t = sqrt(ab_t) x_0 + sqrt(1 - ab_t) noise, one timestep per row.
inline Matrix q_sample(const Matrix& x0, const std::vector<int64_t>& t,
                       const Matrix& noise, const NoiseSchedule& s) {
  require_shape(noise.rows == x0.rows && noise.cols == x0.cols,
                "q_sample: noise shape mismatch");
  require(static_cast<int64_t>(t.size()) == x0.rows,
          "q_sample: one timestep per row");
  Matrix out(x0.rows, x0.cols);
  for (int64_t i = 0; i < x0.rows; ++i) {
    require(t[i] >= 0 && t[i] < s.num_steps, "q_sample: timestep range");
    const double ab = s.alpha_bars[t[i]];
    const float a = float(std::sqrt(ab));
    const float b = float(std::sqrt(1.0 - ab));
    for (int64_t c = 0; c < x0.cols; ++c)
      out.at(i, c) = a * x0.at(i, c) + b * noise.at(i, c);
  }
  return out;
}

// A materialized forward-process draw, kept around for diagnostics.
struct PriorSample {
  Matrix x0;
  Matrix noise;
  Matrix x_t;
  std::vector<int64_t> t;
};

inline PriorSample make_prior_sample(const Matrix& x0, const NoiseSchedule& s,
                                     Rng& rng) {
  PriorSample ps;
  ps.x0 = x0;
  ps.t.resize(x0.rows);
  for (auto& t : ps.t) t = rng.uniform_int(s.num_steps);
  ps.noise = Matrix(x0.rows, x0.cols);
  for (auto& v : ps.noise.data) v = float(rng.normal());
  ps.x_t = q_sample(x0, ps.t, ps.noise, s);
  return ps;
}

// Denoising training objective: draw (t, noise) per row, noise the clean
// embeddings, and score the net's x0 prediction with MSE. The noised input
// is a constant leaf; gradients flow into the net parameters and into the
// condition (and through it into whatever produced it).
template <class T>
TensorPtrT<T> prior_train_loss(const ModelParamsT<T>& mp,
                               const TensorPtrT<T>& clean,
                               const TensorPtrT<T>& condition,
                               const NoiseSchedule& s, Rng& rng) {
  const int64_t N = clean->rows, E = clean->cols;
  std::vector<int64_t> t(N);
  for (auto& v : t) v = rng.uniform_int(s.num_steps);
  auto noised = tensor<T>(N, E);
  for (int64_t i = 0; i < N; ++i) {
    const double ab = s.alpha_bars[t[i]];
    const T a = T(std::sqrt(ab)), b = T(std::sqrt(1.0 - ab));
    for (int64_t c = 0; c < E; ++c)
      noised->data[i * E + c] =
          a * clean->data[i * E + c] + b * T(rng.normal());
  }
  auto pred = prior_net_forward(mp, noised, t, condition);
  return mse_loss(pred, clean);
}

// Ancestral sampler for an x0-predicting net. Runs without gradients and
// returns plain data. With `deterministic` set, posterior noise is dropped
// and the result is a pure function of (params, condition, initial noise).
template <class T>
TensorPtrT<T> sample_prior(const ModelParamsT<T>& mp,
                           const TensorPtrT<T>& condition,
                           const NoiseSchedule& s, Rng& rng,
                           bool deterministic = false) {
  NoGradGuard ng;
  const int64_t N = condition->rows, E = condition->cols;
  auto x = tensor<T>(N, E);
  for (auto& v : x->data) v = T(rng.normal());
  for (int64_t step = s.num_steps - 1; step >= 0; --step) {
    std::vector<int64_t> ts(N, step);
    auto x0hat = prior_net_forward(mp, x, ts, condition);
    if (step == 0) return x0hat;
    const double ab_t = s.alpha_bars[step];
    const double ab_prev = s.alpha_bars[step - 1];
    const double beta = s.betas[step];
    const double alpha = 1.0 - beta;
    const T c0 = T(std::sqrt(ab_prev) * beta / (1.0 - ab_t));
    const T c1 = T(std::sqrt(alpha) * (1.0 - ab_prev) / (1.0 - ab_t));
    const T sd =
        deterministic ? T(0) : T(std::sqrt(beta * (1.0 - ab_prev) / (1.0 - ab_t)));
    auto next = tensor<T>(N, E);
    for (int64_t i = 0; i < N * E; ++i) {
      T z = deterministic ? T(0) : T(rng.normal());
      next->data[i] = c0 * x0hat->data[i] + c1 * x->data[i] + sd * z;
    }
    x = next;
  }
  return x;  // unreachable for num_steps >= 1
}

}  // namespace voxalign
