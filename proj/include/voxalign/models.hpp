#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "voxalign/common.hpp"
#include "voxalign/ops.hpp"
#include "voxalign/optim.hpp"
#include "voxalign/rng.hpp"

namespace voxalign {

enum class TokenMode { FULL, CLS_ONLY };
enum class PriorNetKind { TRANSFORMER, TOKEN_MLP };
enum class ScheduleKind { COSINE, LINEAR };

// Residual MLP that maps flattened voxel vectors to a token-sequence
// embedding of shape [tokens x token_dim] (flattened row-major).
struct BackboneConfig {
  int64_t voxel_dim = 512;
  int64_t hidden = 256;
  int64_t num_blocks = 4;
  bool use_skip = true;
  int64_t tokens = 16;
  int64_t token_dim = 64;
  TokenMode token_mode = TokenMode::FULL;
  double dropout_in = 0.5;
  double dropout_block = 0.15;
  int64_t proj_dim = 0;  // projector hidden width; 0 means 4 * token_dim

  int64_t effective_tokens() const {
    return token_mode == TokenMode::CLS_ONLY ? 1 : tokens;
  }
  int64_t out_dim() const { return effective_tokens() * token_dim; }
  int64_t projector_dim() const {
    return proj_dim > 0 ? proj_dim : 4 * token_dim;
  }
  void validate() const {
    require(voxel_dim >= 1 && hidden >= 1 && tokens >= 1 && token_dim >= 1,
            "BackboneConfig: dimensions must be >= 1");
    require(num_blocks >= 0, "BackboneConfig: num_blocks must be >= 0");
    require(dropout_in >= 0 && dropout_in < 1 && dropout_block >= 0 &&
                dropout_block < 1,
            "BackboneConfig: dropout rates must be in [0,1)");
  }
};

// Denoising network of the diffusion prior. The transformer variant runs
// bidirectional attention over [condition tokens | timestep token | noised
// tokens + positional embeddings] and reads predictions off the noised
// positions; the token MLP variant is a cheaper per-token denoiser.
struct PriorConfig {
  int64_t num_steps = 100;
  ScheduleKind schedule = ScheduleKind::COSINE;
  PriorNetKind net = PriorNetKind::TRANSFORMER;
  int64_t layers = 2;
  int64_t heads = 4;
  int64_t mlp_ratio = 4;

  void validate(const BackboneConfig& b) const {
    require(num_steps >= 1, "PriorConfig: num_steps must be >= 1");
    require(layers >= 1 && heads >= 1 && mlp_ratio >= 1,
            "PriorConfig: layers/heads/mlp_ratio must be >= 1");
    require(b.token_dim % heads == 0,
            "PriorConfig: token_dim must be divisible by heads");
    require(b.token_dim % 2 == 0,
            "PriorConfig: token_dim must be even for sinusoidal embedding");
  }
};

template <class T>
struct ModelParamsT {
  BackboneConfig backbone;
  PriorConfig prior;
  ParamSetT<T> params;

  bool has_projector() const { return params.find("proj.ln0.g") != nullptr; }
  bool has_prior() const { return params.find("prior.time.w") != nullptr; }
};

using ModelParams = ModelParamsT<float>;

namespace detail {

inline uint64_t fnv1a64(const std::string& s) {
  uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

// Every tensor draws from an RNG stream keyed by its name, so values do not
// depend on which other submodules are instantiated.
template <class T>
struct ParamInit {
  ParamSetT<T>& ps;
  uint64_t seed;

  TensorPtrT<T> linear_weight(const std::string& name, int64_t fan_in,
                              int64_t fan_out) {
    auto w = ps.add(name, fan_in, fan_out);
    Rng rng = Rng::derive(seed, fnv1a64(name));
    const double bound = 1.0 / std::sqrt(double(fan_in));
    for (auto& v : w->data) v = T(rng.uniform(-bound, bound));
    return w;
  }
  TensorPtrT<T> zeros(const std::string& name, int64_t rows, int64_t cols) {
    return ps.add(name, rows, cols);
  }
  TensorPtrT<T> ones(const std::string& name, int64_t rows, int64_t cols) {
    auto t = ps.add(name, rows, cols);
    std::fill(t->data.begin(), t->data.end(), T(1));
    return t;
  }
  TensorPtrT<T> gaussian(const std::string& name, int64_t rows, int64_t cols,
                         double sd) {
    auto t = ps.add(name, rows, cols);
    Rng rng = Rng::derive(seed, fnv1a64(name));
    for (auto& v : t->data) v = T(rng.normal(0.0, sd));
    return t;
  }
  void norm(const std::string& prefix, int64_t dim) {
    ones(prefix + ".g", 1, dim);
    zeros(prefix + ".b", 1, dim);
  }
};

}  // namespace detail

// Deterministic initialization: linear weights fan-in-scaled uniform, all
// biases zero, norm gains one, positional embeddings small Gaussian.
template <class T>
ModelParamsT<T> init_params(const BackboneConfig& bcfg, const PriorConfig& pcfg,
                            uint64_t seed, bool with_projector = true,
                            bool with_prior = true) {
  bcfg.validate();
  pcfg.validate(bcfg);
  ModelParamsT<T> mp;
  mp.backbone = bcfg;
  mp.prior = pcfg;
  detail::ParamInit<T> init{mp.params, seed};

  const int64_t V = bcfg.voxel_dim, h = bcfg.hidden;
  const int64_t D = bcfg.token_dim, Te = bcfg.effective_tokens();
  const int64_t od = bcfg.out_dim();

  init.linear_weight("backbone.lin0.w", V, h);
  init.norm("backbone.ln0", h);
  for (int64_t i = 0; i < bcfg.num_blocks; ++i) {
    const std::string p = "backbone.block" + std::to_string(i);
    init.linear_weight(p + ".w", h, h);
    init.norm(p + ".ln", h);
  }
  init.linear_weight("backbone.lin1.w", h, od);
  init.zeros("backbone.lin1.b", 1, od);

  if (with_projector) {
    const int64_t P = bcfg.projector_dim();
    init.norm("proj.ln0", D);
    init.linear_weight("proj.lin0.w", D, P);
    init.norm("proj.ln1", P);
    init.linear_weight("proj.lin1.w", P, P);
    init.norm("proj.ln2", P);
    init.linear_weight("proj.lin2.w", P, D);
    init.zeros("proj.lin2.b", 1, D);
  }

  if (with_prior) {
    const int64_t rD = pcfg.mlp_ratio * D;
    init.gaussian("prior.posemb", Te, D, 0.02);
    init.linear_weight("prior.time.w", D, D);
    init.zeros("prior.time.b", 1, D);
    if (pcfg.net == PriorNetKind::TRANSFORMER) {
      // One slot embedding per packed-sequence position, so attention can
      // address "the condition token for position i" structurally.
      init.gaussian("prior.segemb", 2 * Te + 1, D, 0.02);
      for (int64_t l = 0; l < pcfg.layers; ++l) {
        const std::string p = "prior.layer" + std::to_string(l);
        init.norm(p + ".ln1", D);
        for (const char* n : {"q", "k", "v", "o"})
          init.linear_weight(p + ".w" + n, D, D);
        // No key bias: softmax logits are invariant to a per-query constant
        // shift, so a bias on the key projection is a dead parameter.
        for (const char* n : {"q", "v", "o"})
          init.zeros(p + ".b" + std::string(n), 1, D);
        init.norm(p + ".ln2", D);
        init.linear_weight(p + ".mlp0.w", D, rD);
        init.zeros(p + ".mlp0.b", 1, rD);
        init.linear_weight(p + ".mlp1.w", rD, D);
        init.zeros(p + ".mlp1.b", 1, D);
      }
      init.norm("prior.lnf", D);
      init.linear_weight("prior.head.w", D, D);
      init.zeros("prior.head.b", 1, D);
    } else {
      init.linear_weight("prior.mlp0.w", 3 * D, rD);
      init.zeros("prior.mlp0.b", 1, rD);
      init.linear_weight("prior.mlp1.w", rD, rD);
      init.zeros("prior.mlp1.b", 1, rD);
      init.linear_weight("prior.mlp2.w", rD, D);
      init.zeros("prior.mlp2.b", 1, D);
    }
  }
  return mp;
}

// Analytic parameter counts; never instantiate tensors, so paper-scale
// configs can be counted without allocating gigabytes.
inline int64_t backbone_param_count(const BackboneConfig& c) {
  const int64_t od = c.out_dim();
  int64_t n = c.voxel_dim * c.hidden + 2 * c.hidden;
  n += c.num_blocks * (c.hidden * c.hidden + 2 * c.hidden);
  n += c.hidden * od + od;
  return n;
}

inline int64_t projector_param_count(const BackboneConfig& c) {
  const int64_t D = c.token_dim, P = c.projector_dim();
  return 2 * D + D * P + 2 * P + P * P + 2 * P + P * D + D;
}

inline int64_t prior_param_count(const BackboneConfig& b,
                                 const PriorConfig& p) {
  const int64_t D = b.token_dim, Te = b.effective_tokens();
  const int64_t rD = p.mlp_ratio * D;
  int64_t n = Te * D + D * D + D;  // positional + timestep embedding
  if (p.net == PriorNetKind::TRANSFORMER) {
    n += (2 * Te + 1) * D;  // packed-sequence slot embedding
    n += p.layers *
         (2 * D + 4 * D * D + 3 * D + 2 * D + D * rD + rD + rD * D + D);
    n += 2 * D + D * D + D;
  } else {
    n += 3 * D * rD + rD + rD * rD + rD + rD * D + D;
  }
  return n;
}

inline int64_t param_count(const BackboneConfig& b, const PriorConfig& p,
                           bool with_projector = true, bool with_prior = true) {
  int64_t n = backbone_param_count(b);
  if (with_projector) n += projector_param_count(b);
  if (with_prior) n += prior_param_count(b, p);
  return n;
}

// lin0 -> num_blocks residual blocks -> lin1. Output [N, out_dim()].
template <class T>
TensorPtrT<T> backbone_forward(const ModelParamsT<T>& mp,
                               const TensorPtrT<T>& voxels, bool training,
                               Rng& rng) {
  const auto& c = mp.backbone;
  require_shape(voxels->cols == c.voxel_dim, "backbone_forward: voxel dim");
  const auto& ps = mp.params;
  auto x = matmul(voxels, ps.get("backbone.lin0.w"));
  x = layer_norm(x, ps.get("backbone.ln0.g"), ps.get("backbone.ln0.b"));
  x = gelu(x);
  x = dropout(x, c.dropout_in, rng, training);
  auto residual = x;
  for (int64_t i = 0; i < c.num_blocks; ++i) {
    const std::string p = "backbone.block" + std::to_string(i);
    auto h = matmul(x, ps.get(p + ".w"));
    h = layer_norm(h, ps.get(p + ".ln.g"), ps.get(p + ".ln.b"));
    h = gelu(h);
    h = dropout(h, c.dropout_block, rng, training);
    if (c.use_skip) {
      x = add(h, residual);
      residual = x;
    } else {
      x = h;
    }
  }
  return add_rowvec(matmul(x, ps.get("backbone.lin1.w")),
                    ps.get("backbone.lin1.b"));
}

// Per-token MLP: three (norm -> GELU -> linear) stages, widths D->P->P->D.
template <class T>
TensorPtrT<T> projector_forward(const ModelParamsT<T>& mp,
                                const TensorPtrT<T>& tokens) {
  const auto& c = mp.backbone;
  require(mp.has_projector(), "projector_forward: projector not instantiated");
  require_shape(tokens->cols == c.out_dim(), "projector_forward: token dim");
  const auto& ps = mp.params;
  const int64_t N = tokens->rows, D = c.token_dim;
  auto x = reshape(tokens, N * c.effective_tokens(), D);
  x = layer_norm(x, ps.get("proj.ln0.g"), ps.get("proj.ln0.b"));
  x = gelu(x);
  x = matmul(x, ps.get("proj.lin0.w"));
  x = layer_norm(x, ps.get("proj.ln1.g"), ps.get("proj.ln1.b"));
  x = gelu(x);
  x = matmul(x, ps.get("proj.lin1.w"));
  x = layer_norm(x, ps.get("proj.ln2.g"), ps.get("proj.ln2.b"));
  x = gelu(x);
  x = add_rowvec(matmul(x, ps.get("proj.lin2.w")), ps.get("proj.lin2.b"));
  return reshape(x, N, c.out_dim());
}

namespace detail {

// Half sines, half cosines, geometric frequency ladder down from 1.
template <class T>
void sinusoidal_embedding(int64_t t, int64_t dim, T* out) {
  const int64_t half = dim / 2;
  for (int64_t i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * double(i) / double(half));
    out[i] = T(std::sin(double(t) * freq));
    out[half + i] = T(std::cos(double(t) * freq));
  }
}

}  // namespace detail

// Predicts the clean embedding x0 from (noised embedding, timestep,
// condition). Shapes are flattened token sequences [N, tokens*token_dim].
template <class T>
TensorPtrT<T> prior_net_forward(const ModelParamsT<T>& mp,
                                const TensorPtrT<T>& noised,
                                const std::vector<int64_t>& timesteps,
                                const TensorPtrT<T>& condition) {
  const auto& c = mp.backbone;
  const auto& pc = mp.prior;
  require(mp.has_prior(), "prior_net_forward: prior not instantiated");
  const int64_t N = noised->rows, D = c.token_dim, Te = c.effective_tokens();
  require_shape(noised->cols == c.out_dim() &&
                    condition->rows == N && condition->cols == c.out_dim(),
                "prior_net_forward: embedding shape");
  require(static_cast<int64_t>(timesteps.size()) == N,
          "prior_net_forward: one timestep per sample");
  for (int64_t t : timesteps)
    require(t >= 0 && t < pc.num_steps, "prior_net_forward: timestep range");

  const auto& ps = mp.params;
  auto noised_tok = add_per_sample(reshape(noised, N * Te, D),
                                  ps.get("prior.posemb"), N);
  auto cond_tok = reshape(condition, N * Te, D);
  auto tsin = tensor<T>(N, D);
  for (int64_t i = 0; i < N; ++i)
    detail::sinusoidal_embedding(timesteps[i], D, tsin->row_ptr(i));
  auto time_tok = add_rowvec(matmul(tsin, ps.get("prior.time.w")),
                             ps.get("prior.time.b"));

  if (pc.net == PriorNetKind::TRANSFORMER) {
    const int64_t L = 2 * Te + 1;
    auto seq = add_per_sample(pack_rows<T>({cond_tok, time_tok, noised_tok}, N),
                              ps.get("prior.segemb"), N);
    for (int64_t l = 0; l < pc.layers; ++l) {
      const std::string p = "prior.layer" + std::to_string(l);
      auto h = layer_norm(seq, ps.get(p + ".ln1.g"), ps.get(p + ".ln1.b"));
      auto q = add_rowvec(matmul(h, ps.get(p + ".wq")), ps.get(p + ".bq"));
      auto k = matmul(h, ps.get(p + ".wk"));
      auto v = add_rowvec(matmul(h, ps.get(p + ".wv")), ps.get(p + ".bv"));
      auto att = attention(q, k, v, N, pc.heads);
      att = add_rowvec(matmul(att, ps.get(p + ".wo")), ps.get(p + ".bo"));
      seq = add(seq, att);
      auto h2 = layer_norm(seq, ps.get(p + ".ln2.g"), ps.get(p + ".ln2.b"));
      auto m = add_rowvec(matmul(h2, ps.get(p + ".mlp0.w")),
                          ps.get(p + ".mlp0.b"));
      m = gelu(m);
      m = add_rowvec(matmul(m, ps.get(p + ".mlp1.w")), ps.get(p + ".mlp1.b"));
      seq = add(seq, m);
    }
    seq = layer_norm(seq, ps.get("prior.lnf.g"), ps.get("prior.lnf.b"));
    auto outtok = unpack_rows(seq, N, L, Te + 1, Te);
    auto pred = add_rowvec(matmul(outtok, ps.get("prior.head.w")),
                           ps.get("prior.head.b"));
    return reshape(pred, N, c.out_dim());
  }

  auto time_rep = repeat_rows(time_tok, Te);
  auto inp = concat_cols<T>({noised_tok, cond_tok, time_rep});
  auto m = gelu(add_rowvec(matmul(inp, ps.get("prior.mlp0.w")),
                           ps.get("prior.mlp0.b")));
  m = gelu(add_rowvec(matmul(m, ps.get("prior.mlp1.w")),
                      ps.get("prior.mlp1.b")));
  auto pred = add_rowvec(matmul(m, ps.get("prior.mlp2.w")),
                         ps.get("prior.mlp2.b"));
  return reshape(pred, N, c.out_dim());
}

}  // namespace voxalign
