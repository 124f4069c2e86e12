#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "voxalign/common.hpp"
#include "voxalign/gemm.hpp"
#include "voxalign/io.hpp"
#include "voxalign/rng.hpp"

namespace voxalign {

namespace detail {

inline constexpr uint64_t kRetrievalRepeatStream = 0x5E7A11;

inline void normalize_rows_or_throw(Matrix& m, const char* who) {
  for (int64_t i = 0; i < m.rows; ++i) {
    double n = 0;
    float* r = m.row(i);
    for (int64_t c = 0; c < m.cols; ++c) n += double(r[c]) * double(r[c]);
    n = std::sqrt(n);
    if (!(n > 0))
      throw ValueError(std::string(who) + ": zero-norm row " +
                       std::to_string(i));
    const float inv = float(1.0 / n);
    for (int64_t c = 0; c < m.cols; ++c) r[c] *= inv;
  }
}

}  // namespace detail

// C[i][j] = cosine(a_i, b_j). Zero-norm rows are rejected.
inline Matrix cosine_matrix(const Matrix& a, const Matrix& b) {
  require_shape(a.cols == b.cols && a.rows >= 1 && b.rows >= 1,
                "cosine_matrix: shape mismatch");
  Matrix an = a, bn = b;
  detail::normalize_rows_or_throw(an, "cosine_matrix lhs");
  detail::normalize_rows_or_throw(bn, "cosine_matrix rhs");
  Matrix c(a.rows, b.rows);
  detail::gemm<float>(false, true, a.rows, b.rows, a.cols, 1.0f, an.data.data(),
                      bn.data.data(), 0.0f, c.data.data());
  return c;
}

// Exhaustive protocol: every other test item acts as a distractor.
// forward = given a brain embedding, pick the right stimulus embedding;
// backward = given a stimulus embedding, pick the right brain embedding.
// Ties count as failures.
struct FullRetrieval {
  int64_t n = 0;
  double forward_top1 = 0;
  double backward_top1 = 0;
  double chance() const { return n > 0 ? 1.0 / double(n) : 0.0; }
};

inline FullRetrieval full_retrieval_top1(const Matrix& brain,
                                         const Matrix& stimulus) {
  require_shape(brain.rows == stimulus.rows,
                "full_retrieval_top1: row mismatch");
  require(brain.rows >= 2, "full_retrieval_top1: need at least two items");
  const Matrix c = cosine_matrix(brain, stimulus);
  const int64_t n = brain.rows;
  int64_t fwd = 0, bwd = 0;
  for (int64_t i = 0; i < n; ++i) {
    bool win_f = true, win_b = true;
    const float diag = c.at(i, i);
    for (int64_t j = 0; j < n; ++j) {
      if (j == i) continue;
      if (c.at(i, j) >= diag) win_f = false;
      if (c.at(j, i) >= diag) win_b = false;
    }
    fwd += win_f;
    bwd += win_b;
  }
  return FullRetrieval{n, double(fwd) / double(n), double(bwd) / double(n)};
}

// Sampled protocol: each item must beat `batch_size - 1` random distractors;
// repeated with fresh distractors and averaged.
struct RetrievalReport {
  int64_t n = 0;
  int64_t batch_size = 0;
  int64_t repeats = 0;
  double forward_top1 = 0;
  double backward_top1 = 0;
  std::vector<double> per_repeat_forward;
  std::vector<double> per_repeat_backward;
  double chance() const {
    return batch_size > 0 ? 1.0 / double(batch_size) : 0.0;
  }
};

inline RetrievalReport batch_retrieval_eval(const Matrix& brain,
                                            const Matrix& stimulus,
                                            int64_t batch_size = 300,
                                            int64_t repeats = 30,
                                            uint64_t seed = 0) {
  require_shape(brain.rows == stimulus.rows,
                "batch_retrieval_eval: row mismatch");
  const int64_t n = brain.rows;
  require(batch_size >= 2 && repeats >= 1,
          "batch_retrieval_eval: need batch_size >= 2 and repeats >= 1");
  require(n >= batch_size,
          "batch_retrieval_eval: fewer items than the batch size");
  const Matrix c = cosine_matrix(brain, stimulus);
  const int64_t k = batch_size - 1;  // distractors per item

  RetrievalReport rep;
  rep.n = n;
  rep.batch_size = batch_size;
  rep.repeats = repeats;

  std::vector<int64_t> pool(n);
  auto draw_distractors = [&](int64_t self, Rng& rng,
                              std::vector<int64_t>& out) {
    // Partial Fisher-Yates over all indices but `self`, without replacement.
    std::iota(pool.begin(), pool.end(), 0);
    std::swap(pool[self], pool[n - 1]);
    for (int64_t d = 0; d < k; ++d) {
      const int64_t pick = d + rng.uniform_int(n - 1 - d);
      std::swap(pool[d], pool[pick]);
      out[d] = pool[d];
    }
  };

  std::vector<int64_t> dis(k);
  for (int64_t r = 0; r < repeats; ++r) {
    Rng rng = Rng::derive(seed, detail::kRetrievalRepeatStream, uint64_t(r));
    int64_t fwd = 0, bwd = 0;
    for (int64_t i = 0; i < n; ++i) {
      draw_distractors(i, rng, dis);
      bool win = true;
      for (int64_t j : dis) win = win && c.at(i, i) > c.at(i, j);
      fwd += win;
    }
    for (int64_t i = 0; i < n; ++i) {
      draw_distractors(i, rng, dis);
      bool win = true;
      for (int64_t j : dis) win = win && c.at(i, i) > c.at(j, i);
      bwd += win;
    }
    rep.per_repeat_forward.push_back(double(fwd) / double(n));
    rep.per_repeat_backward.push_back(double(bwd) / double(n));
  }
  for (double v : rep.per_repeat_forward) rep.forward_top1 += v;
  for (double v : rep.per_repeat_backward) rep.backward_top1 += v;
  rep.forward_top1 /= double(repeats);
  rep.backward_top1 /= double(repeats);
  return rep;
}

// For each pair, the reconstruction must correlate better with its own
// ground truth than with every other reconstruction; averaged over the
// n * (n - 1) ordered comparisons.
inline double two_way_identification(const Matrix& recon,
                                     const Matrix& truth) {
  require_shape(recon.rows == truth.rows && recon.cols == truth.cols,
                "two_way_identification: shape mismatch");
  const int64_t n = recon.rows, e = recon.cols;
  require(n >= 2, "two_way_identification: need at least two items");
  require(e >= 2, "two_way_identification: need at least two features");

  // Row-standardize both sides; Pearson correlation becomes a dot product.
  auto standardized = [&](const Matrix& m) {
    Matrix z = m;
    for (int64_t i = 0; i < n; ++i) {
      float* r = z.row(i);
      double mean = 0;
      for (int64_t c = 0; c < e; ++c) mean += r[c];
      mean /= double(e);
      double var = 0;
      for (int64_t c = 0; c < e; ++c) var += (r[c] - mean) * (r[c] - mean);
      if (!(var > 0))
        throw ValueError("two_way_identification: constant row " +
                         std::to_string(i));
      const double inv = 1.0 / std::sqrt(var);
      for (int64_t c = 0; c < e; ++c) r[c] = float((r[c] - mean) * inv);
    }
    return z;
  };
  const Matrix zr = standardized(recon);
  const Matrix zt = standardized(truth);
  Matrix corr(n, n);
  detail::gemm<float>(false, true, n, n, e, 1.0f, zt.data.data(),
                      zr.data.data(), 0.0f, corr.data.data());

  int64_t wins = 0;
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < n; ++j) {
      if (j == i) continue;
      wins += corr.at(i, i) > corr.at(i, j);
    }
  return double(wins) / double(n * (n - 1));
}

// How far apart the two embedding clouds sit.
struct ModalityGap {
  double centroid_distance = 0;
  double mean_paired_euclidean = 0;
  double mean_paired_cosine = 0;
};

inline ModalityGap modality_gap(const Matrix& a, const Matrix& b) {
  require_shape(a.rows == b.rows && a.cols == b.cols,
                "modality_gap: shape mismatch");
  require(a.rows >= 1, "modality_gap: empty input");
  const int64_t n = a.rows, e = a.cols;
  ModalityGap g;
  std::vector<double> ca(e, 0), cb(e, 0);
  for (int64_t i = 0; i < n; ++i) {
    double d2 = 0, dot = 0, na = 0, nb = 0;
    for (int64_t c = 0; c < e; ++c) {
      const double x = a.at(i, c), y = b.at(i, c);
      ca[c] += x;
      cb[c] += y;
      d2 += (x - y) * (x - y);
      dot += x * y;
      na += x * x;
      nb += y * y;
    }
    g.mean_paired_euclidean += std::sqrt(d2);
    g.mean_paired_cosine +=
        dot / std::max(std::sqrt(na) * std::sqrt(nb), 1e-12);
  }
  g.mean_paired_euclidean /= double(n);
  g.mean_paired_cosine /= double(n);
  double c2 = 0;
  for (int64_t c = 0; c < e; ++c) {
    const double d = ca[c] / double(n) - cb[c] / double(n);
    c2 += d * d;
  }
  g.centroid_distance = std::sqrt(c2);
  return g;
}

// Nearest-neighbor index over L2-normalized embeddings, with a save/load
// pair so a trained run can ship its lookup table.
struct EmbeddingStore {
  std::vector<std::string> ids;
  Matrix vectors;  // rows unit-norm

  int64_t size() const { return vectors.rows; }
  int64_t dim() const { return vectors.cols; }

  void add(const std::string& id, const std::vector<float>& vec) {
    require(!id.empty(), "EmbeddingStore: empty id");
    for (const auto& existing : ids)
      require(existing != id, "EmbeddingStore: duplicate id " + id);
    if (vectors.rows == 0) {
      vectors = Matrix(0, static_cast<int64_t>(vec.size()));
    }
    require_shape(static_cast<int64_t>(vec.size()) == vectors.cols,
                  "EmbeddingStore: dimension mismatch for " + id);
    double n = 0;
    for (float v : vec) n += double(v) * double(v);
    n = std::sqrt(n);
    require(n > 0, "EmbeddingStore: zero-norm embedding for " + id);
    ids.push_back(id);
    vectors.rows += 1;
    const float inv = float(1.0 / n);
    for (float v : vec) vectors.data.push_back(v * inv);
  }
};

// Cosine top-k. Ties resolve to the earlier id in insertion order.
inline std::vector<std::pair<std::string, double>> knn_query(
    const EmbeddingStore& store, const std::vector<float>& query,
    int64_t k = 16) {
  require(store.size() >= 1, "knn_query: empty store");
  require(k >= 1, "knn_query: k must be >= 1");
  require(k <= store.size(), "knn_query: k exceeds the store size");
  require_shape(static_cast<int64_t>(query.size()) == store.dim(),
                "knn_query: query dimension mismatch");
  double qn = 0;
  for (float v : query) qn += double(v) * double(v);
  qn = std::sqrt(qn);
  require(qn > 0, "knn_query: zero-norm query");

  std::vector<std::pair<double, int64_t>> scored(store.size());
  for (int64_t i = 0; i < store.size(); ++i) {
    double dot = 0;
    const float* r = store.vectors.row(i);
    for (int64_t c = 0; c < store.dim(); ++c) dot += double(r[c]) * query[c];
    scored[i] = {dot / qn, i};
  }
  std::stable_sort(scored.begin(), scored.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<std::pair<std::string, double>> out;
  out.reserve(k);
  for (int64_t i = 0; i < k; ++i)
    out.emplace_back(store.ids[scored[i].second], scored[i].first);
  return out;
}

// Index of the candidate row closest (cosine) to the reference; lowest index
// wins ties.
inline int64_t select_best_of_k(const Matrix& candidates,
                                const std::vector<float>& reference) {
  require(candidates.rows >= 1, "select_best_of_k: no candidates");
  require_shape(static_cast<int64_t>(reference.size()) == candidates.cols,
                "select_best_of_k: dimension mismatch");
  double rn = 0;
  for (float v : reference) rn += double(v) * double(v);
  rn = std::sqrt(rn);
  require(rn > 0, "select_best_of_k: zero-norm reference");
  int64_t best = 0;
  double best_score = -2.0;
  for (int64_t i = 0; i < candidates.rows; ++i) {
    double dot = 0, cn = 0;
    const float* r = candidates.row(i);
    for (int64_t c = 0; c < candidates.cols; ++c) {
      dot += double(r[c]) * reference[c];
      cn += double(r[c]) * double(r[c]);
    }
    require(cn > 0, "select_best_of_k: zero-norm candidate");
    const double score = dot / (std::sqrt(cn) * rn);
    if (score > best_score) {
      best_score = score;
      best = i;
    }
  }
  return best;
}

inline void save_store(const EmbeddingStore& store,
                       const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json j;
  j["dim"] = store.dim();
  j["count"] = store.size();
  j["normalized"] = true;
  j["ids"] = store.ids;
  write_text(dir / "store.json", j.dump(2) + "\n");
  write_f32(dir / "store.f32", store.vectors.data);
}

inline EmbeddingStore load_store(const std::filesystem::path& dir) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text(dir / "store.json"));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("load_store: bad store.json: " + std::string(e.what()));
  }
  EmbeddingStore store;
  try {
    store.ids = j.at("ids").get<std::vector<std::string>>();
    store.vectors.rows = j.at("count").get<int64_t>();
    store.vectors.cols = j.at("dim").get<int64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("load_store: missing field: " + std::string(e.what()));
  }
  if (static_cast<int64_t>(store.ids.size()) != store.vectors.rows)
    throw IoError("load_store: id count disagrees with vector count");
  store.vectors.data =
      read_f32(dir / "store.f32", store.vectors.rows * store.vectors.cols);
  return store;
}

}  // namespace voxalign
