#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include <json.hpp>

#include "voxalign/diffusion.hpp"
#include "voxalign/models.hpp"
#include "voxalign/retrieval.hpp"
#include "voxalign/synthdata.hpp"
#include "voxalign/tensor.hpp"

namespace voxalign {

struct EvalOptions {
  uint64_t seed = 12345;
  bool single_trial = false;  // use one presentation instead of the average
  int64_t batch_size = 300;   // sampled protocol; skipped if n_test is smaller
  int64_t repeats = 30;
};

struct EvalReport {
  int64_t n_test = 0;
  bool single_trial = false;
  std::string contrastive_space;  // projector | backbone
  std::string recon_space;        // prior | projector | backbone

  FullRetrieval full;  // exhaustive protocol over the whole test set
  bool has_batch = false;
  RetrievalReport batch;

  double two_way = 0;       // identification accuracy in the recon space
  double backbone_mse = 0;  // backbone output vs target embeddings
  bool has_projector = false;
  double projector_mse = 0;
  bool has_prior = false;
  double prior_mse = 0;  // sampled prior output vs target embeddings

  ModalityGap gap_backbone;
  ModalityGap gap_projector;
  ModalityGap gap_prior;
};

namespace detail {

inline constexpr uint64_t kEvalSamplerStream = 0xE7A1;

inline double matrix_mse(const Matrix& a, const Matrix& b) {
  require_shape(a.rows == b.rows && a.cols == b.cols, "matrix_mse: shape");
  double s = 0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    const double d = double(a.data[i]) - double(b.data[i]);
    s += d * d;
  }
  return s / double(a.numel());
}

inline Matrix first_columns(const Matrix& m, int64_t cols) {
  require_shape(cols <= m.cols, "first_columns: too wide");
  Matrix out(m.rows, cols);
  for (int64_t i = 0; i < m.rows; ++i)
    std::copy_n(m.row(i), cols, out.row(i));
  return out;
}

}  // namespace detail

// Runs every quality metric on the held-out images. Retrieval always uses
// the contrastive embedding space; reconstruction metrics use the sampled
// prior when one exists, else the projector, else the raw backbone output.
inline EvalReport evaluate(const ModelParams& model, const SynthDataset& ds,
                           const SplitData& sp, const EvalOptions& opts = {}) {
  NoGradGuard ng;
  EvalReport rep;
  rep.single_trial = opts.single_trial;
  const Matrix vox =
      opts.single_trial ? test_single_trial(ds, 0) : sp.test_voxels_avg;
  const Matrix tgt =
      detail::first_columns(sp.test_targets, model.backbone.out_dim());
  rep.n_test = vox.rows;

  Rng unused(0);
  auto xin = from_matrix<float>(vox);
  auto bb_t = backbone_forward(model, xin, false, unused);
  const Matrix bb = to_matrix(*bb_t);

  rep.has_projector = model.has_projector();
  rep.has_prior = model.has_prior();
  Matrix contrastive = bb;
  rep.contrastive_space = "backbone";
  if (rep.has_projector) {
    contrastive = to_matrix(*projector_forward(model, bb_t));
    rep.contrastive_space = "projector";
  }

  rep.full = full_retrieval_top1(contrastive, tgt);
  if (rep.n_test >= opts.batch_size && opts.batch_size >= 2) {
    rep.has_batch = true;
    rep.batch = batch_retrieval_eval(contrastive, tgt, opts.batch_size,
                                     opts.repeats, opts.seed);
  }

  rep.backbone_mse = detail::matrix_mse(bb, tgt);
  rep.gap_backbone = modality_gap(bb, tgt);

  Matrix recon = bb;
  rep.recon_space = "backbone";
  if (rep.has_projector) {
    rep.projector_mse = detail::matrix_mse(contrastive, tgt);
    rep.gap_projector = modality_gap(contrastive, tgt);
    recon = contrastive;
    rep.recon_space = "projector";
  }
  if (rep.has_prior) {
    const auto schedule =
        build_schedule(model.prior.num_steps, model.prior.schedule);
    Rng rng = Rng::derive(opts.seed, detail::kEvalSamplerStream);
    const Matrix sampled = to_matrix(*sample_prior(model, bb_t, schedule, rng));
    rep.prior_mse = detail::matrix_mse(sampled, tgt);
    rep.gap_prior = modality_gap(sampled, tgt);
    recon = sampled;
    rep.recon_space = "prior";
  }
  rep.two_way = two_way_identification(recon, tgt);
  return rep;
}

inline nlohmann::json gap_to_json(const ModalityGap& g) {
  return {{"centroid_distance", g.centroid_distance},
          {"mean_paired_euclidean", g.mean_paired_euclidean},
          {"mean_paired_cosine", g.mean_paired_cosine}};
}

inline nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json j;
  j["n_test"] = r.n_test;
  j["single_trial"] = r.single_trial;
  j["contrastive_space"] = r.contrastive_space;
  j["recon_space"] = r.recon_space;
  j["full_retrieval"] = {{"forward_top1", r.full.forward_top1},
                         {"backward_top1", r.full.backward_top1},
                         {"chance", r.full.chance()}};
  if (r.has_batch)
    j["batch_retrieval"] = {{"forward_top1", r.batch.forward_top1},
                            {"backward_top1", r.batch.backward_top1},
                            {"batch_size", r.batch.batch_size},
                            {"repeats", r.batch.repeats},
                            {"chance", r.batch.chance()}};
  j["two_way_identification"] = r.two_way;
  j["backbone_mse"] = r.backbone_mse;
  j["gap_backbone"] = gap_to_json(r.gap_backbone);
  if (r.has_projector) {
    j["projector_mse"] = r.projector_mse;
    j["gap_projector"] = gap_to_json(r.gap_projector);
  }
  if (r.has_prior) {
    j["prior_mse"] = r.prior_mse;
    j["gap_prior"] = gap_to_json(r.gap_prior);
  }
  return j;
}

}  // namespace voxalign
