#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <unordered_set>
#include <vector>

#include "voxalign/common.hpp"
#include "voxalign/diffusion.hpp"
#include "voxalign/losses.hpp"
#include "voxalign/models.hpp"
#include "voxalign/optim.hpp"
#include "voxalign/rng.hpp"
#include "voxalign/synthdata.hpp"

namespace voxalign {

// Contrastive objective selection. The default anneals from the mixup loss
// to the soft loss a third of the way through training.
enum class LossVariant {
  BIMIXCO_THEN_SOFTCLIP,
  BIMIXCO,
  SOFTCLIP,
  INFONCE,
  CLIP,
  INFONCE_MIXCO,
};

// Which submodules train. FULL is backbone + projector + diffusion prior;
// the others drop parts and fall back to a plain MSE reconstruction term.
enum class SubmoduleVariant {
  FULL,
  BACKBONE_ONLY,
  BACKBONE_PROJECTOR,
  BACKBONE_PRIOR,
};

inline std::string loss_variant_name(LossVariant v) {
  switch (v) {
    case LossVariant::BIMIXCO_THEN_SOFTCLIP: return "bimixco_then_softclip";
    case LossVariant::BIMIXCO: return "bimixco";
    case LossVariant::SOFTCLIP: return "softclip";
    case LossVariant::INFONCE: return "infonce";
    case LossVariant::CLIP: return "clip";
    case LossVariant::INFONCE_MIXCO: return "infonce_mixco";
  }
  return "?";
}

inline LossVariant parse_loss_variant(const std::string& s) {
  for (auto v : {LossVariant::BIMIXCO_THEN_SOFTCLIP, LossVariant::BIMIXCO,
                 LossVariant::SOFTCLIP, LossVariant::INFONCE, LossVariant::CLIP,
                 LossVariant::INFONCE_MIXCO})
    if (loss_variant_name(v) == s) return v;
  throw ConfigError("unknown loss variant: " + s);
}

inline std::string submodule_name(SubmoduleVariant v) {
  switch (v) {
    case SubmoduleVariant::FULL: return "full";
    case SubmoduleVariant::BACKBONE_ONLY: return "backbone_only";
    case SubmoduleVariant::BACKBONE_PROJECTOR: return "backbone_projector";
    case SubmoduleVariant::BACKBONE_PRIOR: return "backbone_prior";
  }
  return "?";
}

inline SubmoduleVariant parse_submodule(const std::string& s) {
  for (auto v : {SubmoduleVariant::FULL, SubmoduleVariant::BACKBONE_ONLY,
                 SubmoduleVariant::BACKBONE_PROJECTOR,
                 SubmoduleVariant::BACKBONE_PRIOR})
    if (submodule_name(v) == s) return v;
  throw ConfigError("unknown submodule variant: " + s);
}

struct TrainConfig {
  int64_t epochs = 40;
  int64_t batch_size = 64;
  double lr = 3e-4;
  double weight_decay = 1e-2;
  double alpha = 0.3;        // weight of the reconstruction term
  double temperature = 0.2;  // contrastive temperature
  double mixup_beta = 0.15;
  double train_fraction = 1.0;
  LossVariant loss = LossVariant::BIMIXCO_THEN_SOFTCLIP;
  SubmoduleVariant submodule = SubmoduleVariant::FULL;
  uint64_t seed = 1;

  bool wants_projector() const {
    return submodule == SubmoduleVariant::FULL ||
           submodule == SubmoduleVariant::BACKBONE_PROJECTOR;
  }
  bool wants_prior() const {
    return submodule == SubmoduleVariant::FULL ||
           submodule == SubmoduleVariant::BACKBONE_PRIOR;
  }

  void validate() const {
    require(epochs >= 0, "TrainConfig: epochs must be >= 0");
    require(batch_size >= 2, "TrainConfig: batch_size must be >= 2");
    require(lr > 0, "TrainConfig: lr must be positive");
    require(weight_decay >= 0, "TrainConfig: weight_decay must be >= 0");
    require(alpha >= 0, "TrainConfig: alpha must be >= 0");
    require(temperature > 0, "TrainConfig: temperature must be positive");
    require(mixup_beta > 0, "TrainConfig: mixup_beta must be positive");
    require(train_fraction > 0 && train_fraction <= 1,
            "TrainConfig: train_fraction must be in (0,1]");
  }
};

// Named bundles of defaults. "desk" is the struct defaults, "paper" scales
// the model and schedule up to the reference size, "retrieval" trains the
// contrastive pair longer with big batches.
inline void apply_preset(const std::string& name, SynthConfig& data,
                         BackboneConfig& model, PriorConfig& prior,
                         TrainConfig& train) {
  if (name == "desk") {
    data = SynthConfig{};
    model = BackboneConfig{};
    prior = PriorConfig{};
    TrainConfig fresh;
    fresh.seed = train.seed;
    train = fresh;
    return;
  }
  if (name == "paper") {
    data = SynthConfig{};
    model = BackboneConfig{};
    model.voxel_dim = 15724;
    model.hidden = 4096;
    model.tokens = 257;
    model.token_dim = 768;
    model.proj_dim = 2048;
    prior = PriorConfig{};
    TrainConfig fresh;
    fresh.seed = train.seed;
    fresh.epochs = 240;
    fresh.batch_size = 32;
    train = fresh;
    return;
  }
  if (name == "retrieval") {
    data = SynthConfig{};
    model = BackboneConfig{};
    prior = PriorConfig{};
    TrainConfig fresh;
    fresh.seed = train.seed;
    fresh.epochs = 120;
    fresh.batch_size = 300;
    fresh.submodule = SubmoduleVariant::BACKBONE_PROJECTOR;
    train = fresh;
    return;
  }
  throw ConfigError("unknown preset: " + name);
}

struct EpochStats {
  int64_t epoch = 0;
  std::string mode;  // contrastive loss used this epoch
  double loss = 0;
  double contrastive = 0;
  double mse = 0;
  int64_t batches = 0;
};

struct TrainState {
  ModelParams model;
  AdamW opt;
  TrainConfig train;
  NoiseSchedule schedule;  // derived from model.prior, not persisted
  std::vector<EpochStats> history;
  int64_t epochs_done = 0;
};

namespace detail {

inline constexpr uint64_t kTrainEpochStream = 0x7E01;
inline constexpr uint64_t kTrainSubsetStream = 0x7E02;

}  // namespace detail

inline std::string mode_for_epoch(const TrainConfig& c, int64_t epoch) {
  switch (c.loss) {
    case LossVariant::BIMIXCO_THEN_SOFTCLIP:
      return phase_for_epoch(epoch, c.epochs) == Phase::BIMIXCO ? "bimixco"
                                                                : "softclip";
    case LossVariant::BIMIXCO: return "bimixco";
    case LossVariant::SOFTCLIP: return "softclip";
    case LossVariant::INFONCE: return "infonce";
    case LossVariant::CLIP: return "clip";
    case LossVariant::INFONCE_MIXCO: return "infonce_mixco";
  }
  return "?";
}

inline bool mode_uses_mixup(const std::string& mode) {
  return mode == "bimixco" || mode == "infonce_mixco";
}

inline TrainState init_train_state(const TrainConfig& tcfg,
                                   const BackboneConfig& bcfg,
                                   const PriorConfig& pcfg) {
  tcfg.validate();
  TrainState st;
  st.train = tcfg;
  st.model = init_params<float>(bcfg, pcfg, tcfg.seed, tcfg.wants_projector(),
                                tcfg.wants_prior());
  st.opt.lr = float(tcfg.lr);
  st.opt.weight_decay = float(tcfg.weight_decay);
  st.schedule = build_schedule(pcfg.num_steps, pcfg.schedule);
  return st;
}

// Training rows for the configured data fraction. Subsampling happens at
// the image level: an image keeps either all of its presentations or none.
inline std::vector<int64_t> select_training_rows(const TrainConfig& c,
                                                 const SplitData& sp) {
  const int64_t rows = sp.train_voxels.rows;
  std::vector<int64_t> all(rows);
  std::iota(all.begin(), all.end(), 0);
  if (c.train_fraction >= 1.0) return all;

  std::vector<int64_t> images;
  for (int64_t k = 0; k < rows; ++k)
    if (k == 0 || sp.train_images[k] != sp.train_images[k - 1])
      images.push_back(sp.train_images[k]);
  Rng rng = Rng::derive(c.seed, detail::kTrainSubsetStream);
  rng.shuffle(images.begin(), images.end());
  const int64_t keep = std::max<int64_t>(
      1, static_cast<int64_t>(
             std::llround(c.train_fraction * double(images.size()))));
  std::unordered_set<int64_t> kept(images.begin(), images.begin() + keep);
  std::vector<int64_t> out;
  for (int64_t k = 0; k < rows; ++k)
    if (kept.count(sp.train_images[k])) out.push_back(k);
  return out;
}

// Advance training to `until_epoch` (exclusive). Each epoch draws every
// random decision from a stream derived from (seed, epoch), so resuming
// from a checkpoint replays the exact run.
inline void train_to(TrainState& st, const SplitData& sp, int64_t until_epoch) {
  const TrainConfig& c = st.train;
  c.validate();
  require(until_epoch <= c.epochs, "train_to: beyond the configured epochs");
  const int64_t out_cols = st.model.backbone.out_dim();
  require_shape(out_cols <= sp.train_targets.cols,
                "train_to: target embedding narrower than the model output");
  const auto rows = select_training_rows(c, sp);
  require(static_cast<int64_t>(rows.size()) >= 2,
          "train_to: fewer than two training rows");
  const int64_t V = sp.train_voxels.cols;

  for (int64_t epoch = st.epochs_done; epoch < until_epoch; ++epoch) {
    const std::string mode = mode_for_epoch(c, epoch);
    const bool mixed = mode_uses_mixup(mode);
    Rng rng = Rng::derive(c.seed, detail::kTrainEpochStream, uint64_t(epoch));
    auto order = rows;
    rng.shuffle(order.begin(), order.end());

    EpochStats stats;
    stats.epoch = epoch;
    stats.mode = mode;
    double samples = 0;

    for (size_t start = 0; start < order.size(); start += c.batch_size) {
      const int64_t B = std::min<int64_t>(c.batch_size,
                                          int64_t(order.size() - start));
      if (B < 2) continue;  // contrastive losses need company

      Matrix xb(B, V), tb(B, out_cols);
      for (int64_t k = 0; k < B; ++k) {
        const int64_t r = order[start + k];
        std::copy_n(sp.train_voxels.row(r), V, xb.row(k));
        std::copy_n(sp.train_targets.row(r), out_cols, tb.row(k));
      }

      MixSpec spec;
      Matrix x_in = xb, t_rec = tb;
      if (mixed) {
        spec = sample_mixspec(B, c.mixup_beta, rng);
        x_in = mix_voxels(xb, spec);
        t_rec = mix_targets(tb, spec);
      }

      auto xin = from_matrix<float>(x_in);
      auto tgt = from_matrix<float>(tb);      // contrastive: original labels
      auto tgt_rec = from_matrix<float>(t_rec);  // reconstruction: mixed

      auto bb = backbone_forward(st.model, xin, true, rng);
      auto src = st.model.has_projector() ? projector_forward(st.model, bb) : bb;

      TensorPtr contr;
      if (mode == "bimixco") {
        contr = bimixco_loss(src, tgt, spec, c.temperature);
      } else if (mode == "infonce_mixco") {
        contr = info_nce_mixco(src, tgt, spec, c.temperature);
      } else if (mode == "softclip") {
        contr = softclip_loss(src, tgt, c.temperature);
      } else if (mode == "clip") {
        contr = clip_loss(src, tgt, c.temperature);
      } else {
        contr = info_nce(src, tgt, c.temperature);
      }

      TensorPtr rec;
      if (st.model.has_prior()) {
        rec = prior_train_loss(st.model, tgt_rec, bb, st.schedule, rng);
      } else {
        rec = mse_loss(bb, tgt_rec);
      }
      auto total = combined_loss(contr, rec, c.alpha);

      if (!std::isfinite(total->value()))
        throw NumericError(
            "training diverged at epoch " + std::to_string(epoch) + " step " +
            std::to_string(stats.batches) + " (contrastive=" +
            std::to_string(contr->value()) + ", mse=" +
            std::to_string(rec->value()) + ")");

      st.model.params.zero_grad();
      backward(total);
      st.opt.step(st.model.params);

      stats.loss += total->value() * double(B);
      stats.contrastive += contr->value() * double(B);
      stats.mse += rec->value() * double(B);
      stats.batches += 1;
      samples += double(B);
    }
    require(stats.batches >= 1, "train_to: no usable batches this epoch");
    stats.loss /= samples;
    stats.contrastive /= samples;
    stats.mse /= samples;
    st.history.push_back(stats);
    st.epochs_done = epoch + 1;
  }
}

inline TrainState train(const TrainConfig& tcfg, const BackboneConfig& bcfg,
                        const PriorConfig& pcfg, const SplitData& sp) {
  TrainState st = init_train_state(tcfg, bcfg, pcfg);
  train_to(st, sp, tcfg.epochs);
  return st;
}

}  // namespace voxalign
