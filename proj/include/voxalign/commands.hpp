#pragma once

#include <cstdio>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "voxalign/ablate.hpp"
#include "voxalign/checkpoint.hpp"
#include "voxalign/config.hpp"
#include "voxalign/eval.hpp"
#include "voxalign/synthdata.hpp"
#include "voxalign/trainer.hpp"

namespace voxalign {

// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitOther = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;

namespace detail {

inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

inline nlohmann::json history_to_json(const std::vector<EpochStats>& hist) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& h : hist)
    rows.push_back({{"epoch", h.epoch},
                    {"mode", h.mode},
                    {"loss", h.loss},
                    {"contrastive", h.contrastive},
                    {"mse", h.mse},
                    {"batches", h.batches}});
  return rows;
}

inline std::string history_to_text(const std::vector<EpochStats>& hist) {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof(line), "%6s %-14s %10s %12s %10s %8s\n", "epoch",
                "mode", "loss", "contrastive", "mse", "batches");
  out += line;
  for (const auto& h : hist) {
    std::snprintf(line, sizeof(line), "%6lld %-14s %10.5f %12.5f %10.5f %8lld\n",
                  static_cast<long long>(h.epoch), h.mode.c_str(), h.loss,
                  h.contrastive, h.mse, static_cast<long long>(h.batches));
    out += line;
  }
  return out;
}

inline std::string report_to_text(const EvalReport& r) {
  std::string s;
  s += "test items:         " + std::to_string(r.n_test) +
       (r.single_trial ? "  (single-trial voxels)\n" : "  (averaged voxels)\n");
  s += "contrastive space:  " + r.contrastive_space + "\n";
  s += "recon space:        " + r.recon_space + "\n";
  s += "full retrieval:     fwd@1 " + fmt("%.4f", r.full.forward_top1) +
       "  bwd@1 " + fmt("%.4f", r.full.backward_top1) + "  (chance " +
       fmt("%.4f", r.full.chance()) + ")\n";
  if (r.has_batch)
    s += "batch retrieval:    fwd@1 " + fmt("%.4f", r.batch.forward_top1) +
         "  bwd@1 " + fmt("%.4f", r.batch.backward_top1) + "  (batch " +
         std::to_string(r.batch.batch_size) + ", " +
         std::to_string(r.batch.repeats) + " repeats, chance " +
         fmt("%.4f", r.batch.chance()) + ")\n";
  s += "two-way ident.:     " + fmt("%.4f", r.two_way) + "  (chance 0.5)\n";
  s += "backbone mse:       " + fmt("%.5f", r.backbone_mse) + "  gap " +
       fmt("%.4f", r.gap_backbone.centroid_distance) + "\n";
  if (r.has_projector)
    s += "projector mse:      " + fmt("%.5f", r.projector_mse) + "  gap " +
         fmt("%.4f", r.gap_projector.centroid_distance) + "\n";
  if (r.has_prior)
    s += "prior mse:          " + fmt("%.5f", r.prior_mse) + "  gap " +
         fmt("%.4f", r.gap_prior.centroid_distance) + "\n";
  return s;
}

}  // namespace detail

inline int cmd_gen(RunConfig cfg, std::ostream& out) {
  cfg.sync();
  const std::filesystem::path dir = cfg.out_dir;
  auto ds = generate_dataset(cfg.data);
  save_dataset(ds, dir / "dataset");
  write_text(dir / "config.ini", config_to_text(cfg));
  out << "dataset: " << (dir / "dataset").string() << "\n"
      << "images " << cfg.data.num_images << " (train "
      << cfg.data.num_train() << ", test " << cfg.data.num_test() << "), reps "
      << cfg.data.reps << ", voxels " << cfg.data.voxel_dim << ", embed "
      << cfg.data.tokens << "x" << cfg.data.token_dim << ", noise_sd "
      << cfg.data.noise_sd << ", seed " << cfg.data.seed << "\n";
  return kExitOk;
}

inline int cmd_train(RunConfig cfg, const std::filesystem::path& dataset_dir,
                     const std::filesystem::path& resume, std::ostream& out) {
  auto ds = load_dataset(dataset_dir);
  cfg.data = ds.config;
  cfg.sync();
  auto sp = split_and_average(ds);

  const std::filesystem::path dir = cfg.out_dir;
  std::filesystem::create_directories(dir);
  TrainState st;
  if (!resume.empty()) {
    st = load_checkpoint(resume);
    out << "resuming from " << resume.string() << " at epoch "
        << st.epochs_done << "\n";
  } else {
    st = init_train_state(cfg.train, cfg.model, cfg.prior);
  }

  try {
    train_to(st, sp, st.train.epochs);
  } catch (const NumericError& e) {
    write_text(dir / "diagnostic.txt", std::string(e.what()) + "\n");
    throw;
  }

  save_checkpoint(st, dir / "checkpoint.vxcp");
  write_text(dir / "history.json",
             detail::history_to_json(st.history).dump(2) + "\n");
  write_text(dir / "history.txt", detail::history_to_text(st.history));
  out << "trained " << st.epochs_done << " epochs ("
      << submodule_name(st.train.submodule) << ", "
      << loss_variant_name(st.train.loss) << ", seed " << st.train.seed
      << "), params " << st.model.params.total_count() << "\n";
  if (!st.history.empty())
    out << "final loss " << detail::fmt("%.5f", st.history.back().loss)
        << " (contrastive " << detail::fmt("%.5f", st.history.back().contrastive)
        << ", mse " << detail::fmt("%.5f", st.history.back().mse) << ")\n";
  out << "checkpoint: " << (dir / "checkpoint.vxcp").string() << "\n";
  return kExitOk;
}

inline int cmd_eval(RunConfig cfg, const std::filesystem::path& ckpt_path,
                    const std::filesystem::path& dataset_dir,
                    std::ostream& out) {
  auto ds = load_dataset(dataset_dir);
  auto sp = split_and_average(ds);
  auto st = load_checkpoint(ckpt_path);
  auto rep = evaluate(st.model, ds, sp, cfg.eval);

  const std::filesystem::path dir = cfg.out_dir;
  std::filesystem::create_directories(dir);
  write_text(dir / "eval.json", report_to_json(rep).dump(2) + "\n");
  const std::string text = detail::report_to_text(rep);
  write_text(dir / "eval.txt", text);
  out << text;
  return kExitOk;
}

inline int cmd_ablate(RunConfig cfg, const std::string& axis_name,
                      const std::filesystem::path& dataset_dir,
                      const std::vector<double>& fractions, std::ostream& out) {
  const AblationAxis axis = parse_ablation_axis(axis_name);
  auto ds = load_dataset(dataset_dir);
  cfg.data = ds.config;
  cfg.sync();
  auto sp = split_and_average(ds);

  AblationTable table =
      axis == AblationAxis::DATASIZE && !fractions.empty()
          ? run_ablation(axis, cfg.train, cfg.model, cfg.prior, ds, sp,
                         cfg.eval, fractions)
          : run_ablation(axis, cfg.train, cfg.model, cfg.prior, ds, sp,
                         cfg.eval);

  const std::filesystem::path dir = cfg.out_dir;
  std::filesystem::create_directories(dir);
  write_text(dir / ("ablation_" + table.axis + ".json"),
             table_to_json(table).dump(2) + "\n");
  const std::string text = format_table(table);
  write_text(dir / ("ablation_" + table.axis + ".txt"), text);
  out << text;
  return kExitOk;
}

inline int cmd_retrieve(const std::filesystem::path& store_dir,
                        const std::string& query_id,
                        const std::filesystem::path& query_file, int64_t k,
                        std::ostream& out) {
  auto store = load_store(store_dir);
  require(store.size() >= 1, "retrieve: empty store");

  std::vector<float> query;
  if (!query_id.empty()) {
    int64_t idx = -1;
    for (int64_t i = 0; i < store.size(); ++i)
      if (store.ids[i] == query_id) {
        idx = i;
        break;
      }
    require(idx >= 0, "retrieve: id not in store: " + query_id);
    query.assign(store.vectors.row(idx), store.vectors.row(idx) + store.dim());
  } else if (!query_file.empty()) {
    query = read_f32(query_file, store.dim());
  } else {
    throw ConfigError("retrieve: need --id or --query");
  }

  const auto ranked = knn_query(store, query, k);
  Matrix cands(k, store.dim());
  for (int64_t i = 0; i < k; ++i) {
    for (int64_t s = 0; s < store.size(); ++s)
      if (store.ids[s] == ranked[i].first) {
        std::copy_n(store.vectors.row(s), store.dim(), cands.row(i));
        break;
      }
  }
  const int64_t best = select_best_of_k(cands, query);
  for (int64_t i = 0; i < k; ++i)
    out << (i + 1) << "  " << ranked[i].first << "  "
        << detail::fmt("%.6f", ranked[i].second) << "\n";
  out << "best: " << ranked[best].first << "\n";
  return kExitOk;
}

// Maps the library's error taxonomy onto process exit codes.
template <class F>
int run_command(F&& f, std::ostream& err) {
  try {
    return f();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const IoError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const ShapeError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const ValueError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitOther;
  }
}

}  // namespace voxalign
