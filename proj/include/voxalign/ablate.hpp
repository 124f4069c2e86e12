#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include <json.hpp>

#include "voxalign/eval.hpp"
#include "voxalign/trainer.hpp"

namespace voxalign {

enum class AblationAxis { LOSS, ARCH, SUBMODULE, DATASIZE };

inline std::string ablation_axis_name(AblationAxis a) {
  switch (a) {
    case AblationAxis::LOSS: return "loss";
    case AblationAxis::ARCH: return "arch";
    case AblationAxis::SUBMODULE: return "submodule";
    case AblationAxis::DATASIZE: return "datasize";
  }
  return "?";
}

inline AblationAxis parse_ablation_axis(const std::string& s) {
  for (auto a : {AblationAxis::LOSS, AblationAxis::ARCH,
                 AblationAxis::SUBMODULE, AblationAxis::DATASIZE})
    if (ablation_axis_name(a) == s) return a;
  throw ConfigError("unknown ablation axis: " + s);
}

struct AblationRow {
  std::string name;
  int64_t param_count = 0;
  double final_loss = 0;
  EvalReport eval;
};

struct AblationTable {
  std::string axis;
  std::vector<AblationRow> rows;
};

// One training run per row; everything else (data, split, seed, untouched
// hyperparameters) is shared so rows are comparable.
inline AblationTable run_ablation(AblationAxis axis, const TrainConfig& tcfg,
                                  const BackboneConfig& bcfg,
                                  const PriorConfig& pcfg,
                                  const SynthDataset& ds, const SplitData& sp,
                                  const EvalOptions& eopts = {},
                                  const std::vector<double>& fractions =
                                      {1.0, 0.5, 0.25, 0.1}) {
  struct Variant {
    std::string name;
    TrainConfig t;
    BackboneConfig b;
  };
  std::vector<Variant> variants;
  switch (axis) {
    case AblationAxis::LOSS:
      for (auto v : {LossVariant::BIMIXCO_THEN_SOFTCLIP, LossVariant::BIMIXCO,
                     LossVariant::SOFTCLIP, LossVariant::INFONCE,
                     LossVariant::CLIP, LossVariant::INFONCE_MIXCO}) {
        Variant var{loss_variant_name(v), tcfg, bcfg};
        var.t.loss = v;
        variants.push_back(var);
      }
      break;
    case AblationAxis::ARCH: {
      struct Arch {
        const char* name;
        int64_t blocks;
        bool skip;
        TokenMode mode;
      };
      for (auto a : {Arch{"blocks0", 0, false, TokenMode::FULL},
                     Arch{"blocks2", 2, false, TokenMode::FULL},
                     Arch{"blocks2_skip", 2, true, TokenMode::FULL},
                     Arch{"blocks4", 4, false, TokenMode::FULL},
                     Arch{"blocks4_skip", 4, true, TokenMode::FULL},
                     Arch{"blocks4_skip_cls", 4, true, TokenMode::CLS_ONLY}}) {
        Variant var{a.name, tcfg, bcfg};
        var.b.num_blocks = a.blocks;
        var.b.use_skip = a.skip;
        var.b.token_mode = a.mode;
        variants.push_back(var);
      }
      break;
    }
    case AblationAxis::SUBMODULE:
      for (auto v : {SubmoduleVariant::FULL, SubmoduleVariant::BACKBONE_ONLY,
                     SubmoduleVariant::BACKBONE_PROJECTOR,
                     SubmoduleVariant::BACKBONE_PRIOR}) {
        Variant var{submodule_name(v), tcfg, bcfg};
        var.t.submodule = v;
        variants.push_back(var);
      }
      break;
    case AblationAxis::DATASIZE:
      require(!fractions.empty(), "run_ablation: no data fractions");
      for (double f : fractions) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "frac%.3g", f);
        Variant var{buf, tcfg, bcfg};
        var.t.train_fraction = f;
        variants.push_back(var);
      }
      break;
  }

  AblationTable table;
  table.axis = ablation_axis_name(axis);
  for (const auto& var : variants) {
    TrainState st = train(var.t, var.b, pcfg, sp);
    AblationRow row;
    row.name = var.name;
    row.param_count = st.model.params.total_count();
    row.final_loss = st.history.empty() ? 0.0 : st.history.back().loss;
    row.eval = evaluate(st.model, ds, sp, eopts);
    table.rows.push_back(std::move(row));
  }
  return table;
}

inline nlohmann::json table_to_json(const AblationTable& t) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : t.rows)
    rows.push_back({{"name", r.name},
                    {"param_count", r.param_count},
                    {"final_loss", r.final_loss},
                    {"eval", report_to_json(r.eval)}});
  return {{"axis", t.axis}, {"rows", rows}};
}

// Fixed-width text rendering for terminals and logs.
inline std::string format_table(const AblationTable& t) {
  std::string out = "axis: " + t.axis + "\n";
  char line[160];
  std::snprintf(line, sizeof(line), "%-22s %12s %10s %8s %8s %8s %10s\n",
                "variant", "params", "loss", "fwd@1", "bwd@1", "2way",
                "prior_mse");
  out += line;
  for (const auto& r : t.rows) {
    std::snprintf(line, sizeof(line),
                  "%-22s %12lld %10.4f %8.4f %8.4f %8.4f %10s\n",
                  r.name.c_str(), static_cast<long long>(r.param_count),
                  r.final_loss, r.eval.full.forward_top1,
                  r.eval.full.backward_top1, r.eval.two_way,
                  r.eval.has_prior
                      ? std::to_string(r.eval.prior_mse).substr(0, 9).c_str()
                      : "-");
    out += line;
  }
  return out;
}

}  // namespace voxalign
