#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "voxalign/commands.hpp"

using namespace voxalign;

namespace {

struct CommonOpts {
  std::string preset;
  std::string config;
  std::vector<std::string> sets;
  std::string out;
};

void add_common(CLI::App* sub, CommonOpts& o) {
  sub->add_option("--preset", o.preset,
                  "named defaults: desk, paper, retrieval");
  sub->add_option("--config", o.config, "INI-style config file");
  sub->add_option("--set", o.sets, "override, e.g. --set train.lr=1e-4")
      ->type_size(1);
  sub->add_option("-o,--out", o.out, "output directory");
}

// Precedence: struct defaults < VOXALIGN_OUT < --preset < --config file
// < --set overrides < dedicated flags (applied by the caller).
RunConfig build_config(const CommonOpts& o) {
  RunConfig cfg;
  if (const char* env = std::getenv("VOXALIGN_OUT")) cfg.out_dir = env;
  if (!o.preset.empty())
    apply_preset(o.preset, cfg.data, cfg.model, cfg.prior, cfg.train);
  if (!o.config.empty()) apply_config_file(cfg, o.config);
  for (const auto& s : o.sets) apply_config_override(cfg, s);
  if (!o.out.empty()) cfg.out_dir = o.out;
  cfg.sync();
  return cfg;
}

std::vector<double> parse_fractions(const std::string& s) {
  std::vector<double> out;
  size_t pos = 0;
  while (pos <= s.size()) {
    const auto comma = s.find(',', pos);
    const std::string part =
        s.substr(pos, comma == std::string::npos ? std::string::npos
                                                 : comma - pos);
    if (!part.empty()) out.push_back(detail::parse_double("fractions", part));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  if (out.empty()) throw ConfigError("fractions: empty list");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Brain-to-embedding alignment on synthetic data"};
  app.require_subcommand(1);

  CommonOpts gen_o;
  uint64_t gen_seed = 0;
  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  add_common(gen, gen_o);
  auto* gen_seed_opt = gen->add_option("--seed", gen_seed, "dataset seed");

  CommonOpts train_o;
  std::string train_data, train_resume, train_loss, train_submodule;
  int64_t train_epochs = -1;
  uint64_t train_seed = 0;
  auto* train_cmd = app.add_subcommand("train", "train a model on a dataset");
  train_cmd->add_option("dataset", train_data, "dataset directory")->required();
  add_common(train_cmd, train_o);
  auto* train_seed_opt =
      train_cmd->add_option("--seed", train_seed, "training seed");
  auto* train_epochs_opt =
      train_cmd->add_option("--epochs", train_epochs, "epoch count");
  train_cmd->add_option("--loss", train_loss,
                        "bimixco_then_softclip|bimixco|softclip|infonce|clip|"
                        "infonce_mixco");
  train_cmd->add_option("--submodule", train_submodule,
                        "full|backbone_only|backbone_projector|backbone_prior");
  train_cmd->add_option("--resume", train_resume, "checkpoint to resume from");

  CommonOpts eval_o;
  std::string eval_ckpt, eval_data;
  bool eval_single = false;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("checkpoint", eval_ckpt, "checkpoint file")->required();
  eval_cmd->add_option("dataset", eval_data, "dataset directory")->required();
  add_common(eval_cmd, eval_o);
  eval_cmd->add_flag("--single-trial", eval_single,
                     "evaluate on one presentation instead of the average");

  CommonOpts abl_o;
  std::string abl_data, abl_axis, abl_fracs;
  auto* abl_cmd = app.add_subcommand("ablate", "train and compare variants");
  abl_cmd->add_option("dataset", abl_data, "dataset directory")->required();
  abl_cmd->add_option("--axis", abl_axis, "loss|arch|submodule|datasize")
      ->required();
  abl_cmd->add_option("--fractions", abl_fracs,
                      "comma-separated data fractions for the datasize axis");
  add_common(abl_cmd, abl_o);

  std::string ret_store, ret_id, ret_query;
  int64_t ret_k = 16;
  auto* ret_cmd = app.add_subcommand("retrieve", "query an embedding store");
  ret_cmd->add_option("store", ret_store, "store directory")->required();
  ret_cmd->add_option("--id", ret_id, "query with a stored embedding");
  ret_cmd->add_option("--query", ret_query,
                      "query with raw float32 vector file");
  ret_cmd->add_option("-k", ret_k, "candidates to retrieve");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  if (*gen)
    return run_command(
        [&] {
          auto cfg = build_config(gen_o);
          if (*gen_seed_opt) cfg.data.seed = gen_seed;
          return cmd_gen(cfg, std::cout);
        },
        std::cerr);
  if (*train_cmd)
    return run_command(
        [&] {
          auto cfg = build_config(train_o);
          if (*train_seed_opt) cfg.train.seed = train_seed;
          if (*train_epochs_opt) cfg.train.epochs = train_epochs;
          if (!train_loss.empty())
            cfg.train.loss = parse_loss_variant(train_loss);
          if (!train_submodule.empty())
            cfg.train.submodule = parse_submodule(train_submodule);
          return cmd_train(cfg, train_data, train_resume, std::cout);
        },
        std::cerr);
  if (*eval_cmd)
    return run_command(
        [&] {
          auto cfg = build_config(eval_o);
          if (eval_single) cfg.eval.single_trial = true;
          return cmd_eval(cfg, eval_ckpt, eval_data, std::cout);
        },
        std::cerr);
  if (*abl_cmd)
    return run_command(
        [&] {
          auto cfg = build_config(abl_o);
          std::vector<double> fracs;
          if (!abl_fracs.empty()) fracs = parse_fractions(abl_fracs);
          return cmd_ablate(cfg, abl_axis, abl_data, fracs, std::cout);
        },
        std::cerr);
  if (*ret_cmd)
    return run_command(
        [&] { return cmd_retrieve(ret_store, ret_id, ret_query, ret_k,
                                  std::cout); },
        std::cerr);
  return kExitOther;
}
