#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "voxalign/common.hpp"
#include "voxalign/trainer.hpp"

namespace voxalign {

namespace detail {

inline constexpr char kCheckpointMagic[4] = {'V', 'X', 'C', 'P'};
inline constexpr uint32_t kCheckpointVersion = 1;

inline nlohmann::json backbone_to_json(const BackboneConfig& c) {
  return {{"voxel_dim", c.voxel_dim},
          {"hidden", c.hidden},
          {"num_blocks", c.num_blocks},
          {"use_skip", c.use_skip},
          {"tokens", c.tokens},
          {"token_dim", c.token_dim},
          {"token_mode", c.token_mode == TokenMode::CLS_ONLY ? "cls_only"
                                                             : "full"},
          {"dropout_in", c.dropout_in},
          {"dropout_block", c.dropout_block},
          {"proj_dim", c.proj_dim}};
}

inline BackboneConfig backbone_from_json(const nlohmann::json& j) {
  BackboneConfig c;
  c.voxel_dim = j.at("voxel_dim").get<int64_t>();
  c.hidden = j.at("hidden").get<int64_t>();
  c.num_blocks = j.at("num_blocks").get<int64_t>();
  c.use_skip = j.at("use_skip").get<bool>();
  c.tokens = j.at("tokens").get<int64_t>();
  c.token_dim = j.at("token_dim").get<int64_t>();
  const auto mode = j.at("token_mode").get<std::string>();
  if (mode == "cls_only") c.token_mode = TokenMode::CLS_ONLY;
  else if (mode == "full") c.token_mode = TokenMode::FULL;
  else throw ConfigError("unknown token_mode: " + mode);
  c.dropout_in = j.at("dropout_in").get<double>();
  c.dropout_block = j.at("dropout_block").get<double>();
  c.proj_dim = j.at("proj_dim").get<int64_t>();
  return c;
}

inline nlohmann::json prior_to_json(const PriorConfig& c) {
  return {{"num_steps", c.num_steps},
          {"schedule", c.schedule == ScheduleKind::LINEAR ? "linear" : "cosine"},
          {"net", c.net == PriorNetKind::TOKEN_MLP ? "token_mlp" : "transformer"},
          {"layers", c.layers},
          {"heads", c.heads},
          {"mlp_ratio", c.mlp_ratio}};
}

inline PriorConfig prior_from_json(const nlohmann::json& j) {
  PriorConfig c;
  c.num_steps = j.at("num_steps").get<int64_t>();
  const auto sched = j.at("schedule").get<std::string>();
  if (sched == "linear") c.schedule = ScheduleKind::LINEAR;
  else if (sched == "cosine") c.schedule = ScheduleKind::COSINE;
  else throw ConfigError("unknown schedule: " + sched);
  const auto net = j.at("net").get<std::string>();
  if (net == "token_mlp") c.net = PriorNetKind::TOKEN_MLP;
  else if (net == "transformer") c.net = PriorNetKind::TRANSFORMER;
  else throw ConfigError("unknown prior net: " + net);
  c.layers = j.at("layers").get<int64_t>();
  c.heads = j.at("heads").get<int64_t>();
  c.mlp_ratio = j.at("mlp_ratio").get<int64_t>();
  return c;
}

inline nlohmann::json train_to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"alpha", c.alpha},
          {"temperature", c.temperature},
          {"mixup_beta", c.mixup_beta},
          {"train_fraction", c.train_fraction},
          {"loss", loss_variant_name(c.loss)},
          {"submodule", submodule_name(c.submodule)},
          {"seed", c.seed}};
}

inline TrainConfig train_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.epochs = j.at("epochs").get<int64_t>();
  c.batch_size = j.at("batch_size").get<int64_t>();
  c.lr = j.at("lr").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.alpha = j.at("alpha").get<double>();
  c.temperature = j.at("temperature").get<double>();
  c.mixup_beta = j.at("mixup_beta").get<double>();
  c.train_fraction = j.at("train_fraction").get<double>();
  c.loss = parse_loss_variant(j.at("loss").get<std::string>());
  c.submodule = parse_submodule(j.at("submodule").get<std::string>());
  c.seed = j.at("seed").get<uint64_t>();
  return c;
}

}  // namespace detail

// Single-file checkpoint: magic, version, a JSON header (configs, history,
// tensor manifest), then one float32 payload holding every parameter
// followed by both optimizer moment buffers.
inline void save_checkpoint(const TrainState& st,
                            const std::filesystem::path& path) {
  nlohmann::json j;
  j["backbone"] = detail::backbone_to_json(st.model.backbone);
  j["prior"] = detail::prior_to_json(st.model.prior);
  j["train"] = detail::train_to_json(st.train);
  j["epochs_done"] = st.epochs_done;
  j["optimizer"] = {{"step_count", st.opt.step_count}};
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& h : st.history)
    hist.push_back({{"epoch", h.epoch},
                    {"mode", h.mode},
                    {"loss", h.loss},
                    {"contrastive", h.contrastive},
                    {"mse", h.mse},
                    {"batches", h.batches}});
  j["history"] = hist;
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& [name, t] : st.model.params.items)
    tensors.push_back({{"name", name}, {"rows", t->rows}, {"cols", t->cols}});
  j["tensors"] = tensors;
  const std::string header = j.dump();

  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f.good()) throw IoError("save_checkpoint: cannot open " + path.string());
  f.write(detail::kCheckpointMagic, 4);
  const uint32_t version = detail::kCheckpointVersion;
  f.write(reinterpret_cast<const char*>(&version), sizeof(version));
  const uint64_t hlen = header.size();
  f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  f.write(header.data(), static_cast<std::streamsize>(header.size()));

  auto write_block = [&](const std::vector<float>& data) {
    f.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(float)));
  };
  for (const auto& [name, t] : st.model.params.items) write_block(t->data);
  const size_t n = st.model.params.items.size();
  for (size_t i = 0; i < n; ++i) {
    if (i < st.opt.m.size()) {
      write_block(st.opt.m[i]);
      continue;
    }
    // Optimizer not yet stepped: store zeros of the right size.
    write_block(std::vector<float>(
        st.model.params.items[i].second->numel(), 0.0f));
  }
  for (size_t i = 0; i < n; ++i) {
    if (i < st.opt.v.size()) {
      write_block(st.opt.v[i]);
      continue;
    }
    write_block(std::vector<float>(
        st.model.params.items[i].second->numel(), 0.0f));
  }
  f.flush();
  if (!f.good())
    throw IoError("save_checkpoint: short write to " + path.string());
}

inline TrainState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f.good()) throw IoError("load_checkpoint: cannot open " + path.string());
  char magic[4];
  f.read(magic, 4);
  if (!f.good() || std::memcmp(magic, detail::kCheckpointMagic, 4) != 0)
    throw IoError("load_checkpoint: not a checkpoint file");
  uint32_t version = 0;
  f.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (!f.good() || version != detail::kCheckpointVersion)
    throw IoError("load_checkpoint: unsupported version " +
                  std::to_string(version));
  uint64_t hlen = 0;
  f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  if (!f.good()) throw IoError("load_checkpoint: truncated header length");
  std::string header(hlen, '\0');
  f.read(header.data(), static_cast<std::streamsize>(hlen));
  if (!f.good()) throw IoError("load_checkpoint: truncated header");

  nlohmann::json j;
  try {
    j = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("load_checkpoint: bad header: " + std::string(e.what()));
  }

  TrainState st;
  try {
    const auto bcfg = detail::backbone_from_json(j.at("backbone"));
    const auto pcfg = detail::prior_from_json(j.at("prior"));
    st.train = detail::train_from_json(j.at("train"));
    st = init_train_state(st.train, bcfg, pcfg);
    st.epochs_done = j.at("epochs_done").get<int64_t>();
    st.opt.step_count = j.at("optimizer").at("step_count").get<int64_t>();
    for (const auto& h : j.at("history")) {
      EpochStats e;
      e.epoch = h.at("epoch").get<int64_t>();
      e.mode = h.at("mode").get<std::string>();
      e.loss = h.at("loss").get<double>();
      e.contrastive = h.at("contrastive").get<double>();
      e.mse = h.at("mse").get<double>();
      e.batches = h.at("batches").get<int64_t>();
      st.history.push_back(e);
    }
    const auto& tensors = j.at("tensors");
    if (tensors.size() != st.model.params.items.size())
      throw IoError("load_checkpoint: tensor manifest size mismatch");
    for (size_t i = 0; i < tensors.size(); ++i) {
      const auto& [name, t] = st.model.params.items[i];
      if (tensors[i].at("name").get<std::string>() != name ||
          tensors[i].at("rows").get<int64_t>() != t->rows ||
          tensors[i].at("cols").get<int64_t>() != t->cols)
        throw IoError("load_checkpoint: tensor manifest disagrees at " + name);
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("load_checkpoint: missing field: " + std::string(e.what()));
  }

  auto read_block = [&](std::vector<float>& out, int64_t count) {
    out.resize(static_cast<size_t>(count));
    f.read(reinterpret_cast<char*>(out.data()),
           static_cast<std::streamsize>(count * sizeof(float)));
    if (!f.good())
      throw IoError("load_checkpoint: truncated payload in " + path.string());
  };
  for (auto& [name, t] : st.model.params.items) read_block(t->data, t->numel());
  const size_t n = st.model.params.items.size();
  st.opt.m.resize(n);
  st.opt.v.resize(n);
  for (size_t i = 0; i < n; ++i)
    read_block(st.opt.m[i], st.model.params.items[i].second->numel());
  for (size_t i = 0; i < n; ++i)
    read_block(st.opt.v[i], st.model.params.items[i].second->numel());
  f.peek();
  if (!f.eof())
    throw IoError("load_checkpoint: trailing bytes in " + path.string());
  return st;
}

}  // namespace voxalign
