#pragma once

#include <cctype>
#include <cstdint>
#include <filesystem>
#include <string>

#include "voxalign/eval.hpp"
#include "voxalign/io.hpp"
#include "voxalign/synthdata.hpp"
#include "voxalign/trainer.hpp"

namespace voxalign {

// Everything a run needs, grouped by the module each block configures.
// Backbone dimensions that must agree with the data (voxel_dim, tokens,
// token_dim) live only in [data] and are copied over by sync().
struct RunConfig {
  SynthConfig data;
  BackboneConfig model;
  PriorConfig prior;
  TrainConfig train;
  EvalOptions eval;
  std::string out_dir = "out";

  void sync() {
    model.voxel_dim = data.voxel_dim;
    model.tokens = data.tokens;
    model.token_dim = data.token_dim;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

inline int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const int64_t x = std::stoll(v, &pos);
    if (pos == v.size()) return x;
  } catch (...) {
  }
  throw ConfigError(key + ": expected an integer, got '" + v + "'");
}

inline uint64_t parse_uint(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const uint64_t x = std::stoull(v, &pos);
    if (pos == v.size() && v[0] != '-') return x;
  } catch (...) {
  }
  throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos == v.size()) return x;
  } catch (...) {
  }
  throw ConfigError(key + ": expected a number, got '" + v + "'");
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

// enum parsers throw ConfigError themselves; wrap to prefix the key.
template <class F>
auto parse_enum(const std::string& key, const std::string& v, F&& f) {
  try {
    return f(v);
  } catch (const ConfigError& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

}  // namespace detail

// Applies one "section.key = value" assignment. Unknown sections or keys are
// rejected so typos in sweep scripts fail loudly.
inline void apply_config_value(RunConfig& c, const std::string& section,
                               const std::string& key,
                               const std::string& value) {
  using namespace detail;
  const std::string full = section + "." + key;
  if (section == "data") {
    auto& d = c.data;
    if (key == "num_images") d.num_images = parse_int(full, value);
    else if (key == "reps") d.reps = parse_int(full, value);
    else if (key == "voxel_dim") d.voxel_dim = parse_int(full, value);
    else if (key == "tokens") d.tokens = parse_int(full, value);
    else if (key == "token_dim") d.token_dim = parse_int(full, value);
    else if (key == "noise_sd") d.noise_sd = parse_double(full, value);
    else if (key == "test_fraction") d.test_fraction = parse_double(full, value);
    else if (key == "encoder")
      d.encoder = parse_enum(full, value, parse_encoder);
    else if (key == "seed") d.seed = parse_uint(full, value);
    else throw ConfigError("unknown key " + full);
    return;
  }
  if (section == "model") {
    auto& m = c.model;
    if (key == "hidden") m.hidden = parse_int(full, value);
    else if (key == "num_blocks") m.num_blocks = parse_int(full, value);
    else if (key == "use_skip") m.use_skip = parse_bool(full, value);
    else if (key == "token_mode") {
      if (value == "full") m.token_mode = TokenMode::FULL;
      else if (value == "cls_only") m.token_mode = TokenMode::CLS_ONLY;
      else throw ConfigError(full + ": expected full|cls_only, got '" + value + "'");
    } else if (key == "dropout_in") m.dropout_in = parse_double(full, value);
    else if (key == "dropout_block") m.dropout_block = parse_double(full, value);
    else if (key == "proj_dim") m.proj_dim = parse_int(full, value);
    else throw ConfigError("unknown key " + full);
    return;
  }
  if (section == "prior") {
    auto& p = c.prior;
    if (key == "num_steps") p.num_steps = parse_int(full, value);
    else if (key == "schedule") {
      if (value == "cosine") p.schedule = ScheduleKind::COSINE;
      else if (value == "linear") p.schedule = ScheduleKind::LINEAR;
      else throw ConfigError(full + ": expected cosine|linear, got '" + value + "'");
    } else if (key == "net") {
      if (value == "transformer") p.net = PriorNetKind::TRANSFORMER;
      else if (value == "token_mlp") p.net = PriorNetKind::TOKEN_MLP;
      else throw ConfigError(full + ": expected transformer|token_mlp, got '" +
                             value + "'");
    } else if (key == "layers") p.layers = parse_int(full, value);
    else if (key == "heads") p.heads = parse_int(full, value);
    else if (key == "mlp_ratio") p.mlp_ratio = parse_int(full, value);
    else throw ConfigError("unknown key " + full);
    return;
  }
  if (section == "train") {
    auto& t = c.train;
    if (key == "epochs") t.epochs = parse_int(full, value);
    else if (key == "batch_size") t.batch_size = parse_int(full, value);
    else if (key == "lr") t.lr = parse_double(full, value);
    else if (key == "weight_decay") t.weight_decay = parse_double(full, value);
    else if (key == "alpha") t.alpha = parse_double(full, value);
    else if (key == "temperature") t.temperature = parse_double(full, value);
    else if (key == "mixup_beta") t.mixup_beta = parse_double(full, value);
    else if (key == "train_fraction")
      t.train_fraction = parse_double(full, value);
    else if (key == "loss")
      t.loss = parse_enum(full, value, parse_loss_variant);
    else if (key == "submodule")
      t.submodule = parse_enum(full, value, parse_submodule);
    else if (key == "seed") t.seed = parse_uint(full, value);
    else throw ConfigError("unknown key " + full);
    return;
  }
  if (section == "eval") {
    auto& e = c.eval;
    if (key == "seed") e.seed = parse_uint(full, value);
    else if (key == "single_trial") e.single_trial = parse_bool(full, value);
    else if (key == "batch_size") e.batch_size = parse_int(full, value);
    else if (key == "repeats") e.repeats = parse_int(full, value);
    else throw ConfigError("unknown key " + full);
    return;
  }
  if (section == "out") {
    if (key == "dir") c.out_dir = value;
    else throw ConfigError("unknown key " + full);
    return;
  }
  throw ConfigError("unknown section [" + section + "]");
}

// "section.key=value" as passed on the command line via --set.
inline void apply_config_override(RunConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string lhs = detail::trim(assignment.substr(0, eq));
  const std::string value = detail::trim(assignment.substr(eq + 1));
  const auto dot = lhs.find('.');
  if (dot == std::string::npos || dot == 0 || dot + 1 == lhs.size())
    throw ConfigError("override key '" + lhs + "' is not section.key");
  apply_config_value(c, lhs.substr(0, dot), lhs.substr(dot + 1), value);
}

// Minimal INI dialect: [section] headers, key = value lines, blank lines,
// comments starting with # or ;.
inline void apply_config_text(RunConfig& c, const std::string& text) {
  std::string section;
  size_t lineno = 0, pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string line = text.substr(
        pos, nl == std::string::npos ? std::string::npos : nl - pos);
    pos = nl == std::string::npos ? text.size() + 1 : nl + 1;
    ++lineno;
    line = detail::trim(line);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("line " + std::to_string(lineno) +
                          ": unterminated section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      if (section.empty())
        throw ConfigError("line " + std::to_string(lineno) + ": empty section");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) +
                        ": expected key = value, got '" + line + "'");
    if (section.empty())
      throw ConfigError("line " + std::to_string(lineno) +
                        ": key before any [section]");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    apply_config_value(c, section, key, value);
  }
}

inline void apply_config_file(RunConfig& c, const std::filesystem::path& path) {
  apply_config_text(c, read_text(path));
}

inline std::string config_to_text(const RunConfig& c) {
  std::string s;
  auto line = [&s](const std::string& k, const std::string& v) {
    s += k + " = " + v + "\n";
  };
  auto num = [](double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  s += "[data]\n";
  line("num_images", std::to_string(c.data.num_images));
  line("reps", std::to_string(c.data.reps));
  line("voxel_dim", std::to_string(c.data.voxel_dim));
  line("tokens", std::to_string(c.data.tokens));
  line("token_dim", std::to_string(c.data.token_dim));
  line("noise_sd", num(c.data.noise_sd));
  line("test_fraction", num(c.data.test_fraction));
  line("encoder", encoder_name(c.data.encoder));
  line("seed", std::to_string(c.data.seed));
  s += "\n[model]\n";
  line("hidden", std::to_string(c.model.hidden));
  line("num_blocks", std::to_string(c.model.num_blocks));
  line("use_skip", c.model.use_skip ? "true" : "false");
  line("token_mode",
       c.model.token_mode == TokenMode::CLS_ONLY ? "cls_only" : "full");
  line("dropout_in", num(c.model.dropout_in));
  line("dropout_block", num(c.model.dropout_block));
  line("proj_dim", std::to_string(c.model.proj_dim));
  s += "\n[prior]\n";
  line("num_steps", std::to_string(c.prior.num_steps));
  line("schedule",
       c.prior.schedule == ScheduleKind::LINEAR ? "linear" : "cosine");
  line("net", c.prior.net == PriorNetKind::TOKEN_MLP ? "token_mlp"
                                                     : "transformer");
  line("layers", std::to_string(c.prior.layers));
  line("heads", std::to_string(c.prior.heads));
  line("mlp_ratio", std::to_string(c.prior.mlp_ratio));
  s += "\n[train]\n";
  line("epochs", std::to_string(c.train.epochs));
  line("batch_size", std::to_string(c.train.batch_size));
  line("lr", num(c.train.lr));
  line("weight_decay", num(c.train.weight_decay));
  line("alpha", num(c.train.alpha));
  line("temperature", num(c.train.temperature));
  line("mixup_beta", num(c.train.mixup_beta));
  line("train_fraction", num(c.train.train_fraction));
  line("loss", loss_variant_name(c.train.loss));
  line("submodule", submodule_name(c.train.submodule));
  line("seed", std::to_string(c.train.seed));
  s += "\n[eval]\n";
  line("seed", std::to_string(c.eval.seed));
  line("single_trial", c.eval.single_trial ? "true" : "false");
  line("batch_size", std::to_string(c.eval.batch_size));
  line("repeats", std::to_string(c.eval.repeats));
  s += "\n[out]\n";
  line("dir", c.out_dir);
  return s;
}

}  // namespace voxalign
