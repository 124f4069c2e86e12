#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "voxalign/common.hpp"
#include "voxalign/gemm.hpp"
#include "voxalign/io.hpp"
#include "voxalign/retrieval.hpp"
#include "voxalign/rng.hpp"

namespace voxalign {

enum class EncoderKind { LINEAR, MLP };

inline std::string encoder_name(EncoderKind k) {
  return k == EncoderKind::LINEAR ? "linear" : "mlp";
}

inline EncoderKind parse_encoder(const std::string& s) {
  if (s == "linear") return EncoderKind::LINEAR;
  if (s == "mlp") return EncoderKind::MLP;
  throw ConfigError("unknown encoder kind: " + s);
}

// Synthetic analogue of a scanning study: `num_images` stimuli with known
// embeddings, each shown `reps` times, measured through a fixed unknown
// encoder plus per-presentation Gaussian noise.
struct SynthConfig {
  int64_t num_images = 2432;
  int64_t reps = 3;
  int64_t voxel_dim = 512;
  int64_t tokens = 16;
  int64_t token_dim = 64;
  double noise_sd = 0.5;
  double test_fraction = 384.0 / 2432.0;
  EncoderKind encoder = EncoderKind::MLP;
  uint64_t seed = 1234;

  int64_t embed_dim() const { return tokens * token_dim; }
  int64_t num_test() const {
    return static_cast<int64_t>(std::llround(test_fraction * double(num_images)));
  }
  int64_t num_train() const { return num_images - num_test(); }

  void validate() const {
    require(num_images >= 2, "SynthConfig: need at least two images");
    require(reps >= 1, "SynthConfig: reps must be >= 1");
    require(voxel_dim >= 1 && tokens >= 1 && token_dim >= 1,
            "SynthConfig: dimensions must be >= 1");
    require(noise_sd >= 0.0, "SynthConfig: noise_sd must be >= 0");
    require(test_fraction > 0.0 && test_fraction < 1.0,
            "SynthConfig: test_fraction must be in (0,1)");
    require(num_test() >= 1 && num_train() >= 1,
            "SynthConfig: split leaves an empty side");
  }
};

struct SynthDataset {
  SynthConfig config;
  Matrix targets;  // [num_images, embed_dim], per-token unit norm
  Matrix voxels;   // [num_images * reps, voxel_dim], standardized
  std::vector<int64_t> train_ids;  // ascending image indices
  std::vector<int64_t> test_ids;

  // Generator internals, absent after loading from disk. Only oracle tests
  // need them.
  bool has_generator = false;
  Matrix enc_w1, enc_w2;
  Matrix clean_signal;                      // standardized pre-noise responses
  std::vector<float> clean_mean, clean_sd;  // pre-noise feature stats
  std::vector<float> obs_mean, obs_sd;      // post-noise feature stats

  int64_t row(int64_t image, int64_t rep) const {
    return image * config.reps + rep;
  }
};

namespace detail {

inline constexpr uint64_t kSynthTargets = 0x7A01;
inline constexpr uint64_t kSynthSplit = 0x7A02;
inline constexpr uint64_t kSynthEncoder = 0x7A03;
inline constexpr uint64_t kSynthNoise = 0x7A04;

// Population mean/sd per column over the given rows; sd floored so constant
// features stay finite.
inline void column_stats(const Matrix& m, const std::vector<int64_t>& rows,
                         std::vector<float>& mean, std::vector<float>& sd) {
  const int64_t c = m.cols;
  std::vector<double> mu(c, 0), var(c, 0);
  for (int64_t r : rows)
    for (int64_t j = 0; j < c; ++j) mu[j] += m.at(r, j);
  for (auto& v : mu) v /= double(rows.size());
  for (int64_t r : rows)
    for (int64_t j = 0; j < c; ++j) {
      const double d = m.at(r, j) - mu[j];
      var[j] += d * d;
    }
  mean.resize(c);
  sd.resize(c);
  for (int64_t j = 0; j < c; ++j) {
    mean[j] = float(mu[j]);
    sd[j] = float(std::max(std::sqrt(var[j] / double(rows.size())), 1e-6));
  }
}

}  // namespace detail

inline SynthDataset generate_dataset(const SynthConfig& cfg) {
  cfg.validate();
  SynthDataset ds;
  ds.config = cfg;
  const int64_t I = cfg.num_images, R = cfg.reps, V = cfg.voxel_dim;
  const int64_t E = cfg.embed_dim(), D = cfg.token_dim;

  // Stimulus embeddings: independent Gaussian tokens, each normalized.
  {
    Rng rng = Rng::derive(cfg.seed, detail::kSynthTargets);
    ds.targets = Matrix(I, E);
    for (int64_t i = 0; i < I; ++i)
      for (int64_t t = 0; t < cfg.tokens; ++t) {
        float* tok = ds.targets.row(i) + t * D;
        double n = 0;
        for (int64_t d = 0; d < D; ++d) {
          tok[d] = float(rng.normal());
          n += double(tok[d]) * double(tok[d]);
        }
        const float inv = float(1.0 / std::max(std::sqrt(n), 1e-12));
        for (int64_t d = 0; d < D; ++d) tok[d] *= inv;
      }
  }

  // Train/test split over image indices.
  {
    Rng rng = Rng::derive(cfg.seed, detail::kSynthSplit);
    std::vector<int64_t> ids(I);
    std::iota(ids.begin(), ids.end(), 0);
    rng.shuffle(ids.begin(), ids.end());
    const int64_t n_test = cfg.num_test();
    ds.test_ids.assign(ids.begin(), ids.begin() + n_test);
    ds.train_ids.assign(ids.begin() + n_test, ids.end());
    std::sort(ds.test_ids.begin(), ds.test_ids.end());
    std::sort(ds.train_ids.begin(), ds.train_ids.end());
  }

  // Hidden encoder.
  {
    Rng rng = Rng::derive(cfg.seed, detail::kSynthEncoder);
    if (cfg.encoder == EncoderKind::MLP) {
      ds.enc_w1 = Matrix(E, E);
      const float s1 = float(1.0 / std::sqrt(double(E)));
      for (auto& v : ds.enc_w1.data) v = s1 * float(rng.normal());
    }
    const int64_t fan_in = E;
    ds.enc_w2 = Matrix(E, V);
    const float s2 = float(1.0 / std::sqrt(double(fan_in)));
    for (auto& v : ds.enc_w2.data) v = s2 * float(rng.normal());
  }

  // Noise-free responses.
  Matrix clean(I, V);
  if (cfg.encoder == EncoderKind::MLP) {
    Matrix h(I, E);
    detail::gemm<float>(false, false, I, E, E, 1.0f, ds.targets.data.data(),
                        ds.enc_w1.data.data(), 0.0f, h.data.data());
    for (auto& v : h.data) v = std::tanh(v);
    detail::gemm<float>(false, false, I, V, E, 1.0f, h.data.data(),
                        ds.enc_w2.data.data(), 0.0f, clean.data.data());
  } else {
    detail::gemm<float>(false, false, I, V, E, 1.0f, ds.targets.data.data(),
                        ds.enc_w2.data.data(), 0.0f, clean.data.data());
  }

  // Standardize the clean signal on train statistics, so the configured
  // noise_sd fixes the single-trial signal-to-noise ratio at 1/noise_sd^2.
  detail::column_stats(clean, ds.train_ids, ds.clean_mean, ds.clean_sd);
  for (int64_t i = 0; i < I; ++i)
    for (int64_t j = 0; j < V; ++j)
      clean.at(i, j) = (clean.at(i, j) - ds.clean_mean[j]) / ds.clean_sd[j];

  // Noisy presentations.
  {
    Rng rng = Rng::derive(cfg.seed, detail::kSynthNoise);
    ds.voxels = Matrix(I * R, V);
    for (int64_t i = 0; i < I; ++i)
      for (int64_t r = 0; r < R; ++r) {
        float* out = ds.voxels.row(ds.row(i, r));
        const float* c = clean.row(i);
        for (int64_t j = 0; j < V; ++j)
          out[j] = c[j] + float(cfg.noise_sd * rng.normal());
      }
  }

  // Standardize observed features on train presentations.
  {
    std::vector<int64_t> train_rows;
    train_rows.reserve(ds.train_ids.size() * R);
    for (int64_t i : ds.train_ids)
      for (int64_t r = 0; r < R; ++r) train_rows.push_back(ds.row(i, r));
    detail::column_stats(ds.voxels, train_rows, ds.obs_mean, ds.obs_sd);
    for (int64_t r = 0; r < I * R; ++r)
      for (int64_t j = 0; j < V; ++j)
        ds.voxels.at(r, j) = (ds.voxels.at(r, j) - ds.obs_mean[j]) / ds.obs_sd[j];
  }

  // Keep the standardized clean responses around for oracle access.
  ds.has_generator = true;
  ds.clean_signal = std::move(clean);
  return ds;
}

// The noise-free voxel response of one image in observed (standardized)
// coordinates. Only available on freshly generated datasets.
inline std::vector<float> encode_clean(const SynthDataset& ds, int64_t image) {
  require(ds.has_generator, "encode_clean: dataset was loaded, not generated");
  require(image >= 0 && image < ds.config.num_images,
          "encode_clean: image index out of range");
  const int64_t V = ds.config.voxel_dim;
  std::vector<float> out(V);
  for (int64_t j = 0; j < V; ++j)
    out[j] = (ds.clean_signal.at(image, j) - ds.obs_mean[j]) / ds.obs_sd[j];
  return out;
}

// Training samples stay single presentations; test voxels are averaged over
// repetitions (the higher-quality protocol).
struct SplitData {
  Matrix train_voxels;              // [n_train * reps, voxel_dim]
  Matrix train_targets;             // [n_train * reps, embed_dim]
  std::vector<int64_t> train_images;  // image id per training row
  Matrix test_voxels_avg;           // [n_test, voxel_dim]
  Matrix test_targets;              // [n_test, embed_dim]
};

inline SplitData split_and_average(const SynthDataset& ds) {
  const auto& cfg = ds.config;
  const int64_t R = cfg.reps, V = cfg.voxel_dim, E = cfg.embed_dim();
  SplitData sp;
  const int64_t n_train = static_cast<int64_t>(ds.train_ids.size());
  const int64_t n_test = static_cast<int64_t>(ds.test_ids.size());
  sp.train_voxels = Matrix(n_train * R, V);
  sp.train_targets = Matrix(n_train * R, E);
  sp.train_images.reserve(n_train * R);
  int64_t out = 0;
  for (int64_t i : ds.train_ids)
    for (int64_t r = 0; r < R; ++r, ++out) {
      std::copy_n(ds.voxels.row(ds.row(i, r)), V, sp.train_voxels.row(out));
      std::copy_n(ds.targets.row(i), E, sp.train_targets.row(out));
      sp.train_images.push_back(i);
    }
  sp.test_voxels_avg = Matrix(n_test, V);
  sp.test_targets = Matrix(n_test, E);
  for (int64_t k = 0; k < n_test; ++k) {
    const int64_t i = ds.test_ids[k];
    for (int64_t r = 0; r < R; ++r) {
      const float* src = ds.voxels.row(ds.row(i, r));
      float* dst = sp.test_voxels_avg.row(k);
      for (int64_t j = 0; j < V; ++j) dst[j] += src[j] / float(R);
    }
    std::copy_n(ds.targets.row(i), E, sp.test_targets.row(k));
  }
  return sp;
}

// Single-presentation test voxels (repetition `rep` of each test image).
inline Matrix test_single_trial(const SynthDataset& ds, int64_t rep) {
  require(rep >= 0 && rep < ds.config.reps,
          "test_single_trial: repetition out of range");
  const int64_t V = ds.config.voxel_dim;
  Matrix m(static_cast<int64_t>(ds.test_ids.size()), V);
  for (size_t k = 0; k < ds.test_ids.size(); ++k)
    std::copy_n(ds.voxels.row(ds.row(ds.test_ids[k], rep)), V, m.row(k));
  return m;
}

inline std::string image_id(int64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "img%05lld", static_cast<long long>(index));
  return buf;
}

inline void save_dataset(const SynthDataset& ds,
                         const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto& c = ds.config;
  nlohmann::json j;
  j["format"] = "voxalign-dataset";
  j["version"] = 1;
  j["config"] = {{"num_images", c.num_images},
                 {"reps", c.reps},
                 {"voxel_dim", c.voxel_dim},
                 {"tokens", c.tokens},
                 {"token_dim", c.token_dim},
                 {"noise_sd", c.noise_sd},
                 {"test_fraction", c.test_fraction},
                 {"encoder", encoder_name(c.encoder)},
                 {"seed", c.seed}};
  j["train_ids"] = ds.train_ids;
  j["test_ids"] = ds.test_ids;
  write_text(dir / "manifest.json", j.dump(2) + "\n");
  write_f32(dir / "targets.f32", ds.targets.data);
  write_f32(dir / "voxels.f32", ds.voxels.data);

  EmbeddingStore store;
  for (int64_t i = 0; i < c.num_images; ++i)
    store.add(image_id(i),
              std::vector<float>(ds.targets.row(i),
                                 ds.targets.row(i) + c.embed_dim()));
  save_store(store, dir / "store");
}

inline SynthDataset load_dataset(const std::filesystem::path& dir) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("load_dataset: bad manifest.json: " + std::string(e.what()));
  }
  SynthDataset ds;
  try {
    if (j.at("format").get<std::string>() != "voxalign-dataset")
      throw IoError("load_dataset: not a dataset directory");
    if (j.at("version").get<int>() != 1)
      throw IoError("load_dataset: unsupported version");
    const auto& c = j.at("config");
    ds.config.num_images = c.at("num_images").get<int64_t>();
    ds.config.reps = c.at("reps").get<int64_t>();
    ds.config.voxel_dim = c.at("voxel_dim").get<int64_t>();
    ds.config.tokens = c.at("tokens").get<int64_t>();
    ds.config.token_dim = c.at("token_dim").get<int64_t>();
    ds.config.noise_sd = c.at("noise_sd").get<double>();
    ds.config.test_fraction = c.at("test_fraction").get<double>();
    ds.config.encoder = parse_encoder(c.at("encoder").get<std::string>());
    ds.config.seed = c.at("seed").get<uint64_t>();
    ds.train_ids = j.at("train_ids").get<std::vector<int64_t>>();
    ds.test_ids = j.at("test_ids").get<std::vector<int64_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("load_dataset: missing field: " + std::string(e.what()));
  }
  ds.config.validate();
  const auto& c = ds.config;
  ds.targets = Matrix(c.num_images, c.embed_dim());
  ds.targets.data = read_f32(dir / "targets.f32", ds.targets.numel());
  ds.voxels = Matrix(c.num_images * c.reps, c.voxel_dim);
  ds.voxels.data = read_f32(dir / "voxels.f32", ds.voxels.numel());
  ds.has_generator = false;
  return ds;
}

}  // namespace voxalign
