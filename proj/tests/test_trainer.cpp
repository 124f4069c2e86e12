#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "voxalign/ablate.hpp"
#include "voxalign/checkpoint.hpp"
#include "voxalign/eval.hpp"
#include "voxalign/synthdata.hpp"
#include "voxalign/trainer.hpp"

using namespace voxalign;

namespace {

SynthConfig tiny_data() {
  SynthConfig c;
  c.num_images = 60;
  c.reps = 2;
  c.voxel_dim = 48;
  c.tokens = 2;
  c.token_dim = 8;
  c.noise_sd = 0.5;
  c.test_fraction = 1.0 / 3.0;
  c.seed = 7;
  return c;
}

BackboneConfig tiny_model() {
  BackboneConfig c;
  c.voxel_dim = 48;
  c.hidden = 24;
  c.num_blocks = 2;
  c.tokens = 2;
  c.token_dim = 8;
  c.proj_dim = 16;
  return c;
}

PriorConfig tiny_prior() {
  PriorConfig p;
  p.num_steps = 8;
  p.layers = 1;
  p.heads = 2;
  p.mlp_ratio = 2;
  return p;
}

TrainConfig tiny_train() {
  TrainConfig t;
  t.epochs = 4;
  t.batch_size = 16;
  t.seed = 3;
  return t;
}

struct Fixture {
  SynthDataset ds = generate_dataset(tiny_data());
  SplitData sp = split_and_average(ds);
};

bool same_params(const ModelParams& a, const ModelParams& b) {
  if (a.params.items.size() != b.params.items.size()) return false;
  for (size_t i = 0; i < a.params.items.size(); ++i) {
    if (a.params.items[i].first != b.params.items[i].first) return false;
    if (a.params.items[i].second->data != b.params.items[i].second->data)
      return false;
  }
  return true;
}

}  // namespace

TEST_CASE("zero epochs leave the initialization untouched") {
  Fixture f;
  auto t = tiny_train();
  t.epochs = 0;
  auto st = train(t, tiny_model(), tiny_prior(), f.sp);
  CHECK(st.epochs_done == 0);
  CHECK(st.history.empty());
  auto fresh = init_params<float>(tiny_model(), tiny_prior(), t.seed);
  CHECK(same_params(st.model, fresh));
}

TEST_CASE("phase schedule shows up in the history") {
  Fixture f;
  auto t = tiny_train();
  t.epochs = 6;
  auto st = train(t, tiny_model(), tiny_prior(), f.sp);
  REQUIRE(st.history.size() == 6);
  for (int64_t e = 0; e < 6; ++e) {
    CHECK(st.history[e].epoch == e);
    CHECK(st.history[e].mode == (e < 2 ? "bimixco" : "softclip"));
    CHECK(std::isfinite(st.history[e].loss));
    CHECK(st.history[e].batches >= 1);
    CHECK(st.history[e].mse >= 0.0);
    CHECK(st.history[e].contrastive >= 0.0);
  }

  // Fixed-loss variants never switch.
  t.loss = LossVariant::CLIP;
  auto st2 = train(t, tiny_model(), tiny_prior(), f.sp);
  for (const auto& h : st2.history) CHECK(h.mode == "clip");
}

TEST_CASE("training is deterministic") {
  Fixture f;
  auto a = train(tiny_train(), tiny_model(), tiny_prior(), f.sp);
  auto b = train(tiny_train(), tiny_model(), tiny_prior(), f.sp);
  CHECK(same_params(a.model, b.model));
  REQUIRE(a.history.size() == b.history.size());
  for (size_t i = 0; i < a.history.size(); ++i)
    CHECK(a.history[i].loss == b.history[i].loss);

  auto t2 = tiny_train();
  t2.seed = 4;
  auto c = train(t2, tiny_model(), tiny_prior(), f.sp);
  CHECK_FALSE(same_params(a.model, c.model));
}

TEST_CASE("submodule variants instantiate the right parts") {
  Fixture f;
  auto t = tiny_train();
  t.epochs = 1;

  t.submodule = SubmoduleVariant::FULL;
  auto full = train(t, tiny_model(), tiny_prior(), f.sp);
  CHECK(full.model.has_projector());
  CHECK(full.model.has_prior());

  t.submodule = SubmoduleVariant::BACKBONE_ONLY;
  auto bonly = train(t, tiny_model(), tiny_prior(), f.sp);
  CHECK_FALSE(bonly.model.has_projector());
  CHECK_FALSE(bonly.model.has_prior());

  t.submodule = SubmoduleVariant::BACKBONE_PROJECTOR;
  auto bproj = train(t, tiny_model(), tiny_prior(), f.sp);
  CHECK(bproj.model.has_projector());
  CHECK_FALSE(bproj.model.has_prior());

  t.submodule = SubmoduleVariant::BACKBONE_PRIOR;
  auto bprior = train(t, tiny_model(), tiny_prior(), f.sp);
  CHECK_FALSE(bprior.model.has_projector());
  CHECK(bprior.model.has_prior());

  CHECK(full.model.params.total_count() > bproj.model.params.total_count());
  CHECK(bproj.model.params.total_count() > bonly.model.params.total_count());
}

TEST_CASE("zero reconstruction weight freezes the prior") {
  Fixture f;
  auto t = tiny_train();
  t.epochs = 2;
  t.alpha = 0.0;
  t.weight_decay = 0.0;
  auto st = train(t, tiny_model(), tiny_prior(), f.sp);
  auto fresh = init_params<float>(tiny_model(), tiny_prior(), t.seed);
  bool backbone_moved = false;
  for (const auto& [name, tensor] : st.model.params.items) {
    const auto& init = fresh.params.get(name)->data;
    if (name.rfind("prior.", 0) == 0) {
      INFO(name);
      CHECK(tensor->data == init);  // untouched by a zero-weight loss
    } else if (tensor->data != init) {
      backbone_moved = true;
    }
  }
  CHECK(backbone_moved);
}

TEST_CASE("divergence reports epoch and step") {
  Fixture f;
  auto st = init_train_state(tiny_train(), tiny_model(), tiny_prior());
  st.model.params.get("backbone.lin0.w")->data[0] =
      std::numeric_limits<float>::quiet_NaN();
  try {
    train_to(st, f.sp, 1);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("epoch 0") != std::string::npos);
    CHECK(msg.find("step 0") != std::string::npos);
  }
}

TEST_CASE("config validation") {
  auto t = tiny_train();
  t.batch_size = 1;
  CHECK_THROWS_AS(t.validate(), ValueError);
  t = tiny_train();
  t.temperature = 0.0;
  CHECK_THROWS_AS(t.validate(), ValueError);
  t = tiny_train();
  t.train_fraction = 0.0;
  CHECK_THROWS_AS(t.validate(), ValueError);

  Fixture f;
  auto st = init_train_state(tiny_train(), tiny_model(), tiny_prior());
  CHECK_THROWS_AS(train_to(st, f.sp, 100), ValueError);
}

TEST_CASE("image-level data subsampling") {
  Fixture f;
  auto t = tiny_train();
  t.train_fraction = 0.5;
  auto rows = select_training_rows(t, f.sp);
  CHECK(rows.size() == 40);  // 20 of 40 images, both presentations each

  // Rows come in complete image groups.
  std::vector<int64_t> images;
  for (int64_t r : rows) images.push_back(f.sp.train_images[r]);
  for (size_t i = 0; i < images.size(); i += 2) CHECK(images[i] == images[i + 1]);

  auto again = select_training_rows(t, f.sp);
  CHECK(rows == again);

  t.train_fraction = 0.01;
  CHECK(select_training_rows(t, f.sp).size() == 2);  // floor of one image

  t.train_fraction = 1.0;
  CHECK(select_training_rows(t, f.sp).size() == 80);
}

TEST_CASE("checkpoints round-trip bitwise and resume exactly") {
  namespace fs = std::filesystem;
  const fs::path path = fs::temp_directory_path() / "voxalign_ckpt_test.vxcp";
  fs::remove(path);
  Fixture f;

  auto t = tiny_train();
  auto full = train(t, tiny_model(), tiny_prior(), f.sp);  // 4 epochs straight

  auto st = init_train_state(t, tiny_model(), tiny_prior());
  train_to(st, f.sp, 2);
  save_checkpoint(st, path);
  auto loaded = load_checkpoint(path);

  CHECK(same_params(loaded.model, st.model));
  CHECK(loaded.opt.step_count == st.opt.step_count);
  REQUIRE(loaded.opt.m.size() == st.opt.m.size());
  for (size_t i = 0; i < st.opt.m.size(); ++i) {
    CHECK(loaded.opt.m[i] == st.opt.m[i]);
    CHECK(loaded.opt.v[i] == st.opt.v[i]);
  }
  CHECK(loaded.epochs_done == 2);
  REQUIRE(loaded.history.size() == 2);
  CHECK(loaded.history[1].loss == st.history[1].loss);
  CHECK(loaded.history[1].mode == st.history[1].mode);
  CHECK(loaded.train.batch_size == t.batch_size);
  CHECK(loaded.model.backbone.hidden == tiny_model().hidden);

  // Saving the loaded state reproduces the file byte for byte.
  const fs::path path2 = fs::temp_directory_path() / "voxalign_ckpt_2.vxcp";
  save_checkpoint(loaded, path2);
  CHECK(read_text(path) == read_text(path2));

  // Resuming finishes identically to the uninterrupted run.
  train_to(loaded, f.sp, t.epochs);
  CHECK(same_params(loaded.model, full.model));
  REQUIRE(loaded.history.size() == full.history.size());
  for (size_t i = 0; i < full.history.size(); ++i)
    CHECK(loaded.history[i].loss == full.history[i].loss);

  fs::remove(path);
  fs::remove(path2);
}

TEST_CASE("corrupt checkpoints are rejected") {
  namespace fs = std::filesystem;
  const fs::path path = fs::temp_directory_path() / "voxalign_ckpt_bad.vxcp";
  Fixture f;
  auto st = init_train_state(tiny_train(), tiny_model(), tiny_prior());
  train_to(st, f.sp, 1);
  save_checkpoint(st, path);

  const auto size = fs::file_size(path);
  fs::resize_file(path, size / 2);
  CHECK_THROWS_AS(load_checkpoint(path), IoError);

  save_checkpoint(st, path);
  {
    std::fstream fio(path, std::ios::in | std::ios::out | std::ios::binary);
    fio.seekp(0);
    fio.write("NOPE", 4);
  }
  CHECK_THROWS_AS(load_checkpoint(path), IoError);
  CHECK_THROWS_AS(load_checkpoint(path.parent_path() / "absent.vxcp"), IoError);
  fs::remove(path);
}

TEST_CASE("evaluation reports per-space metrics") {
  Fixture f;
  auto t = tiny_train();
  t.epochs = 1;
  auto st = train(t, tiny_model(), tiny_prior(), f.sp);

  EvalOptions opts;
  opts.batch_size = 10;
  opts.repeats = 3;
  auto rep = evaluate(st.model, f.ds, f.sp, opts);
  CHECK(rep.n_test == 20);
  CHECK(rep.contrastive_space == "projector");
  CHECK(rep.recon_space == "prior");
  CHECK(rep.has_projector);
  CHECK(rep.has_prior);
  CHECK(rep.has_batch);
  CHECK(rep.batch.batch_size == 10);
  CHECK(rep.full.chance() == Catch::Approx(0.05));
  CHECK(rep.two_way >= 0.0);
  CHECK(rep.two_way <= 1.0);
  CHECK(std::isfinite(rep.prior_mse));
  CHECK(std::isfinite(rep.projector_mse));
  CHECK(std::isfinite(rep.backbone_mse));
  CHECK(rep.gap_backbone.centroid_distance >= 0.0);

  // Evaluation must not disturb the trained weights.
  auto rep2 = evaluate(st.model, f.ds, f.sp, opts);
  CHECK(rep.full.forward_top1 == rep2.full.forward_top1);
  CHECK(rep.prior_mse == rep2.prior_mse);

  // The sampled protocol is skipped when the test set is too small.
  auto rep3 = evaluate(st.model, f.ds, f.sp);
  CHECK_FALSE(rep3.has_batch);

  // Single-trial input changes the numbers.
  EvalOptions st_opts;
  st_opts.single_trial = true;
  auto rep4 = evaluate(st.model, f.ds, f.sp, st_opts);
  CHECK(rep4.single_trial);
  CHECK(rep4.backbone_mse != rep.backbone_mse);

  // Reduced models report reduced spaces.
  t.submodule = SubmoduleVariant::BACKBONE_ONLY;
  auto bonly = train(t, tiny_model(), tiny_prior(), f.sp);
  auto rep5 = evaluate(bonly.model, f.ds, f.sp);
  CHECK(rep5.contrastive_space == "backbone");
  CHECK(rep5.recon_space == "backbone");
  CHECK_FALSE(rep5.has_projector);
  CHECK_FALSE(rep5.has_prior);

  auto j = report_to_json(rep5);
  CHECK(j.contains("full_retrieval"));
  CHECK_FALSE(j.contains("prior_mse"));
}

TEST_CASE("ablation tables cover each axis") {
  Fixture f;
  auto t = tiny_train();
  t.epochs = 1;
  EvalOptions eopts;
  eopts.batch_size = 10;
  eopts.repeats = 2;

  auto sub = run_ablation(AblationAxis::SUBMODULE, t, tiny_model(),
                          tiny_prior(), f.ds, f.sp, eopts);
  REQUIRE(sub.rows.size() == 4);
  CHECK(sub.axis == "submodule");
  CHECK(sub.rows[0].name == "full");
  CHECK(sub.rows[1].name == "backbone_only");
  CHECK(sub.rows[0].param_count > sub.rows[1].param_count);
  for (const auto& r : sub.rows) CHECK(std::isfinite(r.final_loss));

  auto arch = run_ablation(AblationAxis::ARCH, t, tiny_model(), tiny_prior(),
                           f.ds, f.sp, eopts);
  REQUIRE(arch.rows.size() == 6);
  CHECK(arch.rows[0].name == "blocks0");
  CHECK(arch.rows[0].param_count < arch.rows[1].param_count);
  CHECK(arch.rows[3].param_count == arch.rows[4].param_count);  // skip is free
  CHECK(arch.rows[5].param_count < arch.rows[4].param_count);   // cls is lean

  auto data = run_ablation(AblationAxis::DATASIZE, t, tiny_model(),
                           tiny_prior(), f.ds, f.sp, eopts, {1.0, 0.5});
  REQUIRE(data.rows.size() == 2);
  CHECK(data.rows[0].name == "frac1");
  CHECK(data.rows[1].name == "frac0.5");

  auto loss = run_ablation(AblationAxis::LOSS, t, tiny_model(), tiny_prior(),
                           f.ds, f.sp, eopts);
  REQUIRE(loss.rows.size() == 6);
  CHECK(loss.rows[2].name == "softclip");

  const auto text = format_table(sub);
  CHECK(text.find("backbone_prior") != std::string::npos);
  const auto j = table_to_json(arch);
  CHECK(j.at("rows").size() == 6);
}

TEST_CASE("presets adjust the configuration bundles") {
  SynthConfig d;
  BackboneConfig b;
  PriorConfig p;
  TrainConfig t;
  t.seed = 17;

  apply_preset("paper", d, b, p, t);
  CHECK(b.voxel_dim == 15724);
  CHECK(b.proj_dim == 2048);
  CHECK(t.epochs == 240);
  CHECK(t.batch_size == 32);
  CHECK(t.seed == 17);
  CHECK(backbone_param_count(b) + projector_param_count(b) == 947555328);

  apply_preset("retrieval", d, b, p, t);
  CHECK(t.batch_size == 300);
  CHECK(t.submodule == SubmoduleVariant::BACKBONE_PROJECTOR);

  apply_preset("desk", d, b, p, t);
  CHECK(b.voxel_dim == 512);
  CHECK(t.epochs == 40);

  CHECK_THROWS_AS(apply_preset("galaxy", d, b, p, t), ConfigError);
}

TEST_CASE("loss variant names round-trip") {
  for (auto v : {LossVariant::BIMIXCO_THEN_SOFTCLIP, LossVariant::BIMIXCO,
                 LossVariant::SOFTCLIP, LossVariant::INFONCE, LossVariant::CLIP,
                 LossVariant::INFONCE_MIXCO})
    CHECK(parse_loss_variant(loss_variant_name(v)) == v);
  for (auto v : {SubmoduleVariant::FULL, SubmoduleVariant::BACKBONE_ONLY,
                 SubmoduleVariant::BACKBONE_PROJECTOR,
                 SubmoduleVariant::BACKBONE_PRIOR})
    CHECK(parse_submodule(submodule_name(v)) == v);
  CHECK_THROWS_AS(parse_loss_variant("sliced"), ConfigError);
  CHECK_THROWS_AS(parse_submodule("heads"), ConfigError);
}
