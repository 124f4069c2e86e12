// Acceptance gate for the full pipeline. Each numbered check prints one
// [PASS]/[FAIL] line; the exit code is the number of failures. Checks can be
// run selectively by listing their numbers as arguments, e.g. `acceptance 1 4`.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "voxalign/voxalign.hpp"

using namespace voxalign;
using Clock = std::chrono::steady_clock;
using DT = TensorPtrT<double>;

namespace {

double secs_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

DT randn(int64_t r, int64_t c, Rng& rng, bool rg = false) {
  auto t = tensor<double>(r, c, rg);
  for (auto& v : t->data) v = rng.normal();
  return t;
}

Matrix randn_matrix(int64_t r, int64_t c, Rng& rng) {
  Matrix m(r, c);
  for (auto& v : m.data) v = float(rng.normal());
  return m;
}

// ---------------------------------------------------------------------------
// Independent reference implementations used by checks 2 and 3.

std::vector<std::vector<double>> norm_rows(const DT& t) {
  std::vector<std::vector<double>> out;
  for (int64_t i = 0; i < t->rows; ++i) {
    std::vector<double> v(t->data.begin() + i * t->cols,
                          t->data.begin() + (i + 1) * t->cols);
    double n = 0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    for (double& x : v) x /= n;
    out.push_back(std::move(v));
  }
  return out;
}

std::vector<std::vector<double>> log_softmax_sim(
    const std::vector<std::vector<double>>& a,
    const std::vector<std::vector<double>>& b, double tau) {
  const size_t n = a.size(), m = b.size();
  std::vector<std::vector<double>> out(n, std::vector<double>(m));
  for (size_t i = 0; i < n; ++i) {
    std::vector<double> s(m);
    for (size_t j = 0; j < m; ++j)
      s[j] = std::inner_product(a[i].begin(), a[i].end(), b[j].begin(), 0.0) /
             tau;
    const double mx = *std::max_element(s.begin(), s.end());
    double z = 0;
    for (double v : s) z += std::exp(v - mx);
    const double lse = mx + std::log(z);
    for (size_t j = 0; j < m; ++j) out[i][j] = s[j] - lse;
  }
  return out;
}

double ref_bimixco(const DT& p, const DT& t, const MixSpec& spec, double tau) {
  auto pn = norm_rows(p), tn = norm_rows(t);
  auto fwd = log_softmax_sim(pn, tn, tau);
  auto bwd = log_softmax_sim(tn, pn, tau);
  const int64_t n = spec.size();
  double loss = 0;
  for (int64_t i = 0; i < n; ++i) {
    loss -= spec.lambdas[i] * fwd[i][i];
    loss -= (1.0 - spec.lambdas[i]) * fwd[i][spec.partners[i]];
  }
  for (int64_t j = 0; j < n; ++j) loss -= spec.lambdas[j] * bwd[j][j];
  for (int64_t l = 0; l < n; ++l)
    loss -= (1.0 - spec.lambdas[l]) * bwd[spec.partners[l]][l];
  return loss / double(2 * n);
}

// ---------------------------------------------------------------------------
// Shared training runs. The desk-scale recipe is trained once per seed and
// variant; checks 6 through 10 read different slices of the same results.

struct VariantResult {
  EvalReport avg;
  EvalReport single;
  std::vector<EpochStats> history;
  double wall = 0;
};

struct SharedRuns {
  bool ready = false;
  SynthDataset ds;
  SplitData sp;
  std::vector<VariantResult> full, bproj, bonly, blk0, blk4ns;  // per seed
};

SharedRuns g_runs;

const std::vector<uint64_t> kSeeds = {1, 2, 3};

VariantResult run_desk_variant(const SynthDataset& ds, const SplitData& sp,
                               uint64_t seed, SubmoduleVariant sub,
                               int64_t blocks, bool skip, bool want_single) {
  SynthConfig d;
  BackboneConfig b;
  PriorConfig p;
  TrainConfig t;
  t.seed = seed;
  apply_preset("desk", d, b, p, t);
  t.submodule = sub;
  b.num_blocks = blocks;
  b.use_skip = skip;

  VariantResult r;
  const auto t0 = Clock::now();
  auto st = train(t, b, p, sp);
  r.history = st.history;
  r.avg = evaluate(st.model, ds, sp);
  if (want_single) {
    EvalOptions single;
    single.single_trial = true;
    r.single = evaluate(st.model, ds, sp, single);
  }
  r.wall = secs_since(t0);
  return r;
}

void ensure_shared_runs() {
  if (g_runs.ready) return;
  SynthConfig d;  // desk-scale dataset, shared by every seed and variant
  g_runs.ds = generate_dataset(d);
  g_runs.sp = split_and_average(g_runs.ds);
  auto note = [](uint64_t s, const char* what) {
    std::printf("  [run] seed %llu: %s\n", (unsigned long long)s, what);
    std::fflush(stdout);
  };
  for (uint64_t s : kSeeds) {
    note(s, "full");
    g_runs.full.push_back(run_desk_variant(
        g_runs.ds, g_runs.sp, s, SubmoduleVariant::FULL, 4, true, true));
    note(s, "backbone_projector");
    g_runs.bproj.push_back(
        run_desk_variant(g_runs.ds, g_runs.sp, s,
                         SubmoduleVariant::BACKBONE_PROJECTOR, 4, true, false));
    note(s, "backbone_only");
    g_runs.bonly.push_back(run_desk_variant(g_runs.ds, g_runs.sp, s,
                                            SubmoduleVariant::BACKBONE_ONLY, 4,
                                            true, false));
    note(s, "blocks0");
    g_runs.blk0.push_back(
        run_desk_variant(g_runs.ds, g_runs.sp, s,
                         SubmoduleVariant::BACKBONE_PROJECTOR, 0, true, false));
    note(s, "blocks4_noskip");
    g_runs.blk4ns.push_back(run_desk_variant(
        g_runs.ds, g_runs.sp, s, SubmoduleVariant::BACKBONE_PROJECTOR, 4,
        false, false));
  }
  g_runs.ready = true;
}

// ---------------------------------------------------------------------------

bool check1(std::string& detail) {
  const auto t0 = Clock::now();
  const double tol = 1e-3, eps = 1e-5;
  double worst = 0;
  auto track = [&](double rel) { worst = std::max(worst, rel); };

  for (uint64_t seed = 101; seed <= 105; ++seed) {
    Rng rng(seed);
    auto p = randn(5, 7, rng, true);
    auto t = randn(5, 7, rng, true);
    const double tau = 0.7;

    track(grad_check<double>([&] { return info_nce(p, t, tau); }, {p, t}, eps));
    track(grad_check<double>([&] { return clip_loss(p, t, tau); }, {p, t}, eps));
    // The soft labels are detached constants, so only the prediction side has
    // an analytic gradient to compare.
    track(grad_check<double>([&] { return softclip_loss(p, t, tau); }, {p}, eps));
    MixSpec spec = sample_mixspec(5, 0.15, rng);
    track(grad_check<double>([&] { return bimixco_loss(p, t, spec, tau); },
                             {p, t}, eps));
    track(grad_check<double>([&] { return info_nce_mixco(p, t, spec, tau); },
                             {p, t}, eps));
    auto rec_a = randn(4, 6, rng, true);
    auto rec_b = randn(4, 6, rng, true);
    track(grad_check<double>(
        [&] {
          return combined_loss(clip_loss(p, t, tau), mse_loss(rec_a, rec_b),
                               0.3);
        },
        {p, t, rec_a, rec_b}, eps));

    BackboneConfig bc;
    bc.voxel_dim = 6;
    bc.hidden = 8;
    bc.num_blocks = 1;
    bc.tokens = 2;
    bc.token_dim = 4;
    bc.proj_dim = 8;
    bc.dropout_in = 0.0;
    bc.dropout_block = 0.0;
    PriorConfig pc;
    pc.num_steps = 10;
    pc.layers = 1;
    pc.heads = 2;
    pc.mlp_ratio = 2;

    for (auto kind : {PriorNetKind::TRANSFORMER, PriorNetKind::TOKEN_MLP}) {
      PriorConfig pk = pc;
      pk.net = kind;
      auto mp = init_params<double>(bc, pk, seed);
      auto params_with = [&](const char* a, const char* b) {
        std::vector<DT> out;
        for (auto& [name, tp] : mp.params.items)
          if (name.rfind(a, 0) == 0 || (b && name.rfind(b, 0) == 0))
            out.push_back(tp);
        return out;
      };

      // Weighted sums decorrelate output coordinates so a transposed or
      // permuted backward pass cannot cancel out in the scalar.
      auto weigh = [&](const DT& out) {
        auto w = tensor<double>(out->rows, out->cols, false);
        Rng wr = Rng::derive(seed, 0xAB12, uint64_t(out->numel()));
        for (auto& v : w->data) v = wr.uniform(-1.0, 1.0);
        return sum_all(mul(out, w));
      };

      auto x = randn(3, bc.voxel_dim, rng, true);
      {
        auto inputs = params_with("backbone.", nullptr);
        inputs.push_back(x);
        Rng drop(0);
        track(grad_check<double>(
            [&] { return weigh(backbone_forward(mp, x, false, drop)); }, inputs,
            eps));
      }
      {
        auto inputs = params_with("backbone.", "proj.");
        inputs.push_back(x);
        Rng drop(0);
        track(grad_check<double>(
            [&] {
              return weigh(
                  projector_forward(mp, backbone_forward(mp, x, false, drop)));
            },
            inputs, eps));
      }
      {
        auto noised = randn(3, bc.out_dim(), rng, true);
        auto cond = randn(3, bc.out_dim(), rng, true);
        const std::vector<int64_t> ts = {0, 4, 9};
        auto inputs = params_with("prior.", nullptr);
        inputs.push_back(noised);
        inputs.push_back(cond);
        track(grad_check<double>(
            [&] { return weigh(prior_net_forward(mp, noised, ts, cond)); },
            inputs, eps));
      }
      {
        // Training loss: the noised input is rebuilt from detached clean data
        // on every call, so parameters and condition carry the gradient.
        auto sched = build_schedule(pk.num_steps, pk.schedule);
        auto clean = randn(3, bc.out_dim(), rng, false);
        auto cond = randn(3, bc.out_dim(), rng, true);
        auto inputs = params_with("prior.", nullptr);
        inputs.push_back(cond);
        track(grad_check<double>(
            [&] {
              Rng r(42);
              return prior_train_loss(mp, clean, cond, sched, r);
            },
            inputs, eps));
      }
    }
  }
  const double wall = secs_since(t0);
  char buf[160];
  std::snprintf(buf, sizeof(buf), "worst rel-err %.2e (tol %.0e), %.1fs", worst,
                tol, wall);
  detail = buf;
  return worst < tol && wall < 60.0;
}

bool check2(std::string& detail) {
  auto p = tensor<double>(2, 2, false);
  p->data = {1.0, 0.0, 0.0, 1.0};
  auto t = tensor<double>(2, 2, false);
  t->data = p->data;

  const double clip = clip_loss(p, t, 1.0)->value();
  const double clip_ref = std::log(1.0 + std::exp(-1.0));
  const double soft = softclip_loss(p, t, 1.0)->value();
  const double soft_ref = 0.5822031088882378;

  Rng rng(7);
  auto pr = randn(4, 5, rng);
  auto tr = randn(4, 5, rng);
  MixSpec unit;
  unit.lambdas = {1.0, 1.0, 1.0, 1.0};
  unit.partners = {1, 2, 3, 0};
  const double bi = bimixco_loss(pr, tr, unit, 0.4)->value();
  const double cl = clip_loss(pr, tr, 0.4)->value();

  char buf[200];
  std::snprintf(buf, sizeof(buf),
                "clip %.8f vs %.8f, softclip %.8f vs %.8f, |bimixco-clip| %.1e",
                clip, clip_ref, soft, soft_ref, std::abs(bi - cl));
  detail = buf;
  return std::abs(clip - clip_ref) < 1e-5 && std::abs(soft - soft_ref) < 1e-4 &&
         std::abs(bi - cl) < 1e-6;
}

bool check3(std::string& detail) {
  double worst = 0;
  for (int64_t n : {2, 3, 4, 8}) {
    for (uint64_t seed = 1; seed <= 4; ++seed) {
      Rng rng(seed * 100 + uint64_t(n));
      auto p = randn(n, 6, rng);
      auto t = randn(n, 6, rng);
      MixSpec spec = sample_mixspec(n, 0.15, rng);
      const double got = bimixco_loss(p, t, spec, 0.3)->value();
      const double want = ref_bimixco(p, t, spec, 0.3);
      worst = std::max(worst, std::abs(got - want));
    }
  }
  char buf[120];
  std::snprintf(buf, sizeof(buf), "max |impl - reference| %.2e", worst);
  detail = buf;
  return worst < 1e-6;
}

bool check4(std::string& detail) {
  const auto t0 = Clock::now();
  Rng rng(11);
  Matrix a = randn_matrix(982, 256, rng);
  auto perfect_full = full_retrieval_top1(a, a);
  auto perfect_batch = batch_retrieval_eval(a, a, 300, 30, 5);

  Matrix b = randn_matrix(982, 256, rng);  // independent of a
  auto chance = batch_retrieval_eval(a, b, 300, 30, 5);

  const double wall = secs_since(t0);
  char buf[200];
  std::snprintf(buf, sizeof(buf),
                "perfect %.3f/%.3f, chance %.4f/%.4f (limit 0.012), %.1fs",
                perfect_full.forward_top1, perfect_batch.forward_top1,
                chance.forward_top1, chance.backward_top1, wall);
  detail = buf;
  return perfect_full.forward_top1 == 1.0 &&
         perfect_full.backward_top1 == 1.0 &&
         perfect_batch.forward_top1 == 1.0 &&
         perfect_batch.backward_top1 == 1.0 && chance.forward_top1 <= 0.012 &&
         chance.backward_top1 <= 0.012 && wall < 60.0;
}

bool check5(std::string& detail) {
  Rng rng(13);
  Matrix truth = randn_matrix(200, 64, rng);
  const double perfect = two_way_identification(truth, truth);
  Matrix indep = randn_matrix(200, 64, rng);
  const double chance = two_way_identification(indep, truth);
  char buf[120];
  std::snprintf(buf, sizeof(buf),
                "perfect %.3f, independent %.3f (want 0.5 +- 0.05)", perfect,
                chance);
  detail = buf;
  return perfect == 1.0 && std::abs(chance - 0.5) <= 0.05;
}

bool check6(std::string& detail) {
  ensure_shared_runs();
  const double bar = 0.13;
  bool ok = true;
  std::string s;
  char buf[120];
  for (size_t i = 0; i < kSeeds.size(); ++i) {
    const auto& r = g_runs.full[i].avg;
    ok = ok && r.full.forward_top1 >= bar && r.full.backward_top1 >= bar;
    std::snprintf(buf, sizeof(buf), "seed %llu fwd %.3f bwd %.3f (%.0fs); ",
                  (unsigned long long)kSeeds[i], r.full.forward_top1,
                  r.full.backward_top1, g_runs.full[i].wall);
    s += buf;
  }
  std::snprintf(buf, sizeof(buf), "bar %.2f at chance %.4f", bar,
                g_runs.full[0].avg.full.chance());
  detail = s + buf;
  return ok;
}

// Known non-reproduction: on this synthetic family the backbone-only regime
// matches or beats the projector regime at every noise level, train size,
// batch size, temperature and epoch budget we tried. The auxiliary regression
// target here is geometrically compatible with cosine retrieval (zero-mean
// unit-norm tokens), so the extra MSE signal helps the shared head instead of
// fighting it, and the decoupling advantage the projector exists for never
// materializes. The retrieval clause below is expected to report FAIL; it is
// kept strict rather than weakened.
bool check7(std::string& detail) {
  ensure_shared_runs();
  int hits = 0;
  std::string s;
  char buf[160];
  for (size_t i = 0; i < kSeeds.size(); ++i) {
    const double r_only = g_runs.bonly[i].avg.full.forward_top1;
    const double r_proj = g_runs.bproj[i].avg.full.forward_top1;
    const double mse_proj = g_runs.bproj[i].avg.projector_mse;
    const double mse_full = g_runs.full[i].avg.prior_mse;
    hits += r_only < r_proj && mse_proj > mse_full;
    std::snprintf(buf, sizeof(buf),
                  "seed %llu: retr %.3f<%.3f %s, mse %.4f>%.4f %s; ",
                  (unsigned long long)kSeeds[i], r_only, r_proj,
                  r_only < r_proj ? "y" : "n", mse_proj, mse_full,
                  mse_proj > mse_full ? "y" : "n");
    s += buf;
  }
  detail = s + "(need 2/3)";
  return hits >= 2;
}

bool check8(std::string& detail) {
  ensure_shared_runs();
  int hits = 0;
  std::string s;
  char buf[120];
  for (size_t i = 0; i < kSeeds.size(); ++i) {
    const auto& r = g_runs.full[i].avg;
    const double gp = r.gap_prior.centroid_distance;
    const double gj = r.gap_projector.centroid_distance;
    hits += gp < gj;
    std::snprintf(buf, sizeof(buf), "seed %llu: prior %.4f vs proj %.4f; ",
                  (unsigned long long)kSeeds[i], gp, gj);
    s += buf;
  }
  detail = s + "(need 2/3)";
  return hits >= 2;
}

bool check9(std::string& detail) {
  ensure_shared_runs();
  int depth_hits = 0, skip_hits = 0;
  std::string s;
  char buf[160];
  for (size_t i = 0; i < kSeeds.size(); ++i) {
    const double r0 = g_runs.blk0[i].avg.full.forward_top1;
    const double r4ns = g_runs.blk4ns[i].avg.full.forward_top1;
    const double r4s = g_runs.bproj[i].avg.full.forward_top1;
    depth_hits += r4s >= r0;
    skip_hits += r4s > r4ns;
    std::snprintf(buf, sizeof(buf),
                  "seed %llu: blocks0 %.3f, 4-noskip %.3f, 4-skip %.3f; ",
                  (unsigned long long)kSeeds[i], r0, r4ns, r4s);
    s += buf;
  }

  BackboneConfig big;
  big.voxel_dim = 15724;
  big.hidden = 4096;
  big.tokens = 257;
  big.token_dim = 768;
  const double count = double(backbone_param_count(big));
  const double rel = std::abs(count - 940e6) / 940e6;
  std::snprintf(buf, sizeof(buf), "count %.0f (%.2f%% off 940M)", count,
                100.0 * rel);
  detail = s + buf;
  return depth_hits >= 2 && skip_hits >= 2 && rel <= 0.05;
}

bool check10(std::string& detail) {
  ensure_shared_runs();
  // The 40-epoch runs switch contrastive mode at floor(40 / 3) = 13.
  bool boundary = true;
  for (const auto& r : g_runs.full) {
    boundary = boundary && r.history.size() == 40 &&
               r.history[12].mode == "bimixco" &&
               r.history[13].mode == "softclip";
  }
  const bool long_run = phase_for_epoch(79, 240) == Phase::BIMIXCO &&
                        phase_for_epoch(80, 240) == Phase::SOFTCLIP;

  int hits = 0;
  std::string s;
  char buf[120];
  for (size_t i = 0; i < kSeeds.size(); ++i) {
    const double avg = g_runs.full[i].avg.full.forward_top1;
    const double single = g_runs.full[i].single.full.forward_top1;
    hits += avg >= single;
    std::snprintf(buf, sizeof(buf), "seed %llu: avg %.3f vs single %.3f; ",
                  (unsigned long long)kSeeds[i], avg, single);
    s += buf;
  }
  std::snprintf(buf, sizeof(buf), "switch@13 %s, switch@80/240 %s (need 2/3)",
                boundary ? "y" : "n", long_run ? "y" : "n");
  detail = s + buf;
  return boundary && long_run && hits >= 2;
}

bool check11(std::string& detail) {
  const auto t0 = Clock::now();

  // Variance preservation of the forward process at every step, for unit
  // variance inputs.
  auto sched = build_schedule(100, ScheduleKind::COSINE);
  Rng rng(3);
  bool var_ok = true;
  double worst_var = 1.0;
  for (int64_t t = 0; t < sched.num_steps; ++t) {
    Matrix x0 = randn_matrix(40, 500, rng);
    Matrix noise = randn_matrix(40, 500, rng);
    Matrix xt = q_sample(x0, std::vector<int64_t>(40, t), noise, sched);
    double ss = 0;
    for (float v : xt.data) ss += double(v) * double(v);
    const double var = ss / double(xt.numel());
    if (std::abs(var - 1.0) > std::abs(worst_var - 1.0)) worst_var = var;
    var_ok = var_ok && std::abs(var - 1.0) <= 0.05;
  }

  // Sampler reproducibility under a fixed seed, with and without posterior
  // noise.
  BackboneConfig bc;
  bc.voxel_dim = 8;
  bc.hidden = 8;
  bc.tokens = 4;
  bc.token_dim = 32;
  PriorConfig pc;
  pc.num_steps = 25;
  pc.layers = 2;
  pc.heads = 4;
  auto mp = init_params<float>(bc, pc, 5, false, true);
  auto small_sched = build_schedule(pc.num_steps, pc.schedule);
  Rng cr(9);
  auto cond = from_matrix<float>(randn_matrix(6, bc.out_dim(), cr));
  bool bitwise = true;
  {
    Rng r1(77), r2(77);
    bitwise = to_matrix(*sample_prior(mp, cond, small_sched, r1)).data ==
              to_matrix(*sample_prior(mp, cond, small_sched, r2)).data;
    Rng r3(123), r4(123);
    bitwise = bitwise &&
              to_matrix(*sample_prior(mp, cond, small_sched, r3, true)).data ==
                  to_matrix(*sample_prior(mp, cond, small_sched, r4, true)).data;
  }

  // Identity task: condition the prior on the clean tokens themselves and
  // train it to copy them through the denoising chain.
  AdamW opt;
  opt.lr = 3e-3f;
  opt.weight_decay = 0.0f;
  const int64_t E = bc.out_dim(), B = 32;
  Rng data_rng(21), train_rng(22);
  auto draw = [&](int64_t n) {
    Matrix m(n, E);
    for (int64_t i = 0; i < n; ++i)
      for (int64_t tok = 0; tok < bc.tokens; ++tok) {
        double ss = 0;
        for (int64_t j = 0; j < bc.token_dim; ++j) {
          const double v = data_rng.normal();
          m.at(i, tok * bc.token_dim + j) = float(v);
          ss += v * v;
        }
        const float inv = float(1.0 / std::sqrt(std::max(ss, 1e-12)));
        for (int64_t j = 0; j < bc.token_dim; ++j)
          m.at(i, tok * bc.token_dim + j) *= inv;
      }
    return m;
  };
  Matrix held = draw(64);
  for (int64_t s = 0; s < 5000; ++s) {
    auto xt = from_matrix<float>(draw(B));
    auto loss = prior_train_loss(mp, xt, xt, small_sched, train_rng);
    mp.params.zero_grad();
    backward(loss);
    opt.step(mp.params);
  }
  double cos = 0;
  {
    Rng sr(31);
    Matrix got =
        to_matrix(*sample_prior(mp, from_matrix<float>(held), small_sched, sr));
    for (int64_t i = 0; i < held.rows; ++i) {
      double num = 0, na = 0, nb = 0;
      for (int64_t j = 0; j < E; ++j) {
        num += double(got.at(i, j)) * held.at(i, j);
        na += double(got.at(i, j)) * got.at(i, j);
        nb += double(held.at(i, j)) * held.at(i, j);
      }
      cos += num / std::sqrt(na * nb);
    }
    cos /= double(held.rows);
  }

  const double wall = secs_since(t0);
  char buf[200];
  std::snprintf(buf, sizeof(buf),
                "worst variance %.4f, bitwise %s, identity cosine %.3f, %.0fs",
                worst_var, bitwise ? "y" : "n", cos, wall);
  detail = buf;
  return var_ok && bitwise && cos > 0.9 && wall < 600.0;
}

bool check12(std::string& detail) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "voxalign_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);

  SynthConfig d;
  d.num_images = 48;
  d.reps = 2;
  d.voxel_dim = 40;
  d.tokens = 2;
  d.token_dim = 8;
  d.test_fraction = 0.25;
  d.seed = 77;
  auto ds = generate_dataset(d);
  auto sp = split_and_average(ds);

  BackboneConfig b;
  b.voxel_dim = 40;
  b.hidden = 24;
  b.num_blocks = 1;
  b.tokens = 2;
  b.token_dim = 8;
  b.proj_dim = 16;
  PriorConfig p;
  p.num_steps = 6;
  p.layers = 1;
  p.heads = 2;
  p.mlp_ratio = 2;
  TrainConfig t;
  t.epochs = 4;
  t.batch_size = 12;
  t.seed = 5;

  // Round trip after two epochs.
  auto st = init_train_state(t, b, p);
  train_to(st, sp, 2);
  save_checkpoint(st, dir / "a.vxcp");
  auto loaded = load_checkpoint(dir / "a.vxcp");
  bool bitwise = loaded.opt.step_count == st.opt.step_count &&
                 loaded.model.params.items.size() == st.model.params.items.size();
  if (bitwise)
    for (size_t i = 0; i < st.model.params.items.size(); ++i) {
      bitwise = bitwise && loaded.model.params.items[i].second->data ==
                               st.model.params.items[i].second->data;
      bitwise = bitwise && loaded.opt.m[i] == st.opt.m[i] &&
                loaded.opt.v[i] == st.opt.v[i];
    }

  // Resuming from the checkpoint must retrace an uninterrupted run.
  auto straight = train(t, b, p, sp);
  train_to(loaded, sp, t.epochs);
  double traj = 0;
  const bool same_hist = loaded.history.size() == straight.history.size();
  if (same_hist)
    for (size_t i = 0; i < straight.history.size(); ++i)
      traj = std::max(traj, std::abs(loaded.history[i].loss -
                                     straight.history[i].loss));

  // Dataset regeneration from the manifest is byte-identical.
  save_dataset(ds, dir / "ds1");
  auto manifest_cfg = load_dataset(dir / "ds1").config;
  save_dataset(generate_dataset(manifest_cfg), dir / "ds2");
  const bool regen = read_text(dir / "ds1" / "voxels.f32") ==
                         read_text(dir / "ds2" / "voxels.f32") &&
                     read_text(dir / "ds1" / "targets.f32") ==
                         read_text(dir / "ds2" / "targets.f32") &&
                     read_text(dir / "ds1" / "manifest.json") ==
                         read_text(dir / "ds2" / "manifest.json");

  fs::remove_all(dir);
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "round-trip %s, trajectory gap %.1e, regen %s",
                bitwise ? "bitwise" : "MISMATCH", traj, regen ? "y" : "n");
  detail = buf;
  return bitwise && same_hist && traj <= 1e-6 && regen;
}

struct Criterion {
  int id;
  const char* name;
  bool (*fn)(std::string&);
};

const Criterion kCriteria[] = {
    {1, "gradient correctness across losses and networks", check1},
    {2, "closed-form contrastive loss values", check2},
    {3, "mixup contrastive loss matches a brute-force reference", check3},
    {4, "retrieval protocol bounds", check4},
    {5, "two-way identification bounds", check5},
    {6, "end-to-end retrieval well above chance on desk defaults", check6},
    {7, "retrieval/reconstruction tradeoff direction", check7},
    {8, "prior closes the modality gap further than the projector", check8},
    {9, "depth and skip direction, full-scale parameter count", check9},
    {10, "phase boundary and test-averaging direction", check10},
    {11, "diffusion variance, sampler determinism, identity task", check11},
    {12, "persistence round-trips", check12},
};

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failures = 0;
  for (const auto& c : kCriteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    std::string detail;
    bool ok = false;
    try {
      ok = c.fn(detail);
    } catch (const std::exception& e) {
      detail = std::string("exception: ") + e.what();
    }
    std::printf("[%s] %2d: %s (%s)\n", ok ? "PASS" : "FAIL", c.id, c.name,
                detail.c_str());
    std::fflush(stdout);
    failures += !ok;
  }
  return failures;
}
