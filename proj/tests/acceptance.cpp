// Release gate: every check below guards a property the project promises.
// Each prints one [PASS]/[FAIL] line with the measured numbers; the process
// exits nonzero if any check fails. The regional-forecasting checks share
// one pretrained desk-scale base model, so they run as a block.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "stratus/climatology.h"
#include "stratus/fdcheck.h"
#include "stratus/hash.h"
#include "stratus/metrics.h"
#include "stratus/peft.h"
#include "stratus/train.h"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace stratus;

namespace {

struct Outcome {
  bool ok = false;
  std::string detail;
};

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("acceptance: shape mismatch");
  double m = 0;
  for (std::int64_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(a.value_at(i) - b.value_at(i)));
  return m;
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list args;
  va_start(args, f);
  std::vsnprintf(buf, sizeof buf, f, args);
  va_end(args);
  return std::string(buf);
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.embed_dim = 16;
  c.depth = 2;
  c.n_heads = 2;
  c.patch = 2;
  c.n_lat = 4;
  c.n_lon = 8;
  c.input_variables = {"a", "b"};
  c.target_variables = {"a", "b"};
  c.lead_times = {12, 24};
  c.tile_k = 2;  // several key tiles even on the tiny patch grid
  return c;
}

Dataset with_stats(const Dataset& ds, const std::vector<std::int64_t>& idx) {
  DatasetManifest m = ds.manifest();
  m.normalization = compute_normalization(ds, idx);
  std::vector<std::vector<float>> frames;
  frames.reserve(m.variables.size());
  for (std::size_t v = 0; v < m.variables.size(); ++v)
    frames.push_back(ds.raw(static_cast<std::int64_t>(v)));
  return Dataset(std::move(m), std::move(frames));
}

Dataset tiny_dataset(std::uint64_t seed, std::int64_t n_steps) {
  GridSpec g = GridSpec::from_resolution(45.0);
  SynthConfig sc;
  sc.variables = {"a", "b"};
  sc.n_steps = n_steps;
  sc.seed = seed;
  return synth_generate(g, sc);
}

// ---------------------------------------------------------------- check 1

Outcome fresh_adapters_are_identity() {
  ModelConfig cfg = tiny_config();
  ForecastModel m(cfg, 3);
  Rng rng(4);
  Tensor x = Tensor::randn({2, 4, 8}, rng);
  Tensor y0 = m.forward(x, 12);
  std::size_t n_targets = target_paths(cfg, TargetSet::attention).size();

  double worst = 0;
  auto probe = [&](AdapterKind kind, std::vector<SupportTags> tags) {
    ForecastModel c = m.clone();
    AdapterSpec spec;
    spec.kind = kind;
    spec.targets = TargetSet::attention;
    spec.rank = 4;
    spec.seed = 11;
    spec.tags = std::move(tags);
    attach_adapter(c, spec);
    worst = std::max(worst, max_abs_diff(c.forward(x, 12), y0));
  };

  probe(AdapterKind::lora, {});
  probe(AdapterKind::reslora, {});
  probe(AdapterKind::glora, std::vector<SupportTags>(n_targets, SupportTags{}));
  SupportTags mixed{SupportTag::low_rank, SupportTag::vec, SupportTag::low_rank,
                    SupportTag::scalar, SupportTag::vec};
  probe(AdapterKind::glora, std::vector<SupportTags>(n_targets, mixed));

  return {worst <= 1e-12,
          fmt("max output drift %.2e (limit 1e-12) across lora/reslora/glora",
              worst)};
}

// ---------------------------------------------------------------- check 2

Outcome merge_matches_adapter_forward() {
  Rng rng(7);
  double worst_fwd = 0, worst_rt = 0;
  for (std::int64_t r : {2, 4, 8, 16, 32}) {
    for (int s = 0; s < 20; ++s) {
      std::int64_t d = r + rng.index(33);
      std::int64_t k = r + rng.index(33);
      Tensor w = Tensor::randn({d, k}, rng);
      Tensor b = Tensor::randn({d}, rng, 0.3);
      Tensor a = Tensor::randn({r, k}, rng, 0.4);
      Tensor up = Tensor::randn({d, r}, rng, 0.4);
      double sc = 0.25 + rng.uniform();
      Tensor x = Tensor::randn({5, k}, rng);

      Tensor via_branch = lora_forward(x, w, b, a, up, sc);
      Tensor merged = merge_adapter(w, a, up, sc);
      worst_fwd = std::max(worst_fwd, max_abs_diff(via_branch, linear(x, merged, b)));
      worst_rt = std::max(worst_rt, max_abs_diff(unmerge_adapter(merged, a, up, sc), w));
    }
  }
  bool ok = worst_fwd <= 1e-10 && worst_rt <= 1e-12;
  return {ok, fmt("100 shape/rank combos: forward gap %.2e (limit 1e-10), "
                  "merge-unmerge drift %.2e (limit 1e-12)",
                  worst_fwd, worst_rt)};
}

// ---------------------------------------------------------------- check 3

Outcome frozen_base_never_moves() {
  Dataset raw = tiny_dataset(11, 790);
  SplitSpec ss;
  ss.train_years = {2001};
  ss.val_years = {2002};
  SplitIndices splits = split_by_years(raw.manifest(), ss);
  Dataset ds = with_stats(raw, splits.train);

  ForecastModel m(tiny_config(), 5);
  AdapterSpec spec;
  spec.kind = AdapterKind::lora;
  spec.rank = 4;
  spec.seed = 9;
  attach_adapter(m, spec);
  std::string before = params_hash(m, ParamFilter::frozen);

  TrainConfig tc;
  tc.learning_rate = 1e-3;
  tc.batch_size = 8;
  tc.max_epochs = 10;
  tc.max_steps_per_epoch = 20;  // 10 epochs x 20 = 200 optimizer steps
  tc.patience = 10;
  tc.lead_times = {12};
  tc.max_val_windows = 8;
  tc.seed = 1;
  TrainResult r = train(std::move(m), ds, splits, tc);
  std::string after = params_hash(r.model, ParamFilter::frozen);

  // the run has to have actually trained: the up-projection starts at zero
  auto set = std::dynamic_pointer_cast<AdapterSet>(r.model.adapter());
  double moved = 0;
  const Tensor& up = set->target("blocks.0.attn.q").b;
  for (std::int64_t i = 0; i < up.numel(); ++i)
    moved = std::max(moved, std::abs(up.value_at(i)));

  bool ok = before == after && moved > 0;
  return {ok, fmt("frozen-set digest %s over 200 steps, adapter |B|max %.2e",
                  before == after ? "unchanged" : "CHANGED", moved)};
}

// ---------------------------------------------------------------- check 4

Outcome gradients_match_finite_differences() {
  ModelConfig cfg = tiny_config();
  GridSpec g = GridSpec::from_resolution(45.0);
  LatWeights lw = latitude_weights(g);
  Rng rng(21);
  Tensor x = Tensor::randn({2, 4, 8}, rng, 0.8);
  // a target near the model output keeps the loss small, so central
  // differences stay clear of cancellation noise on near-zero gradients
  auto near_target = [&](ForecastModel& m, int lead) {
    return add(m.forward(x, lead), Tensor::randn({2, 4, 8}, rng, 0.02));
  };
  double worst = 0;

  {  // low-rank branch, aggregation query, head, position table; the
     // streaming kernel's recompute backward carries all of these
    ForecastModel m(cfg, 31);
    AdapterSpec spec;
    spec.kind = AdapterKind::lora;
    spec.rank = 2;
    spec.seed = 8;
    auto set = attach_adapter(m, spec);
    TargetAdapter& ta = set->target("blocks.0.attn.q");
    Rng arng(40);
    ta.a = Tensor::randn(ta.a.shape(), arng, 0.5);
    ta.b = Tensor::randn(ta.b.shape(), arng, 0.5);
    Tensor tgt = near_target(m, 12);

    std::vector<std::string> base_paths = {"tok.a.w", "agg.query", "head.w",
                                           "pos_embed"};
    std::vector<Tensor> init;
    for (const auto& p : base_paths) init.push_back(m.param(p));
    init.push_back(ta.a);
    init.push_back(ta.b);
    auto f = [&](const std::vector<Tensor>& ps) {
      for (std::size_t i = 0; i < base_paths.size(); ++i)
        m.set_param(base_paths[i], ps[i]);
      ta.a = ps[base_paths.size()];
      ta.b = ps[base_paths.size() + 1];
      return lat_weighted_mse(m.forward(x, 12), tgt, lw);
    };
    worst = std::max(worst, finite_difference_check(f, init));
  }

  {  // every generalized-support structure in one graph
    ForecastModel m(cfg, 33);
    AdapterSpec spec;
    spec.kind = AdapterKind::glora;
    spec.rank = 2;
    spec.seed = 12;
    SupportTags mixed{SupportTag::low_rank, SupportTag::vec,
                      SupportTag::low_rank, SupportTag::scalar,
                      SupportTag::vec};
    spec.tags.assign(target_paths(cfg, spec.targets).size(), mixed);
    auto set = attach_adapter(m, spec);
    TargetAdapter& ta = set->target("blocks.1.attn.v");
    Rng srng(41);
    std::vector<std::string> keys;
    for (auto& kv : ta.sup) {
      kv.second = Tensor::randn(kv.second.shape(), srng, 0.3);
      keys.push_back(kv.first);
    }
    Tensor tgt = near_target(m, 24);
    std::vector<Tensor> init;
    for (const auto& k : keys) init.push_back(ta.sup.at(k));
    init.push_back(m.param("head.w"));
    auto f = [&](const std::vector<Tensor>& ps) {
      for (std::size_t i = 0; i < keys.size(); ++i) ta.sup[keys[i]] = ps[i];
      m.set_param("head.w", ps.back());
      return lat_weighted_mse(m.forward(x, 24), tgt, lw);
    };
    worst = std::max(worst, finite_difference_check(f, init));
  }

  return {worst <= 1e-4,
          fmt("max relative gradient error %.2e (limit 1e-4)", worst)};
}

// ---------------------------------------------------------------- check 5

Outcome streaming_kernel_equivalence() {
  Rng rng(77);
  double worst = 0;
  for (int i = 0; i < 50; ++i) {
    std::int64_t h = 1 + rng.index(3);
    std::int64_t d = 1 + rng.index(16);
    std::int64_t n_q = 1 + rng.index(40);
    std::int64_t n_k = 1 + rng.index(48);
    std::int64_t tile = 1 + rng.index(n_k + 4);
    AttentionInputs in;
    in.q = Tensor::randn({h, n_q, d}, rng);
    in.k = Tensor::randn({h, n_k, d}, rng);
    in.v = Tensor::randn({h, n_k, d}, rng);
    worst = std::max(worst, max_abs_diff(streaming_attention(in, tile),
                                         naive_attention(in)));
  }

  const std::int64_t n = 256;
  AttentionInputs big;
  big.q = Tensor::randn({1, n, 16}, rng);
  big.k = Tensor::randn({1, n, 16}, rng);
  big.v = Tensor::randn({1, n, 16}, rng);
  MemoryMeter& meter = MemoryMeter::instance();
  meter.reset_peak();
  std::int64_t before = meter.current();
  Tensor out = streaming_attention(big, 32);
  std::int64_t aux = meter.peak() - before - out.numel() * 8;
  std::int64_t dense = n * n * 8;

  bool ok = worst <= 1e-10 && aux < dense / 4;
  return {ok, fmt("50 combos max gap %.2e (limit 1e-10); aux memory %lld B "
                  "vs dense %lld B (limit 25%%)",
                  worst, static_cast<long long>(aux),
                  static_cast<long long>(dense))};
}

// ---------------------------------------------------------------- check 6

Outcome metric_identities() {
  GridSpec g = GridSpec::from_resolution(45.0);
  LatWeights lw = latitude_weights(g);
  const std::int64_t D = 2, H = 4, W = 8;
  Rng rng(3);

  std::vector<Tensor> preds, truths;
  for (int i = 0; i < 3; ++i) {
    preds.push_back(Tensor::randn({D, H, W}, rng));
    truths.push_back(Tensor::randn({D, H, W}, rng));
  }
  Tensor clim = Tensor::randn({D, H, W}, rng, 0.5);

  // independent triple-loop references
  auto rmse_oracle = [&](std::int64_t v) {
    double acc = 0;
    for (const auto& p : preds) {
      double s = 0;
      for (std::int64_t i = 0; i < H; ++i)
        for (std::int64_t j = 0; j < W; ++j) {
          double d = p.at({v, i, j}) -
                     truths[static_cast<std::size_t>(&p - preds.data())].at({v, i, j});
          s += lw.w[static_cast<std::size_t>(i)] * d * d;
        }
      acc += std::sqrt(s / static_cast<double>(H * W));
    }
    return acc / static_cast<double>(preds.size());
  };
  auto acc_oracle = [&](std::int64_t v) {
    double acc = 0;
    for (std::size_t t = 0; t < preds.size(); ++t) {
      double num = 0, dp = 0, dt = 0;
      for (std::int64_t i = 0; i < H; ++i)
        for (std::int64_t j = 0; j < W; ++j) {
          double wi = lw.w[static_cast<std::size_t>(i)];
          double pa = preds[t].at({v, i, j}) - clim.at({v, i, j});
          double ta = truths[t].at({v, i, j}) - clim.at({v, i, j});
          num += wi * pa * ta;
          dp += wi * pa * pa;
          dt += wi * ta * ta;
        }
      acc += num / std::sqrt(dp * dt);
    }
    return acc / static_cast<double>(preds.size());
  };

  double worst = 0;
  std::vector<double> rmse = lat_weighted_rmse(preds, truths, lw);
  std::vector<double> acc = lat_weighted_acc(preds, truths, clim, lw);
  for (std::int64_t v = 0; v < D; ++v) {
    worst = std::max(worst, std::abs(rmse[static_cast<std::size_t>(v)] - rmse_oracle(v)));
    worst = std::max(worst, std::abs(acc[static_cast<std::size_t>(v)] - acc_oracle(v)));
  }

  // perfect forecast and mirrored forecast
  std::vector<double> self = lat_weighted_acc(truths, truths, clim, lw);
  for (double a : self) worst = std::max(worst, std::abs(a - 1.0));
  std::vector<Tensor> mirror;
  for (const auto& t : truths) mirror.push_back(add(scale(t, -1.0), scale(clim, 2.0)));
  std::vector<double> anti = lat_weighted_acc(mirror, truths, clim, lw);
  for (double a : anti) worst = std::max(worst, std::abs(a + 1.0));

  // constant bias on a uniform-weight grid reads back exactly
  GridSpec ug = GridSpec::custom({-30.0, 30.0}, {45.0, 135.0, 225.0, 315.0});
  LatWeights uw = latitude_weights(ug);
  Tensor ut = Tensor::randn({1, 2, 4}, rng);
  std::vector<double> shifted = ut.values();
  for (double& x : shifted) x += -2.5;
  std::vector<Tensor> up{Tensor::from_values({1, 2, 4}, std::move(shifted))};
  std::vector<Tensor> utr{ut};
  worst = std::max(worst, std::abs(lat_weighted_rmse(up, utr, uw)[0] - 2.5));

  // broadcast weight mean is one on native grids
  for (double deg : {45.0, 11.25}) {
    GridSpec gg = GridSpec::from_resolution(deg);
    LatWeights w = latitude_weights(gg);
    double mean = 0;
    for (double wi : w.w) mean += wi;
    mean /= static_cast<double>(w.w.size());
    worst = std::max(worst, std::abs(mean - 1.0));
  }

  return {worst <= 1e-12, fmt("max identity error %.2e (limit 1e-12)", worst)};
}

// ---------------------------------------------------------------- check 7

Outcome parameter_accounting() {
  ModelConfig cfg = tiny_config();
  bool exact = true;
  for (TargetSet ts : {TargetSet::attention, TargetSet::attention_fc1,
                       TargetSet::attention_fc1fc2}) {
    for (std::int64_t r : {2, 8}) {
      ForecastModel m(cfg, 2);
      AdapterSpec spec;
      spec.kind = AdapterKind::lora;
      spec.targets = ts;
      spec.rank = r;
      spec.train_head = false;
      auto set = attach_adapter(m, spec);
      std::int64_t closed = 0;
      for (const auto& p : target_paths(cfg, ts)) {
        const Tensor& w = m.param(p + ".w");
        closed += r * (w.dim(0) + w.dim(1));
      }
      exact = exact && set->param_count() == closed &&
              m.count_parameters(ParamFilter::trainable) == closed;
    }
  }

  // scaled-up preset: rank-16 attention adapters on a ~100M backbone
  ModelConfig big;
  big.embed_dim = 1024;
  big.depth = 8;
  big.n_heads = 16;
  big.patch = 2;
  big.n_lat = 32;
  big.n_lon = 64;
  big.input_variables = default_variables();
  big.target_variables = default_variables();
  double frac;
  {
    ForecastModel m(big, 1);
    AdapterSpec spec;
    spec.kind = AdapterKind::lora;
    spec.rank = 16;
    spec.targets = TargetSet::attention;
    attach_adapter(m, spec);
    frac = static_cast<double>(m.count_parameters(ParamFilter::trainable)) /
           static_cast<double>(m.count_parameters(ParamFilter::all));
  }

  bool ok = exact && frac <= 0.20;
  return {ok, fmt("closed-form counts %s; scaled-preset trainable fraction "
                  "%.4f (limit 0.20)",
                  exact ? "exact" : "WRONG", frac)};
}

// ------------------------------------------------- shared regional fixture

struct Desk {
  Dataset global, regional;
  SplitIndices splits;
  ForecastModel base;
  Climatology gclim, rclim;
  CropIndex crop;
  PatchMap pm;
  RegionBox crop_box{0, 0, 0, 0};
  std::vector<std::string> vars;

  // produced by the checks, consumed by later ones
  std::map<std::string, double> fft_rmse, lora_rmse;
  History fft_hist, lora_hist;
};

std::optional<Desk> g_desk;

Desk& desk() {
  if (g_desk) return *g_desk;
  Desk d;
  GridSpec g = GridSpec::from_resolution(11.25);
  SynthConfig sc;
  sc.variables = default_variables();
  sc.n_steps = 1600;  // three calendar years: train/val/test
  sc.seed = 13;
  Dataset raw = synth_generate(g, sc);
  SplitSpec ss;
  ss.train_years = {2001};
  ss.val_years = {2002};
  ss.test_years = {2003};
  d.splits = split_by_years(raw.manifest(), ss);
  d.global = with_stats(raw, d.splits.train);
  d.vars = sc.variables;

  ModelConfig mc;
  mc.embed_dim = 64;
  mc.depth = 2;
  mc.n_heads = 4;
  mc.patch = 2;
  mc.n_lat = 16;
  mc.n_lon = 32;
  mc.input_variables = d.vars;
  mc.target_variables = d.vars;
  mc.lead_times = {12, 24, 36, 48, 60, 72};
  ForecastModel model(mc, 1);

  TrainConfig pt;
  pt.learning_rate = 2e-3;
  pt.batch_size = 8;
  pt.max_epochs = 3;
  pt.patience = 3;
  pt.max_steps_per_epoch = 40;
  pt.max_val_windows = 12;
  pt.seed = 1;
  pt.lead_times = mc.lead_times;
  TrainResult pr = train(std::move(model), d.global, d.splits, pt);
  d.base = std::move(pr.model);

  d.crop = patch_aligned(region_indices(g, RegionBox::preset("mena")), g, mc.patch);
  d.regional = crop_dataset(d.global, d.crop);
  GridSpec sub = cropped_grid(g, d.crop);
  // a box that reproduces the aligned crop cell-for-cell on the native grid
  d.crop_box = RegionBox{sub.lat_centers.front() - 0.01,
                         sub.lat_centers.back() + 0.01,
                         sub.lon_centers.front() - 0.01,
                         sub.lon_centers.back() + 0.01};
  d.pm = d.base.region_map(d.crop);
  d.gclim = compute_climatology(d.global, d.splits.train, d.vars);
  d.rclim = compute_climatology(d.regional, d.splits.train, d.vars);

  g_desk = std::move(d);
  return *g_desk;
}

TrainConfig regional_config(TrainMode mode, TargetSet targets) {
  TrainConfig ft;
  ft.learning_rate = 1e-3;
  ft.batch_size = 8;
  ft.max_epochs = 12;
  ft.patience = 6;
  ft.max_steps_per_epoch = 40;
  ft.max_val_windows = 24;
  ft.seed = 2;
  ft.lead_times = {24};
  ft.mode = mode;
  ft.adapter.kind = AdapterKind::lora;
  ft.adapter.rank = 8;
  ft.adapter.targets = targets;
  ft.adapter.seed = 2;
  return ft;
}

MetricsReport eval_regional(const Desk& d, const ForecastModel& m,
                            const std::vector<int>& leads) {
  EvalOptions opt;
  opt.leads = leads;
  opt.max_windows = 0;
  return evaluate(model_forecaster(m, &d.pm), d.regional, d.splits.test,
                  d.rclim, opt);
}

// ---------------------------------------------------------------- check 8

Outcome regional_beats_global() {
  Desk& d = desk();
  TrainConfig ft = regional_config(TrainMode::fft, TargetSet::attention);
  TrainResult r = finetune_regional(d.base, d.regional, d.splits, ft, d.pm);
  d.fft_hist = r.history;

  EvalOptions go;
  go.leads = {24};
  go.region = d.crop_box;
  go.max_windows = 0;
  MetricsReport zero = evaluate(model_forecaster(d.base), d.global,
                                d.splits.test, d.gclim, go);
  MetricsReport reg = eval_regional(d, r.model, {24});

  int wins = 0;
  for (const auto& v : d.vars) {
    d.fft_rmse[v] = reg.at(v, 24).rmse;
    if (reg.at(v, 24).rmse < zero.at(v, 24).rmse) ++wins;
  }
  return {wins >= 6, fmt("regional fine-tune beats global zero-shot on %d/%d "
                         "variables (need >= 6)",
                         wins, static_cast<int>(d.vars.size()))};
}

// ---------------------------------------------------------------- check 9

Outcome lora_competitive_and_cheaper() {
  Desk& d = desk();
  if (d.fft_rmse.empty()) return {false, "needs the regional fft artifacts"};
  TrainConfig ft = regional_config(TrainMode::lora, TargetSet::attention);
  TrainResult r = finetune_regional(d.base, d.regional, d.splits, ft, d.pm);
  d.lora_hist = r.history;
  MetricsReport reg = eval_regional(d, r.model, {24});

  double ratio = 0;
  for (const auto& v : d.vars) {
    d.lora_rmse[v] = reg.at(v, 24).rmse;
    ratio += reg.at(v, 24).rmse / d.fft_rmse[v];
  }
  ratio /= static_cast<double>(d.vars.size());

  bool cheaper = d.lora_hist.trainable_count < d.fft_hist.trainable_count &&
                 d.lora_hist.peak_bytes < d.fft_hist.peak_bytes;
  bool ok = ratio <= 1.10 && cheaper;
  return {ok, fmt("rmse ratio vs full fine-tune %.4f (limit 1.10); trainable "
                  "%lld vs %lld, peak %lld vs %lld bytes",
                  ratio, static_cast<long long>(d.lora_hist.trainable_count),
                  static_cast<long long>(d.fft_hist.trainable_count),
                  static_cast<long long>(d.lora_hist.peak_bytes),
                  static_cast<long long>(d.fft_hist.peak_bytes))};
}

// --------------------------------------------------------------- check 10

Outcome widening_adapters_does_not_help() {
  Desk& d = desk();
  if (d.lora_rmse.empty()) return {false, "needs the attention-only artifacts"};
  TrainConfig ft = regional_config(TrainMode::lora, TargetSet::attention_fc1fc2);
  TrainResult r = finetune_regional(d.base, d.regional, d.splits, ft, d.pm);
  MetricsReport reg = eval_regional(d, r.model, {24});

  double ratio = 0;
  for (const auto& v : d.vars) ratio += reg.at(v, 24).rmse / d.lora_rmse[v];
  ratio /= static_cast<double>(d.vars.size());
  return {ratio >= 0.98, fmt("rmse ratio mlp-extended vs attention-only "
                             "%.4f (must be >= 0.98)",
                             ratio)};
}

// --------------------------------------------------------------- check 11

Outcome error_grows_with_lead_time() {
  Desk& d = desk();
  TrainConfig st = regional_config(TrainMode::lora, TargetSet::attention);
  st.lead_times = {12, 24, 36, 48, 60, 72};
  st.max_epochs = 2;
  st.patience = 2;
  st.max_steps_per_epoch = 25;
  auto suite = lead_time_suite(d.base, d.regional, d.splits, st, &d.pm);

  std::map<std::string, double> base_rmse;
  std::vector<double> curve;
  std::string shown;
  for (int lead : st.lead_times) {
    MetricsReport rep = eval_regional(d, suite.at(lead).model, {lead});
    double s = 0;
    for (const auto& v : d.vars) {
      double r = rep.at(v, lead).rmse;
      if (lead == st.lead_times.front()) base_rmse[v] = r;
      s += r / base_rmse[v];
    }
    curve.push_back(s / static_cast<double>(d.vars.size()));
    shown += fmt("%s%.3f", shown.empty() ? "" : " ", curve.back());
  }
  int inversions = 0;
  for (std::size_t i = 1; i < curve.size(); ++i)
    if (curve[i] < curve[i - 1]) ++inversions;
  return {inversions <= 1,
          fmt("normalized rmse by lead: %s; %d inversions (allow 1)",
              shown.c_str(), inversions)};
}

// --------------------------------------------------------------- check 12

Outcome search_recovers_known_optimum() {
  SearchSpace space;
  space.layer_paths = {"l0", "l1", "l2", "l3"};
  space.allowed = {SupportTag::none, SupportTag::vec};
  // optimum fills every slot, maximally far from the seeded baseline
  auto mismatch = [](const SearchGenome& g) {
    double m = 0;
    for (const auto& t : g.tags)
      for (SupportTag tag : {t.u, t.v, t.x, t.y, t.z})
        m += tag != SupportTag::vec;
    return m;
  };
  SearchConfig cfg;
  cfg.population = 8;
  cfg.budget = 50;
  cfg.tournament = 2;
  cfg.p_mutation = 0.15;

  int recovered = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    cfg.seed = seed;
    SearchGenome best = evolutionary_search(space, cfg, mismatch);
    bool exact = best.fitness == 0.0;
    for (const auto& t : best.tags)
      exact = exact && t.u == SupportTag::vec && t.v == SupportTag::vec &&
              t.x == SupportTag::vec && t.y == SupportTag::vec &&
              t.z == SupportTag::vec;
    if (exact) ++recovered;
  }

  cfg.seed = 4;
  SearchGenome b1 = evolutionary_search(space, cfg, mismatch);
  SearchGenome b2 = evolutionary_search(space, cfg, mismatch);
  bool deterministic = b1.tags == b2.tags && b1.fitness == b2.fitness;

  bool ok = recovered == 10 && deterministic;
  return {ok, fmt("optimum recovered %d/10 seeds within 50 evaluations; "
                  "repeat run %s",
                  recovered, deterministic ? "identical" : "DIVERGED")};
}

// --------------------------------------------------------------- check 13

Outcome cli_reruns_are_bit_identical() {
  fs::path root = fs::temp_directory_path() / "stratus-acceptance-cli";
  fs::remove_all(root);
  fs::create_directories(root);
  std::string data = (root / "data").string();
  std::string runs = (root / "runs").string();

  auto run = [&](const std::string& cmd, const json& cfg,
                 const std::string& name) {
    fs::path cf = root / (name + ".json");
    std::ofstream(cf) << cfg.dump(2) << "\n";
    std::string line = std::string(FORECAST_BIN) + " " + cmd + " --config " +
                       cf.string() + " > " + (root / (name + ".log")).string() +
                       " 2>&1";
    return std::system(line.c_str()) == 0;
  };

  json gen = {{"out", data}, {"grid_deg", 45.0}, {"n_steps", 1600},
              {"variables", json::array({"a", "b"})}, {"seed", 5}};
  if (!run("gen-data", gen, "gen")) return {false, "gen-data failed, see logs"};

  json pre = {{"data", data},
              {"runs", runs},
              {"embed_dim", 32},
              {"depth", 1},
              {"heads", 2},
              {"patch", 2},
              {"lr", 1e-3},
              {"batch_size", 4},
              {"max_epochs", 1},
              {"patience", 1},
              {"seed", 3},
              {"leads", json::array({24})},
              {"max_steps_per_epoch", 8},
              {"max_val_windows", 4},
              {"train_years", json::array({2001})},
              {"val_years", json::array({2002})},
              {"test_years", json::array({2003})}};
  if (!run("pretrain", pre, "pretrain")) return {false, "pretrain failed, see logs"};

  std::string ckpt;
  for (const auto& e : fs::directory_iterator(runs))
    if (e.is_directory() && e.path().filename().string().rfind("pretrain-", 0) == 0)
      ckpt = (e.path() / "checkpoints" / "model.ckpt").string();
  if (ckpt.empty() || !fs::exists(ckpt)) return {false, "no checkpoint written"};

  json ev = {{"data", data},
             {"runs", runs},
             {"checkpoint", ckpt},
             {"leads", json::array({24})},
             {"max_windows", 6},
             {"train_years", json::array({2001})},
             {"val_years", json::array({2002})},
             {"test_years", json::array({2003})}};
  auto read_metrics = [&]() -> std::string {
    for (const auto& e : fs::directory_iterator(runs))
      if (e.is_directory() &&
          e.path().filename().string().rfind("evaluate-", 0) == 0) {
        std::ifstream f(e.path() / "metrics.json", std::ios::binary);
        std::ostringstream ss;
        ss << f.rdbuf();
        return ss.str();
      }
    return {};
  };

  if (!run("evaluate", ev, "eval1")) return {false, "evaluate failed, see logs"};
  std::string m1 = read_metrics();
  if (!run("evaluate", ev, "eval2")) return {false, "evaluate rerun failed"};
  std::string m2 = read_metrics();

  bool ok = !m1.empty() && m1 == m2;
  return {ok, fmt("metrics.json %zu bytes, rerun %s", m1.size(),
                  m1 == m2 ? "bit-identical" : "DIFFERS")};
}

}  // namespace

int main() {
  struct Check {
    int id;
    const char* name;
    std::function<Outcome()> fn;
  };
  const std::vector<Check> checks = {
      {1, "fresh adapters leave outputs unchanged", fresh_adapters_are_identity},
      {2, "adapter forward matches merged dense weights", merge_matches_adapter_forward},
      {3, "frozen base immutable across an adapter fine-tune", frozen_base_never_moves},
      {4, "full-model gradients match finite differences", gradients_match_finite_differences},
      {5, "streaming attention equals the dense kernel in bounded memory", streaming_kernel_equivalence},
      {6, "latitude-weighted metric identities", metric_identities},
      {7, "trainable-parameter accounting", parameter_accounting},
      {8, "regional fine-tune beats the global model on its region", regional_beats_global},
      {9, "low-rank fine-tune is competitive at lower cost", lora_competitive_and_cheaper},
      {10, "extending adapters into the mlp does not help", widening_adapters_does_not_help},
      {11, "forecast error grows with lead time", error_grows_with_lead_time},
      {12, "structure search recovers a known optimum", search_recovers_known_optimum},
      {13, "cli reruns reproduce metrics bit-for-bit", cli_reruns_are_bit_identical},
  };

  int failures = 0;
  for (const auto& c : checks) {
    auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    double secs = std::chrono::duration<double>(
                      std::chrono::steady_clock::now() - t0)
                      .count();
    std::printf("[%s] %2d %s — %s (%.1fs)\n", o.ok ? "PASS" : "FAIL", c.id,
                c.name, o.detail.c_str(), secs);
    std::fflush(stdout);
    if (!o.ok) ++failures;
  }
  std::printf("%d/13 checks passed\n", 13 - failures);
  return failures == 0 ? 0 : 1;
}
