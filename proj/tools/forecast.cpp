// Command-line surface: synthetic data generation, global pre-training,
// regional fine-tuning (full or adapter-based), support-structure search,
// evaluation with latitude-weighted metrics and bias maps, attention kernel
// benchmarks, and run aggregation. Every run writes a manifest keyed by the
// hash of its resolved config, so reruns of the same config land in the same
// directory and reproduce the same metrics bytes.

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "stratus/hash.h"
#include "stratus/metrics.h"
#include "stratus/runconfig.h"
#include "stratus/train.h"
#include "stratus/version.h"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace stratus;

namespace {

json load_config_file(const std::string& path, const std::string& command) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config: cannot open " + path);
  json j;
  try {
    j = json::parse(f);
  } catch (const json::parse_error& e) {
    throw ConfigError("config: " + path + " is not valid JSON: " + e.what());
  }
  validate_config(command, j, false);
  return j;
}

// config-file value wins over the built-in default, explicit flag wins over both
template <typename T>
void merge_key(const CLI::App* cmd, const std::string& flag, const json& cfg,
               const std::string& key, T& value) {
  if (cmd->count(flag) == 0 && cfg.contains(key)) value = cfg.at(key).get<T>();
}

RegionBox parse_region(const std::string& s) {
  if (s == "mena" || s == "globe") return RegionBox::preset(s);
  std::vector<double> v;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) v.push_back(std::stod(part));
  if (v.size() != 4)
    throw ConfigError(
        "region: expected a preset name or lat_min,lat_max,lon_min,lon_max, got '" +
        s + "'");
  return RegionBox{v[0], v[1], v[2], v[3]};
}

SplitSpec split_spec(const std::vector<int>& train, const std::vector<int>& val,
                     const std::vector<int>& test) {
  SplitSpec s;
  s.train_years = train;
  s.val_years = val;
  s.test_years = test;
  return s;
}

json stats_json(const std::vector<std::string>& vars,
                const std::vector<VarStats>& stats) {
  json out = json::array();
  for (std::size_t i = 0; i < vars.size(); ++i)
    out.push_back({{"name", vars[i]},
                   {"mean", stats[i].mean},
                   {"stddev", stats[i].stddev}});
  return out;
}

std::vector<VarStats> stats_from_json(const json& j,
                                      const std::vector<std::string>& vars) {
  if (j.size() != vars.size())
    throw DataError("checkpoint: normalization covers " +
                    std::to_string(j.size()) + " variables, dataset has " +
                    std::to_string(vars.size()));
  std::vector<VarStats> out(vars.size());
  for (const auto& e : j) {
    std::string name = e.at("name").get<std::string>();
    auto it = std::find(vars.begin(), vars.end(), name);
    if (it == vars.end())
      throw DataError("checkpoint: normalization names unknown variable '" +
                      name + "'");
    out[static_cast<std::size_t>(it - vars.begin())] = {
        e.at("mean").get<double>(), e.at("stddev").get<double>()};
  }
  return out;
}

json crop_json(const CropIndex& ci) {
  return {{"lat_start", ci.lat_start},
          {"lat_count", ci.lat_count},
          {"lon_cols", ci.lon_cols},
          {"wrapped", ci.wrapped}};
}

CropIndex crop_from_json(const json& j) {
  CropIndex ci;
  ci.lat_start = j.at("lat_start").get<std::int64_t>();
  ci.lat_count = j.at("lat_count").get<std::int64_t>();
  ci.lon_cols = j.at("lon_cols").get<std::vector<std::int64_t>>();
  ci.wrapped = j.at("wrapped").get<bool>();
  return ci;
}

std::string file_sha12(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return sha256_hex(ss.str()).substr(0, 12);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path);
  f << text;
}

void write_log(const std::string& dir, const std::vector<std::string>& lines,
               const History& hist, double wall_ms) {
  std::ostringstream os;
  for (const auto& l : lines) os << l << "\n";
  os << "best_epoch " << hist.best_epoch << " best_val_loss "
     << hist.best_val_loss << (hist.early_stopped ? " (early stop)" : "")
     << "\n";
  write_text(dir + "/train.log", os.str());
  json res;
  res["peak_bytes"] = hist.peak_bytes;
  res["trainable_parameters"] = hist.trainable_count;
  res["wall_ms"] = wall_ms;
  write_text(dir + "/resources.json", res.dump(2) + "\n");
}

// --- gen-data ---

int cmd_gen_data(const std::string& config_path, const CLI::App* cmd,
                 std::string out, double grid_deg, SynthConfig synth) {
  json cfg = config_path.empty() ? json::object()
                                 : load_config_file(config_path, "gen-data");
  merge_key(cmd, "--out", cfg, "out", out);
  merge_key(cmd, "--grid-deg", cfg, "grid_deg", grid_deg);
  merge_key(cmd, "--n-steps", cfg, "n_steps", synth.n_steps);
  merge_key(cmd, "--step-hours", cfg, "step_hours", synth.step_hours);
  merge_key(cmd, "--start-year", cfg, "start_year", synth.start_year);
  merge_key(cmd, "--variables", cfg, "variables", synth.variables);
  merge_key(cmd, "--advect-cells", cfg, "advect_cells", synth.advect_cells);
  merge_key(cmd, "--diffusion", cfg, "diffusion", synth.diffusion);
  merge_key(cmd, "--noise", cfg, "noise", synth.noise);
  std::int64_t seed = static_cast<std::int64_t>(synth.seed);
  merge_key(cmd, "--seed", cfg, "seed", seed);
  synth.seed = static_cast<std::uint64_t>(seed);
  if (out.empty()) throw ConfigError("gen-data: --out is required");

  json resolved;
  resolved["out"] = out;
  resolved["grid_deg"] = grid_deg;
  resolved["n_steps"] = synth.n_steps;
  resolved["step_hours"] = synth.step_hours;
  resolved["start_year"] = synth.start_year;
  resolved["variables"] = synth.variables;
  resolved["advect_cells"] = synth.advect_cells;
  resolved["diffusion"] = synth.diffusion;
  resolved["noise"] = synth.noise;
  resolved["seed"] = seed;
  validate_config("gen-data", resolved, true);

  GridSpec grid = GridSpec::from_resolution(grid_deg);
  Dataset ds = synth_generate(grid, synth);
  fs::create_directories(out);
  write_dataset(ds, out);
  write_text(out + "/gen_manifest.json",
             json{{"tool_version", kVersion},
                  {"config", resolved},
                  {"config_sha256", sha256_hex(resolved.dump())}}
                     .dump(2) +
                 "\n");
  std::cout << "wrote " << ds.n_time() << " steps of "
            << synth.variables.size() << " variables at " << grid.n_lat << "x"
            << grid.n_lon << " to " << out << "\n";
  return 0;
}

// --- pretrain ---

struct TrainFlags {
  double lr = 1e-3;
  std::int64_t batch_size = 8;
  std::int64_t max_epochs = 20;
  std::int64_t patience = 3;
  std::int64_t seed = 0;
  std::vector<int> leads = {12, 24, 36, 48, 60, 72};
  std::int64_t max_steps = 0;
  std::int64_t max_val_windows = 64;
  std::vector<int> train_years = {2001};
  std::vector<int> val_years = {2002};
  std::vector<int> test_years = {2003};
};

void add_train_flags(CLI::App* cmd, TrainFlags& f) {
  cmd->add_option("--lr", f.lr, "learning rate");
  cmd->add_option("--batch-size", f.batch_size, "windows per optimizer step");
  cmd->add_option("--max-epochs", f.max_epochs, "epoch cap");
  cmd->add_option("--patience", f.patience,
                  "epochs without val improvement before stopping");
  cmd->add_option("--seed", f.seed, "run seed");
  cmd->add_option("--leads,--lead", f.leads, "lead times in hours")->delimiter(',');
  cmd->add_option("--max-steps-per-epoch", f.max_steps, "0 = every batch");
  cmd->add_option("--max-val-windows", f.max_val_windows, "0 = all");
  cmd->add_option("--train-years", f.train_years, "calendar years for training")->delimiter(',');
  cmd->add_option("--val-years", f.val_years, "calendar years for validation")->delimiter(',');
  cmd->add_option("--test-years", f.test_years, "calendar years for testing")->delimiter(',');
}

void merge_train_flags(const CLI::App* cmd, const json& cfg, TrainFlags& f) {
  merge_key(cmd, "--lr", cfg, "lr", f.lr);
  merge_key(cmd, "--batch-size", cfg, "batch_size", f.batch_size);
  merge_key(cmd, "--max-epochs", cfg, "max_epochs", f.max_epochs);
  merge_key(cmd, "--patience", cfg, "patience", f.patience);
  merge_key(cmd, "--seed", cfg, "seed", f.seed);
  merge_key(cmd, "--leads", cfg, "leads", f.leads);
  merge_key(cmd, "--max-steps-per-epoch", cfg, "max_steps_per_epoch", f.max_steps);
  merge_key(cmd, "--max-val-windows", cfg, "max_val_windows", f.max_val_windows);
  merge_key(cmd, "--train-years", cfg, "train_years", f.train_years);
  merge_key(cmd, "--val-years", cfg, "val_years", f.val_years);
  merge_key(cmd, "--test-years", cfg, "test_years", f.test_years);
}

json train_flags_json(const TrainFlags& f) {
  json j;
  j["lr"] = f.lr;
  j["batch_size"] = f.batch_size;
  j["max_epochs"] = f.max_epochs;
  j["patience"] = f.patience;
  j["seed"] = f.seed;
  j["leads"] = f.leads;
  j["max_steps_per_epoch"] = f.max_steps;
  j["max_val_windows"] = f.max_val_windows;
  j["train_years"] = f.train_years;
  j["val_years"] = f.val_years;
  j["test_years"] = f.test_years;
  return j;
}

TrainConfig to_train_config(const TrainFlags& f) {
  TrainConfig c;
  c.learning_rate = f.lr;
  c.batch_size = f.batch_size;
  c.max_epochs = f.max_epochs;
  c.patience = f.patience;
  c.seed = static_cast<std::uint64_t>(f.seed);
  c.lead_times = f.leads;
  c.max_steps_per_epoch = f.max_steps;
  c.max_val_windows = f.max_val_windows;
  return c;
}

Dataset with_normalization(const Dataset& ds, const std::vector<VarStats>& st) {
  DatasetManifest m = ds.manifest();
  m.normalization = st;
  std::vector<std::vector<float>> frames;
  for (std::size_t v = 0; v < m.variables.size(); ++v)
    frames.push_back(ds.raw(static_cast<std::int64_t>(v)));
  return Dataset(m, std::move(frames));
}

int cmd_pretrain(const std::string& config_path, const CLI::App* cmd,
                 std::string data, std::string runs, std::string preset,
                 ModelConfig mc, std::string attention, TrainFlags tf) {
  json cfg = config_path.empty() ? json::object()
                                 : load_config_file(config_path, "pretrain");
  merge_key(cmd, "--data", cfg, "data", data);
  merge_key(cmd, "--runs", cfg, "runs", runs);
  merge_key(cmd, "--preset", cfg, "preset", preset);
  merge_key(cmd, "--embed-dim", cfg, "embed_dim", mc.embed_dim);
  merge_key(cmd, "--depth", cfg, "depth", mc.depth);
  merge_key(cmd, "--heads", cfg, "heads", mc.n_heads);
  merge_key(cmd, "--patch", cfg, "patch", mc.patch);
  merge_key(cmd, "--attention", cfg, "attention", attention);
  merge_key(cmd, "--tile-k", cfg, "tile_k", mc.tile_k);
  merge_train_flags(cmd, cfg, tf);

  if (preset == "large") {
    // scaled-up defaults; explicit flags or config-file keys still win
    auto unset = [&](const std::string& flag, const std::string& key) {
      return cmd->count(flag) == 0 && !cfg.contains(key);
    };
    if (unset("--embed-dim", "embed_dim")) mc.embed_dim = 1024;
    if (unset("--depth", "depth")) mc.depth = 8;
    if (unset("--heads", "heads")) mc.n_heads = 16;
    if (unset("--lr", "lr")) tf.lr = 1e-5;
  } else if (preset != "desk") {
    throw ConfigError("pretrain: unknown preset '" + preset + "'");
  }
  mc.kernel = attention == "naive" ? AttentionKernel::naive
                                   : AttentionKernel::streaming;
  if (attention != "naive" && attention != "streaming")
    throw ConfigError("pretrain: attention must be naive or streaming");

  Dataset ds = read_dataset(data);
  mc.n_lat = ds.manifest().grid.n_lat;
  mc.n_lon = ds.manifest().grid.n_lon;
  mc.input_variables = ds.manifest().variables;
  mc.target_variables = ds.manifest().variables;
  mc.lead_times = tf.leads;
  mc.validate();

  json resolved;
  resolved["data"] = data;
  resolved["runs"] = runs;
  resolved["preset"] = preset;
  resolved["embed_dim"] = mc.embed_dim;
  resolved["depth"] = mc.depth;
  resolved["heads"] = mc.n_heads;
  resolved["patch"] = mc.patch;
  resolved["attention"] = attention;
  resolved["tile_k"] = mc.tile_k;
  resolved.update(train_flags_json(tf));
  std::string dir = write_run_manifest(runs, "pretrain", resolved);

  SplitIndices splits = split_by_years(
      ds.manifest(), split_spec(tf.train_years, tf.val_years, tf.test_years));
  std::vector<VarStats> stats = compute_normalization(ds, splits.train);
  Dataset train_ds = with_normalization(ds, stats);

  ForecastModel model(mc, static_cast<std::uint64_t>(tf.seed));
  TrainConfig tc = to_train_config(tf);
  std::vector<std::string> log;
  auto t0 = std::chrono::steady_clock::now();
  TrainResult r = train(std::move(model), train_ds, splits, tc, nullptr, &log);
  double wall = std::chrono::duration<double, std::milli>(
                    std::chrono::steady_clock::now() - t0)
                    .count();

  fs::create_directories(dir + "/checkpoints");
  json extra;
  extra["normalization"] = stats_json(train_ds.manifest().variables, stats);
  extra["train_years"] = tf.train_years;
  extra["val_years"] = tf.val_years;
  extra["test_years"] = tf.test_years;
  extra["mode"] = "pretrain";
  extra["seed"] = tf.seed;
  save_checkpoint(r.model, dir + "/checkpoints/model.ckpt", extra.dump());
  write_log(dir, log, r.history, wall);
  std::cout << "pretrain " << dir << " best_val_loss " << r.history.best_val_loss
            << " trainable " << r.history.trainable_count << "\n";
  return 0;
}

// --- shared checkpoint plumbing ---

struct LoadedRun {
  ForecastModel model;
  json extra;
  std::shared_ptr<AdapterSet> adapter;  // present for adapter checkpoints
};

LoadedRun load_run_checkpoint(const std::string& path) {
  LoadedCheckpoint ck = load_checkpoint(path);
  LoadedRun run{std::move(ck.model), json::parse(ck.extra_json), nullptr};
  if (run.extra.contains("adapter_file")) {
    fs::path ap = fs::path(path).parent_path() /
                  run.extra.at("adapter_file").get<std::string>();
    run.adapter = load_adapter(ap.string(), run.model);
    run.model.freeze_all();
    run.model.set_adapter(run.adapter);
  }
  return run;
}

// --- finetune ---

int cmd_finetune(const std::string& config_path, const CLI::App* cmd,
                 std::string data, std::string base, std::string runs,
                 std::string region, std::string mode_s, std::int64_t rank,
                 std::string targets_s, double alpha, bool train_head,
                 std::vector<std::string> tag_strings, TrainFlags tf) {
  json cfg = config_path.empty() ? json::object()
                                 : load_config_file(config_path, "finetune");
  merge_key(cmd, "--data", cfg, "data", data);
  merge_key(cmd, "--base", cfg, "base", base);
  merge_key(cmd, "--runs", cfg, "runs", runs);
  merge_key(cmd, "--region", cfg, "region", region);
  merge_key(cmd, "--mode", cfg, "mode", mode_s);
  merge_key(cmd, "--rank", cfg, "rank", rank);
  merge_key(cmd, "--targets", cfg, "targets", targets_s);
  merge_key(cmd, "--alpha", cfg, "alpha", alpha);
  merge_key(cmd, "--train-head", cfg, "train_head", train_head);
  merge_key(cmd, "--tags", cfg, "tags", tag_strings);
  merge_train_flags(cmd, cfg, tf);

  json resolved;
  resolved["data"] = data;
  resolved["base"] = base;
  resolved["runs"] = runs;
  resolved["region"] = region;
  resolved["mode"] = mode_s;
  resolved["rank"] = rank;
  resolved["targets"] = targets_s;
  resolved["alpha"] = alpha;
  resolved["train_head"] = train_head;
  resolved["tags"] = tag_strings;
  resolved.update(train_flags_json(tf));
  std::string dir = write_run_manifest(runs, "finetune", resolved);

  LoadedRun run = load_run_checkpoint(base);
  if (run.adapter)
    throw ConfigError("finetune: base checkpoint already carries an adapter");
  Dataset ds = read_dataset(data);
  const ModelConfig& mc = run.model.config();
  if (ds.manifest().grid.n_lat != mc.n_lat ||
      ds.manifest().grid.n_lon != mc.n_lon)
    throw RegionError("finetune: dataset grid does not match the base model");
  std::vector<VarStats> stats =
      stats_from_json(run.extra.at("normalization"), ds.manifest().variables);

  RegionBox box = parse_region(region);
  CropIndex aligned =
      patch_aligned(region_indices(ds.manifest().grid, box), ds.manifest().grid,
                    mc.patch);
  Dataset regional = with_normalization(crop_dataset(ds, aligned), stats);
  PatchMap pm = run.model.region_map(aligned);
  SplitIndices splits =
      split_by_years(regional.manifest(),
                     split_spec(tf.train_years, tf.val_years, tf.test_years));

  TrainConfig tc = to_train_config(tf);
  tc.mode = train_mode_from_string(mode_s);
  tc.adapter.rank = rank;
  tc.adapter.alpha = alpha;
  tc.adapter.train_head = train_head;
  tc.adapter.targets = target_set_from_string(targets_s);
  tc.adapter.seed = static_cast<std::uint64_t>(tf.seed) + 101;
  for (const auto& ts : tag_strings) {
    std::stringstream ss(ts);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, ',')) parts.push_back(part);
    if (parts.size() != 5)
      throw ConfigError("finetune: each tag set needs 5 entries, got '" + ts +
                        "'");
    SupportTags t;
    t.u = support_tag_from_string(parts[0]);
    t.v = support_tag_from_string(parts[1]);
    t.x = support_tag_from_string(parts[2]);
    t.y = support_tag_from_string(parts[3]);
    t.z = support_tag_from_string(parts[4]);
    tc.adapter.tags.push_back(t);
  }

  std::vector<std::string> log;
  auto t0 = std::chrono::steady_clock::now();
  TrainResult r = finetune_regional(run.model, regional, splits, tc, pm, &log);
  double wall = std::chrono::duration<double, std::milli>(
                    std::chrono::steady_clock::now() - t0)
                    .count();

  fs::create_directories(dir + "/checkpoints");
  json extra;
  extra["normalization"] = run.extra.at("normalization");
  extra["train_years"] = tf.train_years;
  extra["val_years"] = tf.val_years;
  extra["test_years"] = tf.test_years;
  extra["mode"] = mode_s;
  extra["rank"] = rank;
  extra["targets"] = targets_s;
  extra["seed"] = tf.seed;
  extra["region"] = region;
  extra["aligned_crop"] = crop_json(aligned);
  if (tc.mode != TrainMode::fft) {
    save_adapter(*std::static_pointer_cast<AdapterSet>(r.model.adapter()),
                 dir + "/checkpoints/adapter.bin");
    extra["adapter_file"] = "adapter.bin";
  }
  save_checkpoint(r.model, dir + "/checkpoints/model.ckpt", extra.dump());
  write_log(dir, log, r.history, wall);
  std::cout << "finetune " << dir << " mode " << mode_s << " best_val_loss "
            << r.history.best_val_loss << " trainable "
            << r.history.trainable_count << "\n";
  return 0;
}

// --- search ---

int cmd_search(const std::string& config_path, const CLI::App* cmd,
               std::string data, std::string base, std::string runs,
               std::string region, std::int64_t rank, std::int64_t population,
               std::int64_t budget, std::int64_t tournament, double p_mutation,
               std::int64_t steps, TrainFlags tf) {
  json cfg = config_path.empty() ? json::object()
                                 : load_config_file(config_path, "search");
  merge_key(cmd, "--data", cfg, "data", data);
  merge_key(cmd, "--base", cfg, "base", base);
  merge_key(cmd, "--runs", cfg, "runs", runs);
  merge_key(cmd, "--region", cfg, "region", region);
  merge_key(cmd, "--rank", cfg, "rank", rank);
  merge_key(cmd, "--population", cfg, "population", population);
  merge_key(cmd, "--budget", cfg, "budget", budget);
  merge_key(cmd, "--tournament", cfg, "tournament", tournament);
  merge_key(cmd, "--p-mutation", cfg, "p_mutation", p_mutation);
  merge_key(cmd, "--steps", cfg, "steps", steps);
  merge_train_flags(cmd, cfg, tf);

  json resolved;
  resolved["data"] = data;
  resolved["base"] = base;
  resolved["runs"] = runs;
  resolved["region"] = region;
  resolved["rank"] = rank;
  resolved["population"] = population;
  resolved["budget"] = budget;
  resolved["tournament"] = tournament;
  resolved["p_mutation"] = p_mutation;
  resolved["steps"] = steps;
  resolved["seed"] = tf.seed;
  resolved["leads"] = tf.leads;
  resolved["train_years"] = tf.train_years;
  resolved["val_years"] = tf.val_years;
  resolved["test_years"] = tf.test_years;
  std::string dir = write_run_manifest(runs, "search", resolved);

  LoadedRun run = load_run_checkpoint(base);
  Dataset ds = read_dataset(data);
  std::vector<VarStats> stats =
      stats_from_json(run.extra.at("normalization"), ds.manifest().variables);
  RegionBox box = parse_region(region);
  CropIndex aligned = patch_aligned(region_indices(ds.manifest().grid, box),
                                    ds.manifest().grid,
                                    run.model.config().patch);
  Dataset regional = with_normalization(crop_dataset(ds, aligned), stats);
  PatchMap pm = run.model.region_map(aligned);
  SplitIndices splits =
      split_by_years(regional.manifest(),
                     split_spec(tf.train_years, tf.val_years, tf.test_years));

  TrainConfig tc = to_train_config(tf);
  tc.mode = TrainMode::glora;
  tc.adapter.rank = rank;
  tc.adapter.seed = static_cast<std::uint64_t>(tf.seed) + 101;
  tc.max_epochs = 1;
  tc.max_steps_per_epoch = steps;

  SearchSpace space;
  space.layer_paths = target_paths(run.model.config(), TargetSet::attention);
  space.rank = rank;
  SearchConfig sc;
  sc.population = population;
  sc.budget = budget;
  sc.tournament = tournament;
  sc.p_mutation = p_mutation;
  sc.seed = static_cast<std::uint64_t>(tf.seed);

  auto fitness = make_training_fitness(run.model, regional, splits, tc, &pm);
  SearchGenome best = evolutionary_search(space, sc, fitness);

  json out;
  out["fitness"] = best.fitness;
  json tags = json::array();
  for (const auto& t : best.tags)
    tags.push_back({{"u", to_string(t.u)},
                    {"v", to_string(t.v)},
                    {"x", to_string(t.x)},
                    {"y", to_string(t.y)},
                    {"z", to_string(t.z)}});
  out["tags"] = tags;
  out["layers"] = space.layer_paths;
  write_text(dir + "/genome.json", out.dump(2) + "\n");
  std::cout << "search " << dir << " best fitness " << best.fitness << "\n";
  return 0;
}

// --- evaluate ---

int cmd_evaluate(const std::string& config_path, const CLI::App* cmd,
                 std::string data, std::string checkpoint, bool persistence,
                 std::string runs, std::string region, std::vector<int> leads,
                 std::int64_t max_windows, bool maps,
                 std::vector<int> train_years, std::vector<int> val_years,
                 std::vector<int> test_years) {
  json cfg = config_path.empty() ? json::object()
                                 : load_config_file(config_path, "evaluate");
  merge_key(cmd, "--data", cfg, "data", data);
  merge_key(cmd, "--checkpoint", cfg, "checkpoint", checkpoint);
  merge_key(cmd, "--persistence", cfg, "persistence", persistence);
  merge_key(cmd, "--runs", cfg, "runs", runs);
  merge_key(cmd, "--region", cfg, "region", region);
  merge_key(cmd, "--leads", cfg, "leads", leads);
  merge_key(cmd, "--max-windows", cfg, "max_windows", max_windows);
  merge_key(cmd, "--maps", cfg, "maps", maps);
  merge_key(cmd, "--train-years", cfg, "train_years", train_years);
  merge_key(cmd, "--val-years", cfg, "val_years", val_years);
  merge_key(cmd, "--test-years", cfg, "test_years", test_years);
  if (checkpoint.empty() && !persistence)
    throw ConfigError("evaluate: pass --checkpoint or --persistence");

  json resolved;
  resolved["data"] = data;
  if (!checkpoint.empty()) resolved["checkpoint"] = checkpoint;
  resolved["persistence"] = persistence;
  resolved["runs"] = runs;
  if (!region.empty()) resolved["region"] = region;
  resolved["leads"] = leads;
  resolved["max_windows"] = max_windows;
  resolved["maps"] = maps;
  resolved["train_years"] = train_years;
  resolved["val_years"] = val_years;
  resolved["test_years"] = test_years;
  std::string dir = write_run_manifest(runs, "evaluate", resolved);

  Dataset full = read_dataset(data);
  EvalOptions opt;
  opt.leads = leads;
  opt.max_windows = max_windows;

  Dataset ds;
  Forecaster fc;
  PatchMap pm;
  std::string ckpt_id = "persistence";
  LoadedRun run;
  if (persistence) {
    SplitIndices pre =
        split_by_years(full.manifest(), split_spec(train_years, val_years, test_years));
    ds = with_normalization(full, compute_normalization(full, pre.train));
    fc = persistence_forecaster();
    if (!region.empty()) opt.region = parse_region(region);
  } else {
    run = load_run_checkpoint(checkpoint);
    ckpt_id = file_sha12(checkpoint);
    std::vector<VarStats> stats =
        stats_from_json(run.extra.at("normalization"), full.manifest().variables);
    if (run.extra.contains("aligned_crop")) {
      // a regional checkpoint runs on its own cropped grid
      CropIndex aligned = crop_from_json(run.extra.at("aligned_crop"));
      ds = with_normalization(crop_dataset(full, aligned), stats);
      pm = run.model.region_map(aligned);
      fc = model_forecaster(run.model, &pm);
      if (!region.empty())
        throw ConfigError(
            "evaluate: --region does not apply to a regional checkpoint; its "
            "grid is already cropped");
    } else {
      ds = with_normalization(full, stats);
      fc = model_forecaster(run.model, nullptr);
      if (!region.empty()) opt.region = parse_region(region);
    }
  }

  SplitIndices splits = split_by_years(
      ds.manifest(), split_spec(train_years, val_years, test_years));
  Climatology clim =
      compute_climatology(ds, splits.train, ds.manifest().variables);
  MetricsReport report = evaluate(fc, ds, splits.test, clim, opt);
  report.checkpoint_id = ckpt_id;
  if (!region.empty())
    report.region = region;
  else if (!persistence && run.extra.contains("region"))
    report.region = run.extra.at("region").get<std::string>();
  else
    report.region = "globe";

  write_text(dir + "/metrics.json", report.to_json() + "\n");
  write_text(dir + "/metrics.csv", report.to_csv());

  // sidecar for `report`: how the evaluated checkpoint was produced
  json info;
  info["mode"] = persistence ? "persistence"
                             : run.extra.value("mode", std::string("pretrain"));
  info["rank"] = persistence ? 0 : run.extra.value("rank", std::int64_t{0});
  info["targets"] =
      persistence ? "" : run.extra.value("targets", std::string(""));
  write_text(dir + "/run_info.json", info.dump(2) + "\n");

  if (maps) {
    fs::create_directories(dir + "/maps");
    // mean bias over the first lead's test windows, one map per variable
    int lead = leads.front();
    auto windows = windows_in_split(ds.manifest(), splits.test, lead);
    if (opt.max_windows > 0 &&
        static_cast<std::int64_t>(windows.size()) > opt.max_windows)
      windows.resize(static_cast<std::size_t>(opt.max_windows));
    const auto& vars = ds.manifest().variables;
    std::int64_t h = ds.manifest().grid.n_lat, w = ds.manifest().grid.n_lon;
    std::vector<double> acc(static_cast<std::size_t>(
                                static_cast<std::int64_t>(vars.size()) * h * w),
                            0.0);
    for (const auto& win : windows) {
      Tensor input = normalized_state(ds, win.t_in, vars);
      Tensor pred = fc(input, lead);
      // denormalize and subtract truth
      const auto& stats = *ds.manifest().normalization;
      const double* pp = pred.data();
      Tensor truth = ds.state(win.t_target, vars);
      const double* pt = truth.data();
      for (std::size_t v = 0; v < vars.size(); ++v) {
        const VarStats& s = stats[v];
        for (std::int64_t i = 0; i < h * w; ++i) {
          std::size_t off = v * static_cast<std::size_t>(h * w) +
                            static_cast<std::size_t>(i);
          acc[off] += (pp[off] * s.stddev + s.mean) - pt[off];
        }
      }
    }
    for (double& v : acc) v /= static_cast<double>(windows.size());
    Tensor bias = Tensor::from_values(
        {static_cast<std::int64_t>(vars.size()), h, w}, std::move(acc));
    for (std::size_t v = 0; v < vars.size(); ++v) {
      Tensor field = Tensor::from_values(
          {h, w},
          std::vector<double>(
              bias.data() + static_cast<std::int64_t>(v) * h * w,
              bias.data() + static_cast<std::int64_t>(v + 1) * h * w));
      double vmax = (*ds.manifest().normalization)[v].stddev;
      write_ppm_map(field, dir + "/maps/" + vars[v] + "_bias.ppm",
                    vmax > 0 ? vmax : 1.0);
      write_raw_field(field, dir + "/maps/" + vars[v] + "_bias.f32");
    }
  }

  std::cout << "evaluate " << dir << "\n" << report.to_csv();
  return 0;
}

// --- bench-attention ---

int cmd_bench_attention(std::vector<std::int64_t> sizes,
                        std::vector<std::int64_t> tiles, std::int64_t head_dim,
                        std::int64_t iters, std::string out) {
  std::ostringstream os;
  os << "n,tile_k,kernel,ms_per_call\n";
  Rng rng(11);
  for (std::int64_t n : sizes) {
    Tensor q = Tensor::randn({2, n, head_dim}, rng);
    Tensor k = Tensor::randn({2, n, head_dim}, rng);
    Tensor v = Tensor::randn({2, n, head_dim}, rng);
    AttentionInputs in{q, k, v, -1.0};
    auto time_one = [&](auto&& fn) {
      auto t0 = std::chrono::steady_clock::now();
      for (std::int64_t i = 0; i < iters; ++i) fn();
      return std::chrono::duration<double, std::milli>(
                 std::chrono::steady_clock::now() - t0)
                 .count() /
             static_cast<double>(iters);
    };
    double naive_ms = time_one([&] { naive_attention(in); });
    os << n << ",0,naive," << naive_ms << "\n";
    for (std::int64_t t : tiles) {
      double ms = time_one([&] { streaming_attention(in, t); });
      os << n << "," << t << ",streaming," << ms << "\n";
    }
  }
  if (out.empty())
    std::cout << os.str();
  else
    write_text(out, os.str());
  return 0;
}

// --- report ---

int cmd_report(std::string runs, std::string out) {
  json rows = json::array();
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(runs))
    if (e.is_directory() && fs::exists(e.path() / "metrics.json"))
      dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  for (const auto& d : dirs) {
    std::ifstream mf(d / "metrics.json");
    std::ostringstream ss;
    ss << mf.rdbuf();
    MetricsReport r = MetricsReport::from_json(ss.str());
    json meta = json::object();
    if (fs::exists(d / "run_info.json")) {
      std::ifstream cf(d / "run_info.json");
      meta = json::parse(cf);
    }
    for (const auto& var : r.variables)
      for (int lead : r.leads) {
        const VarLeadMetrics& vm = r.at(var, lead);
        json row;
        row["run"] = d.filename().string();
        row["checkpoint"] = r.checkpoint_id;
        row["mode"] = meta.value("mode", "");
        row["rank"] = meta.value("rank", std::int64_t{0});
        row["targets"] = meta.value("targets", "");
        row["region"] = r.region;
        row["variable"] = var;
        row["lead_hours"] = lead;
        row["rmse"] = vm.rmse;
        if (vm.acc)
          row["acc"] = *vm.acc;
        else
          row["acc"] = nullptr;
        rows.push_back(row);
      }
  }
  fs::create_directories(out);
  write_text(out + "/report.json", rows.dump(2) + "\n");
  std::ostringstream csv;
  csv << "run,checkpoint,mode,rank,targets,region,variable,lead_hours,rmse,acc\n";
  csv << std::setprecision(17);
  for (const auto& row : rows) {
    csv << row["run"].get<std::string>() << ","
        << row["checkpoint"].get<std::string>() << ","
        << row["mode"].get<std::string>() << ","
        << row["rank"].get<std::int64_t>() << ","
        << row["targets"].get<std::string>() << ","
        << row["region"].get<std::string>() << ","
        << row["variable"].get<std::string>() << ","
        << row["lead_hours"].get<int>() << "," << row["rmse"].get<double>()
        << ",";
    if (!row["acc"].is_null()) csv << row["acc"].get<double>();
    csv << "\n";
  }
  write_text(out + "/report.csv", csv.str());
  std::cout << "report: " << rows.size() << " rows from " << dirs.size()
            << " runs -> " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"variable-tokenized transformer forecaster with regional "
               "adapter fine-tuning"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "write a synthetic dataset");
  std::string gen_config, gen_out;
  double gen_grid_deg = 11.25;
  SynthConfig synth;
  synth.variables = default_variables();
  std::int64_t gen_seed = 1;
  gen->add_option("--config", gen_config, "JSON config file");
  gen->add_option("--out", gen_out, "output dataset directory");
  gen->add_option("--grid-deg", gen_grid_deg, "grid resolution in degrees");
  gen->add_option("--n-steps", synth.n_steps, "number of time steps");
  gen->add_option("--step-hours", synth.step_hours, "hours between steps");
  gen->add_option("--start-year", synth.start_year, "first timestamp's year");
  gen->add_option("--variables", synth.variables, "variable names")->delimiter(',');
  gen->add_option("--advect-cells", synth.advect_cells,
                  "equator cells advected per step");
  gen->add_option("--diffusion", synth.diffusion, "diffusion strength");
  gen->add_option("--noise", synth.noise, "per-step noise stddev");
  gen->add_option("--seed", gen_seed, "generator seed");

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "train the global model");
  std::string pre_config, pre_data, pre_runs = "runs", pre_preset = "desk",
                          pre_attention = "streaming";
  ModelConfig pre_mc;
  TrainFlags pre_tf;
  pre->add_option("--config", pre_config, "JSON config file");
  pre->add_option("--data", pre_data, "dataset directory");
  pre->add_option("--runs", pre_runs, "runs root directory");
  pre->add_option("--preset", pre_preset, "desk or large");
  pre->add_option("--embed-dim", pre_mc.embed_dim, "embedding width");
  pre->add_option("--depth", pre_mc.depth, "encoder blocks");
  pre->add_option("--heads", pre_mc.n_heads, "attention heads");
  pre->add_option("--patch", pre_mc.patch, "patch size in cells");
  pre->add_option("--attention", pre_attention, "naive or streaming");
  pre->add_option("--tile-k", pre_mc.tile_k, "streaming attention tile width");
  add_train_flags(pre, pre_tf);

  // finetune
  auto* fin = app.add_subcommand("finetune", "regional fine-tune from a base");
  std::string fin_config, fin_data, fin_base, fin_runs = "runs",
                          fin_region = "mena", fin_mode = "lora",
                          fin_targets = "attention";
  std::int64_t fin_rank = 16;
  double fin_alpha = -1.0;
  bool fin_train_head = true;
  std::vector<std::string> fin_tags;
  TrainFlags fin_tf;
  fin->add_option("--config", fin_config, "JSON config file");
  fin->add_option("--data", fin_data, "full-grid dataset directory");
  fin->add_option("--base", fin_base, "pretrained checkpoint");
  fin->add_option("--runs", fin_runs, "runs root directory");
  fin->add_option("--region", fin_region,
                  "preset name or lat_min,lat_max,lon_min,lon_max");
  fin->add_option("--mode", fin_mode, "fft, lora, reslora, or glora");
  fin->add_option("--rank", fin_rank, "adapter rank");
  fin->add_option("--targets", fin_targets,
                  "attention, attention_fc1, or attention_fc1fc2");
  fin->add_option("--alpha", fin_alpha, "adapter scaling numerator (<0: rank)");
  fin->add_flag("--train-head,!--freeze-head", fin_train_head,
                "keep the prediction head trainable");
  fin->add_option("--tags", fin_tags,
                  "per-layer support tags u,v,x,y,z (glora only)")->delimiter(',');
  add_train_flags(fin, fin_tf);

  // search
  auto* sea = app.add_subcommand("search",
                                 "evolutionary search over support structures");
  std::string sea_config, sea_data, sea_base, sea_runs = "runs",
                          sea_region = "mena";
  std::int64_t sea_rank = 4, sea_population = 8, sea_budget = 24,
               sea_tournament = 2, sea_steps = 25;
  double sea_pmut = 0.15;
  TrainFlags sea_tf;
  sea->add_option("--config", sea_config, "JSON config file");
  sea->add_option("--data", sea_data, "full-grid dataset directory");
  sea->add_option("--base", sea_base, "pretrained checkpoint");
  sea->add_option("--runs", sea_runs, "runs root directory");
  sea->add_option("--region", sea_region, "region to fine-tune on");
  sea->add_option("--rank", sea_rank, "low-rank support rank");
  sea->add_option("--population", sea_population, "population size");
  sea->add_option("--budget", sea_budget, "unique candidate evaluations");
  sea->add_option("--tournament", sea_tournament, "tournament size");
  sea->add_option("--p-mutation", sea_pmut, "per-gene mutation probability");
  sea->add_option("--steps", sea_steps, "training steps per candidate");
  add_train_flags(sea, sea_tf);

  // evaluate
  auto* eva = app.add_subcommand("evaluate", "score a checkpoint on the test split");
  std::string eva_config, eva_data, eva_checkpoint, eva_runs = "runs",
                          eva_region;
  bool eva_persistence = false, eva_maps = false;
  std::vector<int> eva_leads = {72};
  std::int64_t eva_max_windows = 0;
  std::vector<int> eva_train_years = {2001}, eva_val_years = {2002},
                   eva_test_years = {2003};
  eva->add_option("--config", eva_config, "JSON config file");
  eva->add_option("--data", eva_data, "dataset directory");
  eva->add_option("--checkpoint", eva_checkpoint, "checkpoint to evaluate");
  eva->add_flag("--persistence", eva_persistence,
                "score the persistence baseline instead of a checkpoint");
  eva->add_option("--runs", eva_runs, "runs root directory");
  eva->add_option("--region", eva_region, "crop forecasts to a region");
  eva->add_option("--leads,--lead", eva_leads, "lead times in hours")->delimiter(',');
  eva->add_option("--max-windows", eva_max_windows, "0 = all test windows");
  eva->add_flag("--maps", eva_maps, "write per-variable bias maps");
  eva->add_option("--train-years", eva_train_years, "climatology years")->delimiter(',');
  eva->add_option("--val-years", eva_val_years, "validation years")->delimiter(',');
  eva->add_option("--test-years", eva_test_years, "test years")->delimiter(',');

  // bench-attention
  auto* ben = app.add_subcommand("bench-attention",
                                 "time the attention kernels");
  std::vector<std::int64_t> ben_sizes = {64, 128, 256};
  std::vector<std::int64_t> ben_tiles = {16, 32, 64};
  std::int64_t ben_head_dim = 32, ben_iters = 3;
  std::string ben_out;
  ben->add_option("--sizes", ben_sizes, "sequence lengths")->delimiter(',');
  ben->add_option("--tiles", ben_tiles, "streaming tile widths")->delimiter(',');
  ben->add_option("--head-dim", ben_head_dim, "per-head width");
  ben->add_option("--iters", ben_iters, "repetitions per timing");
  ben->add_option("--out", ben_out, "CSV path (default stdout)");

  // report
  auto* rep = app.add_subcommand("report", "aggregate run metrics into tables");
  std::string rep_runs = "runs", rep_out = "report";
  rep->add_option("--runs", rep_runs, "runs root directory");
  rep->add_option("--out", rep_out, "output directory");

  // print-config-schema
  auto* sch = app.add_subcommand("print-config-schema",
                                 "print the JSON config schema");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed())
      return cmd_gen_data(gen_config, gen, gen_out, gen_grid_deg, [&] {
        synth.seed = static_cast<std::uint64_t>(gen_seed);
        return synth;
      }());
    if (pre->parsed())
      return cmd_pretrain(pre_config, pre, pre_data, pre_runs, pre_preset,
                          pre_mc, pre_attention, pre_tf);
    if (fin->parsed())
      return cmd_finetune(fin_config, fin, fin_data, fin_base, fin_runs,
                          fin_region, fin_mode, fin_rank, fin_targets,
                          fin_alpha, fin_train_head, fin_tags, fin_tf);
    if (sea->parsed())
      return cmd_search(sea_config, sea, sea_data, sea_base, sea_runs,
                        sea_region, sea_rank, sea_population, sea_budget,
                        sea_tournament, sea_pmut, sea_steps, sea_tf);
    if (eva->parsed())
      return cmd_evaluate(eva_config, eva, eva_data, eva_checkpoint,
                          eva_persistence, eva_runs, eva_region, eva_leads,
                          eva_max_windows, eva_maps, eva_train_years,
                          eva_val_years, eva_test_years);
    if (ben->parsed())
      return cmd_bench_attention(ben_sizes, ben_tiles, ben_head_dim, ben_iters,
                                 ben_out);
    if (rep->parsed()) return cmd_report(rep_runs, rep_out);
    if (sch->parsed()) {
      std::cout << schema_json().dump(2) << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
