#include "stratus/train.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

#include "stratus/memmeter.h"
#include "stratus/rng.h"
#include "stratus/tape.h"

namespace stratus {

std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::fft: return "fft";
    case TrainMode::lora: return "lora";
    case TrainMode::reslora: return "reslora";
    case TrainMode::glora: return "glora";
  }
  throw ConfigError("unknown train mode");
}

TrainMode train_mode_from_string(const std::string& s) {
  if (s == "fft") return TrainMode::fft;
  if (s == "lora") return TrainMode::lora;
  if (s == "reslora") return TrainMode::reslora;
  if (s == "glora") return TrainMode::glora;
  throw ConfigError("unknown train mode '" + s + "'");
}

void TrainConfig::validate() const {
  if (learning_rate <= 0) throw ConfigError("train: learning_rate must be > 0");
  if (patience < 1) throw ConfigError("train: patience must be >= 1");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (max_epochs < 1) throw ConfigError("train: max_epochs must be >= 1");
  if (lead_times.empty()) throw ConfigError("train: no lead times");
}

Tensor lat_weighted_mse(const Tensor& pred, const Tensor& target,
                        const LatWeights& weights) {
  if (pred.ndim() != 3 || pred.shape() != target.shape())
    throw ShapeError("lat_weighted_mse: pred " + shape_str(pred.shape()) +
                     " against target " + shape_str(target.shape()));
  std::int64_t h = pred.dim(1);
  if (static_cast<std::int64_t>(weights.w.size()) != h)
    throw ShapeError("lat_weighted_mse: " + std::to_string(weights.w.size()) +
                     " weights for " + std::to_string(h) + " rows");
  Tensor w = Tensor::from_values({1, h, 1}, std::vector<double>(weights.w));
  Tensor diff = sub(pred, target);
  return mean_all(mul(mul(diff, diff), expand(w, pred.shape())));
}

Tensor normalized_state(const Dataset& ds, std::int64_t t,
                        const std::vector<std::string>& vars) {
  const DatasetManifest& m = ds.manifest();
  if (!m.normalization)
    throw ConfigError("train: dataset has no normalization statistics");
  std::int64_t hw = ds.frame_size();
  std::vector<double> out;
  out.reserve(vars.size() * static_cast<std::size_t>(hw));
  for (const auto& name : vars) {
    std::int64_t vi = m.var_index(name);
    const VarStats& s = (*m.normalization)[static_cast<std::size_t>(vi)];
    const float* p = ds.raw(vi).data() + t * hw;
    for (std::int64_t i = 0; i < hw; ++i)
      out.push_back((static_cast<double>(p[i]) - s.mean) / s.stddev);
  }
  return Tensor::from_values(
      {static_cast<std::int64_t>(vars.size()), m.grid.n_lat, m.grid.n_lon},
      std::move(out));
}

Adam::Adam(double lr, double beta1, double beta2, double eps)
    : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

void Adam::step(const std::vector<ParamRef>& params,
                const std::map<std::string, Tensor>& grads) {
  ++t_;
  double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (const auto& ref : params) {
    auto git = grads.find(ref.path);
    if (git == grads.end()) continue;
    const Tensor& g = git->second;
    Tensor& p = *ref.slot;
    if (g.numel() != p.numel())
      throw ShapeError("adam: gradient for '" + ref.path + "' has " +
                       std::to_string(g.numel()) + " values, parameter has " +
                       std::to_string(p.numel()));
    auto mit = m_.find(ref.path);
    if (mit == m_.end()) {
      mit = m_.emplace(ref.path, Tensor::zeros({p.numel()})).first;
      v_.emplace(ref.path, Tensor::zeros({p.numel()}));
    }
    const double* pg = g.data();
    const double* pm = mit->second.data();
    const double* pv = v_.at(ref.path).data();
    const double* pp = p.data();
    std::int64_t n = p.numel();
    std::vector<double> nm(static_cast<std::size_t>(n)),
        nv(static_cast<std::size_t>(n)), np(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
      nm[static_cast<std::size_t>(i)] = b1_ * pm[i] + (1.0 - b1_) * pg[i];
      nv[static_cast<std::size_t>(i)] = b2_ * pv[i] + (1.0 - b2_) * pg[i] * pg[i];
      double mhat = nm[static_cast<std::size_t>(i)] / c1;
      double vhat = nv[static_cast<std::size_t>(i)] / c2;
      np[static_cast<std::size_t>(i)] = pp[i] - lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
    mit->second = Tensor::from_values({n}, std::move(nm));
    v_.at(ref.path) = Tensor::from_values({n}, std::move(nv));
    p = Tensor::from_values(p.shape(), std::move(np));
  }
}

namespace {

struct Sample {
  std::int64_t t_in, t_target;
  int lead_hours;
};

std::vector<Sample> gather_samples(const DatasetManifest& m,
                                   const std::vector<std::int64_t>& split,
                                   const std::vector<int>& leads) {
  std::vector<Sample> out;
  for (int lead : leads)
    for (const auto& w : windows_in_split(m, split, lead))
      out.push_back({w.t_in, w.t_target, w.lead_hours});
  return out;
}

std::vector<Sample> subsample(std::vector<Sample> v, std::int64_t cap) {
  if (cap <= 0 || static_cast<std::int64_t>(v.size()) <= cap) return v;
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(cap));
  double stride = static_cast<double>(v.size()) / static_cast<double>(cap);
  for (std::int64_t i = 0; i < cap; ++i)
    out.push_back(v[static_cast<std::size_t>(
        static_cast<double>(i) * stride)]);
  return out;
}

// parameter snapshot for best-checkpoint restore (tensor handles are cheap)
struct Snapshot {
  std::map<std::string, Tensor> values;
};

Snapshot take_snapshot(ForecastModel& m) {
  Snapshot s;
  for (const auto& ref : m.trainable_params()) s.values[ref.path] = *ref.slot;
  return s;
}

void restore_snapshot(ForecastModel& m, const Snapshot& s) {
  for (const auto& ref : m.trainable_params()) {
    auto it = s.values.find(ref.path);
    if (it != s.values.end()) *ref.slot = it->second;
  }
}

}  // namespace

TrainResult train(ForecastModel model, const Dataset& data,
                  const SplitIndices& splits, const TrainConfig& cfg,
                  const PatchMap* pm, std::vector<std::string>* log_lines) {
  cfg.validate();
  if (splits.train.empty()) throw DataError("train: empty training split");
  if (splits.val.empty()) throw DataError("train: empty validation split");

  const auto& vars = model.config().input_variables;
  std::vector<Sample> train_samples =
      gather_samples(data.manifest(), splits.train, cfg.lead_times);
  if (train_samples.empty())
    throw DataError("train: no training windows for the requested lead times");
  std::vector<Sample> val_samples = subsample(
      gather_samples(data.manifest(), splits.val, cfg.lead_times),
      cfg.max_val_windows);
  if (val_samples.empty())
    throw DataError("train: no validation windows for the requested lead times");

  LatWeights weights = latitude_weights(data.manifest().grid);

  auto sample_loss = [&](const Sample& s) {
    Tensor input = normalized_state(data, s.t_in, vars);
    Tensor target = normalized_state(data, s.t_target, vars);
    Tensor pred = model.forward(input, s.lead_hours, pm);
    return lat_weighted_mse(pred, target, weights);
  };

  auto val_loss = [&]() {
    double total = 0.0;
    for (const auto& s : val_samples) total += sample_loss(s).scalar_value();
    return total / static_cast<double>(val_samples.size());
  };

  Adam opt(cfg.learning_rate);
  Rng shuffle_rng(cfg.seed);
  History hist;
  hist.trainable_count = model.count_parameters(ParamFilter::trainable);
  MemoryMeter::instance().reset_peak();

  double best_val = std::numeric_limits<double>::infinity();
  Snapshot best;
  std::int64_t since_best = 0;

  for (std::int64_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    // seeded in-place shuffle, same order for a given seed and epoch
    for (std::size_t i = train_samples.size(); i > 1; --i) {
      auto j = static_cast<std::size_t>(
          shuffle_rng.index(static_cast<std::int64_t>(i)));
      std::swap(train_samples[i - 1], train_samples[j]);
    }
    std::int64_t n_steps =
        (static_cast<std::int64_t>(train_samples.size()) + cfg.batch_size - 1) /
        cfg.batch_size;
    if (cfg.max_steps_per_epoch > 0)
      n_steps = std::min(n_steps, cfg.max_steps_per_epoch);

    double train_loss_sum = 0.0;
    for (std::int64_t step = 0; step < n_steps; ++step) {
      std::size_t lo = static_cast<std::size_t>(step * cfg.batch_size);
      std::size_t hi = std::min(train_samples.size(),
                                lo + static_cast<std::size_t>(cfg.batch_size));
      Tape tape;
      Tape::Scope scope(tape);
      std::vector<ParamRef> params = model.trainable_params();
      for (auto& ref : params) tape.watch(*ref.slot);
      Tensor loss;
      for (std::size_t i = lo; i < hi; ++i) {
        Tensor l = sample_loss(train_samples[i]);
        loss = loss.defined() ? add(loss, l) : l;
      }
      loss = scale(loss, 1.0 / static_cast<double>(hi - lo));
      double lv = loss.scalar_value();
      if (!std::isfinite(lv))
        throw TrainDivergence("training diverged: loss " + std::to_string(lv) +
                              " at epoch " + std::to_string(epoch) + " step " +
                              std::to_string(step) + " (lr " +
                              std::to_string(cfg.learning_rate) + ")");
      train_loss_sum += lv;
      tape.backward(loss);
      std::map<std::string, Tensor> grads;
      for (const auto& ref : params) grads.emplace(ref.path, tape.grad(*ref.slot));
      opt.step(params, grads);
    }

    EpochStats es;
    es.epoch = epoch;
    es.train_loss = train_loss_sum / static_cast<double>(n_steps);
    es.val_loss = val_loss();
    if (!std::isfinite(es.val_loss))
      throw TrainDivergence("training diverged: validation loss is not finite at epoch " +
                            std::to_string(epoch));
    es.wall_ms = std::chrono::duration<double, std::milli>(
                     std::chrono::steady_clock::now() - t0)
                     .count();
    hist.epochs.push_back(es);
    if (log_lines) {
      std::ostringstream ls;
      ls << "epoch " << epoch << " train_loss " << es.train_loss << " val_loss "
         << es.val_loss << " wall_ms " << es.wall_ms << " peak_bytes "
         << MemoryMeter::instance().peak();
      log_lines->push_back(ls.str());
    }

    if (es.val_loss < best_val) {
      best_val = es.val_loss;
      best = take_snapshot(model);
      hist.best_epoch = epoch;
      since_best = 0;
    } else {
      ++since_best;
      if (since_best >= cfg.patience) {
        hist.early_stopped = true;
        break;
      }
    }
  }

  restore_snapshot(model, best);
  hist.best_val_loss = best_val;
  hist.peak_bytes = MemoryMeter::instance().peak();
  return TrainResult{std::move(model), std::move(hist)};
}

TrainResult finetune_regional(const ForecastModel& base, const Dataset& regional,
                              const SplitIndices& splits, const TrainConfig& cfg,
                              const PatchMap& pm,
                              std::vector<std::string>* log_lines) {
  if (regional.manifest().grid.n_lat != pm.h_cells ||
      regional.manifest().grid.n_lon != pm.w_cells)
    throw RegionError("finetune: dataset grid " +
                      std::to_string(regional.manifest().grid.n_lat) + "x" +
                      std::to_string(regional.manifest().grid.n_lon) +
                      " does not match the patch map " +
                      std::to_string(pm.h_cells) + "x" +
                      std::to_string(pm.w_cells));
  ForecastModel model = base.clone();
  if (cfg.mode == TrainMode::fft) {
    model.unfreeze_all();
  } else {
    AdapterSpec spec = cfg.adapter;
    switch (cfg.mode) {
      case TrainMode::lora: spec.kind = AdapterKind::lora; break;
      case TrainMode::reslora: spec.kind = AdapterKind::reslora; break;
      case TrainMode::glora: spec.kind = AdapterKind::glora; break;
      case TrainMode::fft: break;
    }
    attach_adapter(model, spec);
  }
  return train(std::move(model), regional, splits, cfg, &pm, log_lines);
}

std::map<int, TrainResult> lead_time_suite(const ForecastModel& base,
                                           const Dataset& data,
                                           const SplitIndices& splits,
                                           const TrainConfig& cfg,
                                           const PatchMap* pm) {
  std::map<int, TrainResult> out;
  for (int lead : cfg.lead_times) {
    if (windows_in_split(data.manifest(), splits.train, lead).empty())
      throw DataError("lead suite: no training windows for lead " +
                      std::to_string(lead) + "h");
    TrainConfig c = cfg;
    c.lead_times = {lead};
    ForecastModel m = base.clone();
    if (cfg.mode != TrainMode::fft) {
      AdapterSpec spec = cfg.adapter;
      spec.kind = cfg.mode == TrainMode::lora      ? AdapterKind::lora
                  : cfg.mode == TrainMode::reslora ? AdapterKind::reslora
                                                   : AdapterKind::glora;
      attach_adapter(m, spec);
    } else {
      m.unfreeze_all();
    }
    out.emplace(lead, train(std::move(m), data, splits, c, pm));
  }
  return out;
}

std::function<double(const SearchGenome&)> make_training_fitness(
    const ForecastModel& base, const Dataset& data, const SplitIndices& splits,
    const TrainConfig& cfg, const PatchMap* pm) {
  return [&base, &data, &splits, cfg, pm](const SearchGenome& g) {
    ForecastModel m = base.clone();
    AdapterSpec spec = cfg.adapter;
    spec.kind = AdapterKind::glora;
    spec.tags = g.tags;
    attach_adapter(m, spec);
    TrainResult r = train(std::move(m), data, splits, cfg, pm);
    return r.history.best_val_loss;
  };
}

}  // namespace stratus
