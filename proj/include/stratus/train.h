#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "stratus/dataio.h"
#include "stratus/peft.h"

namespace stratus {

enum class TrainMode { fft, lora, reslora, glora };

std::string to_string(TrainMode m);
TrainMode train_mode_from_string(const std::string& s);

struct TrainConfig {
  double learning_rate = 1e-3;  // desk-scale default; the large preset uses 1e-5
  std::int64_t batch_size = 8;
  std::int64_t max_epochs = 20;
  std::int64_t patience = 3;
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::fft;
  std::vector<int> lead_times = {12, 24, 36, 48, 60, 72};
  std::int64_t max_steps_per_epoch = 0;  // 0 = every batch
  std::int64_t max_val_windows = 64;     // 0 = all; subsampled evenly
  AdapterSpec adapter;                   // used by the peft modes

  void validate() const;
};

// Mean over variables and cells of w(lat) * (pred - target)^2; differentiable.
Tensor lat_weighted_mse(const Tensor& pred, const Tensor& target,
                        const LatWeights& weights);

struct EpochStats {
  std::int64_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double wall_ms = 0.0;
};

struct History {
  std::vector<EpochStats> epochs;
  double best_val_loss = 0.0;
  std::int64_t best_epoch = -1;
  bool early_stopped = false;
  std::int64_t trainable_count = 0;
  std::int64_t peak_bytes = 0;  // tracked allocator high-water mark
};

// Adam with moments kept per parameter path; moment buffers live in tracked
// tensor memory so optimizer state shows up in the allocation meter.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);

  void step(const std::vector<ParamRef>& params,
            const std::map<std::string, Tensor>& grads);

  std::int64_t steps_taken() const { return t_; }

 private:
  double lr_, b1_, b2_, eps_;
  std::int64_t t_ = 0;
  std::map<std::string, Tensor> m_, v_;
};

struct TrainResult {
  ForecastModel model;
  History history;
};

// Adam over the model's trainable parameters with per-epoch validation and
// early stopping after `patience` epochs without strict improvement; returns
// the best-validation weights. Loss is computed in normalized space. The
// patch map routes position embeddings when training on a cropped grid.
TrainResult train(ForecastModel model, const Dataset& data,
                  const SplitIndices& splits, const TrainConfig& cfg,
                  const PatchMap* pm = nullptr,
                  std::vector<std::string>* log_lines = nullptr);

// Clones the base, applies the mode (full fine-tune or adapter attach), and
// trains on the regional dataset, which must be cropped patch-aligned so its
// patches map onto the base grid.
TrainResult finetune_regional(const ForecastModel& base, const Dataset& regional,
                              const SplitIndices& splits, const TrainConfig& cfg,
                              const PatchMap& pm,
                              std::vector<std::string>* log_lines = nullptr);

// One specialist fine-tune per lead time, keyed by lead.
std::map<int, TrainResult> lead_time_suite(
    const ForecastModel& base, const Dataset& data, const SplitIndices& splits,
    const TrainConfig& cfg, const PatchMap* pm = nullptr);

// Fitness for the structure search: attach supports with the genome's tags
// to a clone of the base, train briefly, return the best validation loss.
std::function<double(const SearchGenome&)> make_training_fitness(
    const ForecastModel& base, const Dataset& data, const SplitIndices& splits,
    const TrainConfig& cfg, const PatchMap* pm = nullptr);

// [D, H, W] state at time t with each variable's train-split normalization
// applied; the variable order is the model's input order.
Tensor normalized_state(const Dataset& ds, std::int64_t t,
                        const std::vector<std::string>& vars);

}  // namespace stratus
