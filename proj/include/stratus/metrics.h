#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stratus/climatology.h"
#include "stratus/model.h"

namespace stratus {

// Mean over forecast times of sqrt(mean over cells of w * (pred - truth)^2)
// for one variable; fields are [D, H, W] in physical units.
double lat_weighted_rmse_var(const std::vector<Tensor>& preds,
                             const std::vector<Tensor>& truths,
                             const LatWeights& w, std::int64_t var);
std::vector<double> lat_weighted_rmse(const std::vector<Tensor>& preds,
                                      const std::vector<Tensor>& truths,
                                      const LatWeights& w);

// Anomaly correlation against a climatology, averaged over forecast times.
// Zero anomaly variance in either field raises UndefinedAccError.
double lat_weighted_acc_var(const std::vector<Tensor>& preds,
                            const std::vector<Tensor>& truths,
                            const Tensor& climatology, const LatWeights& w,
                            std::int64_t var);
std::vector<double> lat_weighted_acc(const std::vector<Tensor>& preds,
                                     const std::vector<Tensor>& truths,
                                     const Tensor& climatology,
                                     const LatWeights& w);

struct VarLeadMetrics {
  double rmse = 0.0;
  std::optional<double> acc;  // missing when the ACC is undefined
};

struct MetricsReport {
  std::vector<std::string> variables;
  std::vector<int> leads;
  std::map<std::string, std::map<int, VarLeadMetrics>> cells;
  // metadata
  std::string checkpoint_id;
  std::string region = "globe";
  std::uint64_t seed = 0;
  std::int64_t n_lat = 0, n_lon = 0;
  std::int64_t n_windows = 0;

  const VarLeadMetrics& at(const std::string& var, int lead) const;

  // full-precision, key-sorted; serialization round-trips bit-exactly
  std::string to_json() const;
  static MetricsReport from_json(const std::string& s);
  // fixed column order: variable,lead_hours,rmse,acc (acc blank if missing)
  std::string to_csv() const;
};

// Maps a normalized [D, H, W] state to a normalized forecast at a lead.
using Forecaster = std::function<Tensor(const Tensor& input, int lead_hours)>;

Forecaster model_forecaster(const ForecastModel& m, const PatchMap* pm = nullptr);
Forecaster persistence_forecaster();

struct EvalOptions {
  std::vector<int> leads = {72};
  std::optional<RegionBox> region;  // crop forecasts before scoring
  std::int64_t max_windows = 0;     // 0 = every test window
};

// Runs the forecaster over the test windows, denormalizes, optionally crops
// to a region (weights renormalized on the sub-grid), and scores RMSE/ACC
// per variable and lead. The climatology must come from the training split.
MetricsReport evaluate(const Forecaster& fc, const Dataset& ds,
                       const std::vector<std::int64_t>& test_idx,
                       const Climatology& train_clim, const EvalOptions& opt);

// Per-cell pred - truth, physical units.
Tensor bias_field(const Tensor& pred, const Tensor& truth);

// P6 pixmap with a fixed diverging scale: -vmax blue, 0 white, +vmax red.
// Rows are written north to south.
void write_ppm_map(const Tensor& field, const std::string& path, double vmax);

// Little-endian float32 dump, the same cell order the dataset format uses.
void write_raw_field(const Tensor& field, const std::string& path);

}  // namespace stratus
