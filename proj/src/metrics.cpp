#include "stratus/metrics.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"
#include "stratus/train.h"

namespace stratus {

using nlohmann::json;

namespace {

void check_fields(const std::vector<Tensor>& preds,
                  const std::vector<Tensor>& truths, const LatWeights& w,
                  std::int64_t var) {
  if (preds.empty() || preds.size() != truths.size())
    throw ShapeError("metrics: " + std::to_string(preds.size()) +
                     " predictions against " + std::to_string(truths.size()) +
                     " truths");
  const Shape& s = preds[0].shape();
  if (preds[0].ndim() != 3)
    throw ShapeError("metrics: fields must be [D, H, W], got " + shape_str(s));
  for (const auto& t : preds)
    if (t.shape() != s) throw ShapeError("metrics: ragged prediction shapes");
  for (const auto& t : truths)
    if (t.shape() != s)
      throw ShapeError("metrics: truth shape " + shape_str(t.shape()) +
                       " against prediction " + shape_str(s));
  if (static_cast<std::int64_t>(w.w.size()) != s[1])
    throw ShapeError("metrics: " + std::to_string(w.w.size()) +
                     " latitude weights for " + std::to_string(s[1]) + " rows");
  if (var < 0 || var >= s[0])
    throw ShapeError("metrics: variable index " + std::to_string(var) +
                     " out of range");
}

}  // namespace

double lat_weighted_rmse_var(const std::vector<Tensor>& preds,
                             const std::vector<Tensor>& truths,
                             const LatWeights& w, std::int64_t var) {
  check_fields(preds, truths, w, var);
  std::int64_t h = preds[0].dim(1), wd = preds[0].dim(2);
  double acc = 0.0;
  for (std::size_t t = 0; t < preds.size(); ++t) {
    const double* p = preds[t].data() + var * h * wd;
    const double* q = truths[t].data() + var * h * wd;
    double se = 0.0;
    for (std::int64_t i = 0; i < h; ++i) {
      double wi = w.w[static_cast<std::size_t>(i)];
      for (std::int64_t j = 0; j < wd; ++j) {
        double d = p[i * wd + j] - q[i * wd + j];
        se += wi * d * d;
      }
    }
    acc += std::sqrt(se / static_cast<double>(h * wd));
  }
  return acc / static_cast<double>(preds.size());
}

std::vector<double> lat_weighted_rmse(const std::vector<Tensor>& preds,
                                      const std::vector<Tensor>& truths,
                                      const LatWeights& w) {
  check_fields(preds, truths, w, 0);
  std::vector<double> out;
  for (std::int64_t v = 0; v < preds[0].dim(0); ++v)
    out.push_back(lat_weighted_rmse_var(preds, truths, w, v));
  return out;
}

double lat_weighted_acc_var(const std::vector<Tensor>& preds,
                            const std::vector<Tensor>& truths,
                            const Tensor& climatology, const LatWeights& w,
                            std::int64_t var) {
  check_fields(preds, truths, w, var);
  if (climatology.shape() != preds[0].shape())
    throw ShapeError("metrics: climatology " + shape_str(climatology.shape()) +
                     " against fields " + shape_str(preds[0].shape()));
  std::int64_t h = preds[0].dim(1), wd = preds[0].dim(2);
  const double* c = climatology.data() + var * h * wd;
  double acc = 0.0;
  for (std::size_t t = 0; t < preds.size(); ++t) {
    const double* p = preds[t].data() + var * h * wd;
    const double* q = truths[t].data() + var * h * wd;
    double num = 0.0, pp = 0.0, tt = 0.0;
    for (std::int64_t i = 0; i < h; ++i) {
      double wi = w.w[static_cast<std::size_t>(i)];
      for (std::int64_t j = 0; j < wd; ++j) {
        double pa = p[i * wd + j] - c[i * wd + j];
        double ta = q[i * wd + j] - c[i * wd + j];
        num += wi * pa * ta;
        pp += wi * pa * pa;
        tt += wi * ta * ta;
      }
    }
    if (pp <= 0.0 || tt <= 0.0)
      throw UndefinedAccError(
          "acc undefined: zero anomaly variance at forecast time " +
          std::to_string(t) + " for variable index " + std::to_string(var));
    acc += num / std::sqrt(pp * tt);
  }
  return acc / static_cast<double>(preds.size());
}

std::vector<double> lat_weighted_acc(const std::vector<Tensor>& preds,
                                     const std::vector<Tensor>& truths,
                                     const Tensor& climatology,
                                     const LatWeights& w) {
  check_fields(preds, truths, w, 0);
  std::vector<double> out;
  for (std::int64_t v = 0; v < preds[0].dim(0); ++v)
    out.push_back(lat_weighted_acc_var(preds, truths, climatology, w, v));
  return out;
}

const VarLeadMetrics& MetricsReport::at(const std::string& var, int lead) const {
  auto vi = cells.find(var);
  if (vi == cells.end())
    throw ContractError("metrics: no variable '" + var + "' in report");
  auto li = vi->second.find(lead);
  if (li == vi->second.end())
    throw ContractError("metrics: no lead " + std::to_string(lead) +
                        "h for '" + var + "'");
  return li->second;
}

std::string MetricsReport::to_json() const {
  json j;
  j["variables"] = variables;
  j["leads"] = leads;
  j["checkpoint_id"] = checkpoint_id;
  j["region"] = region;
  j["seed"] = seed;
  j["grid"] = {{"n_lat", n_lat}, {"n_lon", n_lon}};
  j["n_windows"] = n_windows;
  json m = json::object();
  for (const auto& [var, per_lead] : cells) {
    json lv = json::object();
    for (const auto& [lead, vm] : per_lead) {
      json cell;
      cell["rmse"] = vm.rmse;
      if (vm.acc)
        cell["acc"] = *vm.acc;
      else
        cell["acc"] = nullptr;
      lv[std::to_string(lead)] = cell;
    }
    m[var] = lv;
  }
  j["metrics"] = m;
  return j.dump(2);
}

MetricsReport MetricsReport::from_json(const std::string& s) {
  json j = json::parse(s);
  MetricsReport r;
  r.variables = j.at("variables").get<std::vector<std::string>>();
  r.leads = j.at("leads").get<std::vector<int>>();
  r.checkpoint_id = j.at("checkpoint_id").get<std::string>();
  r.region = j.at("region").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.n_lat = j.at("grid").at("n_lat").get<std::int64_t>();
  r.n_lon = j.at("grid").at("n_lon").get<std::int64_t>();
  r.n_windows = j.at("n_windows").get<std::int64_t>();
  for (const auto& [var, per_lead] : j.at("metrics").items()) {
    for (const auto& [lead, cell] : per_lead.items()) {
      VarLeadMetrics vm;
      vm.rmse = cell.at("rmse").get<double>();
      if (!cell.at("acc").is_null()) vm.acc = cell.at("acc").get<double>();
      r.cells[var][std::stoi(lead)] = vm;
    }
  }
  return r;
}

std::string MetricsReport::to_csv() const {
  std::ostringstream os;
  os << "variable,lead_hours,rmse,acc\n";
  os << std::setprecision(17);
  for (const auto& var : variables)
    for (int lead : leads) {
      const VarLeadMetrics& vm = at(var, lead);
      os << var << "," << lead << "," << vm.rmse << ",";
      if (vm.acc) os << *vm.acc;
      os << "\n";
    }
  return os.str();
}

Forecaster model_forecaster(const ForecastModel& m, const PatchMap* pm) {
  return [&m, pm](const Tensor& input, int lead_hours) {
    return m.forward(input, lead_hours, pm);
  };
}

Forecaster persistence_forecaster() {
  return [](const Tensor& input, int) { return input; };
}

namespace {

// physical-unit [D, H, W] state straight from the stored frames
Tensor raw_state(const Dataset& ds, std::int64_t t) {
  return ds.state(t, ds.manifest().variables);
}

Tensor denormalize_state(const Tensor& norm, const DatasetManifest& m) {
  const auto& stats = *m.normalization;
  std::int64_t d = norm.dim(0), hw = norm.dim(1) * norm.dim(2);
  std::vector<double> out(static_cast<std::size_t>(d * hw));
  const double* p = norm.data();
  for (std::int64_t v = 0; v < d; ++v) {
    const VarStats& s = stats[static_cast<std::size_t>(v)];
    for (std::int64_t i = 0; i < hw; ++i)
      out[static_cast<std::size_t>(v * hw + i)] = p[v * hw + i] * s.stddev + s.mean;
  }
  return Tensor::from_values(norm.shape(), std::move(out));
}

}  // namespace

MetricsReport evaluate(const Forecaster& fc, const Dataset& ds,
                       const std::vector<std::int64_t>& test_idx,
                       const Climatology& train_clim, const EvalOptions& opt) {
  if (test_idx.empty()) throw DataError("evaluate: empty test split");
  if (opt.leads.empty()) throw ConfigError("evaluate: no lead times");
  const DatasetManifest& man = ds.manifest();
  if (!man.normalization)
    throw ConfigError("evaluate: dataset has no normalization statistics");

  // optional crop applied to forecasts, truths, and the climatology
  bool crop = opt.region.has_value();
  CropIndex ci;
  GridSpec grid = man.grid;
  Tensor clim = train_clim.mean;
  if (crop) {
    ci = region_indices(man.grid, *opt.region);
    grid = cropped_grid(man.grid, ci);
    clim = crop_field(clim, man.grid, ci);
  }
  LatWeights weights = latitude_weights(grid);

  MetricsReport report;
  report.variables = man.variables;
  report.leads = opt.leads;
  report.n_lat = grid.n_lat;
  report.n_lon = grid.n_lon;

  for (int lead : opt.leads) {
    std::vector<SampleWindow> windows = windows_in_split(man, test_idx, lead);
    if (windows.empty())
      throw DataError("evaluate: no test windows at lead " +
                      std::to_string(lead) + "h");
    if (opt.max_windows > 0 &&
        static_cast<std::int64_t>(windows.size()) > opt.max_windows) {
      std::vector<SampleWindow> kept;
      double stride = static_cast<double>(windows.size()) /
                      static_cast<double>(opt.max_windows);
      for (std::int64_t i = 0; i < opt.max_windows; ++i)
        kept.push_back(windows[static_cast<std::size_t>(
            static_cast<double>(i) * stride)]);
      windows = std::move(kept);
    }
    std::vector<Tensor> preds, truths;
    preds.reserve(windows.size());
    truths.reserve(windows.size());
    for (const auto& win : windows) {
      Tensor input = normalized_state(ds, win.t_in, man.variables);
      Tensor pred = denormalize_state(fc(input, lead), man);
      Tensor truth = raw_state(ds, win.t_target);
      if (crop) {
        pred = crop_field(pred, man.grid, ci);
        truth = crop_field(truth, man.grid, ci);
      }
      preds.push_back(std::move(pred));
      truths.push_back(std::move(truth));
    }
    report.n_windows += static_cast<std::int64_t>(windows.size());
    for (std::size_t v = 0; v < man.variables.size(); ++v) {
      VarLeadMetrics vm;
      vm.rmse = lat_weighted_rmse_var(preds, truths, weights,
                                      static_cast<std::int64_t>(v));
      try {
        vm.acc = lat_weighted_acc_var(preds, truths, clim, weights,
                                      static_cast<std::int64_t>(v));
      } catch (const UndefinedAccError&) {
        vm.acc.reset();  // reported as missing, never as 0
      }
      report.cells[man.variables[v]][lead] = vm;
    }
  }
  return report;
}

Tensor bias_field(const Tensor& pred, const Tensor& truth) {
  if (pred.shape() != truth.shape())
    throw ShapeError("bias: pred " + shape_str(pred.shape()) +
                     " against truth " + shape_str(truth.shape()));
  std::vector<double> out(static_cast<std::size_t>(pred.numel()));
  const double* p = pred.data();
  const double* q = truth.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = p[i] - q[i];
  return Tensor::from_values(pred.shape(), std::move(out));
}

void write_ppm_map(const Tensor& field, const std::string& path, double vmax) {
  if (field.ndim() != 2)
    throw ShapeError("ppm: field must be [H, W], got " +
                     shape_str(field.shape()));
  if (!(vmax > 0)) throw ConfigError("ppm: vmax must be positive");
  std::int64_t h = field.dim(0), w = field.dim(1);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("ppm: cannot write " + path);
  f << "P6\n" << w << " " << h << "\n255\n";
  const double* p = field.data();
  // latitude row 0 is the southernmost; images put north on top
  for (std::int64_t i = h - 1; i >= 0; --i)
    for (std::int64_t j = 0; j < w; ++j) {
      double t = std::clamp(p[i * w + j] / vmax, -1.0, 1.0);
      unsigned char rgb[3];
      if (t < 0) {  // blue side
        double a = 1.0 + t;
        rgb[0] = static_cast<unsigned char>(std::lround(255.0 * a));
        rgb[1] = static_cast<unsigned char>(std::lround(255.0 * a));
        rgb[2] = 255;
      } else {  // red side
        double a = 1.0 - t;
        rgb[0] = 255;
        rgb[1] = static_cast<unsigned char>(std::lround(255.0 * a));
        rgb[2] = static_cast<unsigned char>(std::lround(255.0 * a));
      }
      f.write(reinterpret_cast<const char*>(rgb), 3);
    }
  if (!f) throw DataError("ppm: short write on " + path);
}

void write_raw_field(const Tensor& field, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("field: cannot write " + path);
  const double* p = field.data();
  std::vector<float> buf(static_cast<std::size_t>(field.numel()));
  for (std::size_t i = 0; i < buf.size(); ++i)
    buf[i] = static_cast<float>(p[i]);
  f.write(reinterpret_cast<const char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!f) throw DataError("field: short write on " + path);
}

}  // namespace stratus
