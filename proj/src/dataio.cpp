#include "stratus/dataio.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include "json.hpp"
#include "stratus/rng.h"

namespace stratus {

namespace fs = std::filesystem;
using nlohmann::json;

std::int64_t hours_from_civil(int year, int month, int day, int hour) {
  using namespace std::chrono;
  year_month_day ymd{std::chrono::year{year}, std::chrono::month{static_cast<unsigned>(month)},
                     std::chrono::day{static_cast<unsigned>(day)}};
  if (!ymd.ok()) throw DataError("time: invalid civil date");
  sys_days d{ymd};
  return static_cast<std::int64_t>(d.time_since_epoch().count()) * 24 + hour;
}

int year_of_hours(std::int64_t hours) {
  using namespace std::chrono;
  std::int64_t days = hours / 24;
  if (hours < 0 && hours % 24 != 0) --days;
  year_month_day ymd{sys_days{std::chrono::days{days}}};
  return static_cast<int>(ymd.year());
}

std::int64_t DatasetManifest::var_index(const std::string& name) const {
  for (std::size_t i = 0; i < variables.size(); ++i)
    if (variables[i] == name) return static_cast<std::int64_t>(i);
  throw DataError("dataset: unknown variable '" + name + "'");
}

Dataset::Dataset(DatasetManifest manifest, std::vector<std::vector<float>> frames)
    : manifest_(std::move(manifest)), frames_(std::move(frames)) {
  if (frames_.size() != manifest_.variables.size())
    throw DataError("dataset: frame array count does not match variables");
  auto expect = static_cast<std::size_t>(n_time() * frame_size());
  for (std::size_t v = 0; v < frames_.size(); ++v)
    if (frames_[v].size() != expect)
      throw DataError("dataset: variable '" + manifest_.variables[v] + "' has " +
                      std::to_string(frames_[v].size()) + " values, expected " +
                      std::to_string(expect));
}

Tensor Dataset::frame(std::int64_t var, std::int64_t t) const {
  if (var < 0 || var >= static_cast<std::int64_t>(frames_.size()))
    throw DataError("dataset: variable index out of range");
  if (t < 0 || t >= n_time())
    throw DataError("dataset: time index " + std::to_string(t) + " out of range");
  std::int64_t fs_count = frame_size();
  const float* src = frames_[static_cast<std::size_t>(var)].data() + t * fs_count;
  std::vector<double> out(static_cast<std::size_t>(fs_count));
  for (std::int64_t i = 0; i < fs_count; ++i) out[i] = static_cast<double>(src[i]);
  return Tensor::from_values({manifest_.grid.n_lat, manifest_.grid.n_lon},
                             std::move(out));
}

Tensor Dataset::state(std::int64_t t, const std::vector<std::string>& vars) const {
  std::int64_t fs_count = frame_size();
  std::vector<double> out(static_cast<std::size_t>(
      static_cast<std::int64_t>(vars.size()) * fs_count));
  for (std::size_t d = 0; d < vars.size(); ++d) {
    std::int64_t v = manifest_.var_index(vars[d]);
    const float* src = frames_[static_cast<std::size_t>(v)].data() + t * fs_count;
    for (std::int64_t i = 0; i < fs_count; ++i)
      out[static_cast<std::int64_t>(d) * fs_count + i] = static_cast<double>(src[i]);
  }
  return Tensor::from_values({static_cast<std::int64_t>(vars.size()),
                              manifest_.grid.n_lat, manifest_.grid.n_lon},
                             std::move(out));
}

const std::vector<float>& Dataset::raw(std::int64_t var) const {
  return frames_.at(static_cast<std::size_t>(var));
}

namespace {

json grid_to_json(const GridSpec& g) {
  return json{{"n_lat", g.n_lat},
              {"n_lon", g.n_lon},
              {"lat_centers", g.lat_centers},
              {"lon_centers", g.lon_centers}};
}

GridSpec grid_from_json(const json& j) {
  GridSpec g = GridSpec::custom(j.at("lat_centers").get<std::vector<double>>(),
                                j.at("lon_centers").get<std::vector<double>>());
  if (g.n_lat != j.at("n_lat").get<std::int64_t>() ||
      g.n_lon != j.at("n_lon").get<std::int64_t>())
    throw DataError("manifest: grid sizes disagree with center arrays");
  return g;
}

}  // namespace

void write_dataset(const Dataset& ds, const std::string& dir) {
  fs::create_directories(dir);
  const auto& m = ds.manifest();
  json j;
  j["grid"] = grid_to_json(m.grid);
  j["variables"] = m.variables;
  j["timestamps"] = m.timestamps;
  if (m.normalization) {
    json norm = json::object();
    for (std::size_t v = 0; v < m.variables.size(); ++v)
      norm[m.variables[v]] = {{"mean", (*m.normalization)[v].mean},
                              {"stddev", (*m.normalization)[v].stddev}};
    j["normalization"] = norm;
  }
  std::ofstream mf(fs::path(dir) / "manifest.json");
  if (!mf) throw DataError("dataset: cannot write manifest in " + dir);
  mf << j.dump(2) << "\n";
  for (std::size_t v = 0; v < m.variables.size(); ++v) {
    fs::path p = fs::path(dir) / (m.variables[v] + ".f32");
    std::ofstream f(p, std::ios::binary);
    if (!f) throw DataError("dataset: cannot write " + p.string());
    const auto& raw = ds.raw(static_cast<std::int64_t>(v));
    f.write(reinterpret_cast<const char*>(raw.data()),
            static_cast<std::streamsize>(raw.size() * sizeof(float)));
  }
}

Dataset read_dataset(const std::string& dir) {
  std::ifstream mf(fs::path(dir) / "manifest.json");
  if (!mf) throw DataError("dataset: no manifest.json in " + dir);
  json j = json::parse(mf);
  DatasetManifest m;
  m.grid = grid_from_json(j.at("grid"));
  m.variables = j.at("variables").get<std::vector<std::string>>();
  m.timestamps = j.at("timestamps").get<std::vector<std::int64_t>>();
  if (m.variables.empty()) throw DataError("manifest: no variables");
  if (m.timestamps.empty()) throw DataError("manifest: no timestamps");
  for (std::size_t i = 1; i < m.timestamps.size(); ++i)
    if (m.timestamps[i] <= m.timestamps[i - 1])
      throw DataError("manifest: timestamps not strictly increasing");
  if (j.contains("normalization")) {
    std::vector<VarStats> stats;
    for (const auto& v : m.variables) {
      const auto& n = j.at("normalization").at(v);
      stats.push_back(VarStats{n.at("mean").get<double>(),
                               n.at("stddev").get<double>()});
    }
    m.normalization = std::move(stats);
  }
  std::int64_t expect = static_cast<std::int64_t>(m.timestamps.size()) *
                        m.grid.n_lat * m.grid.n_lon;
  std::vector<std::vector<float>> frames;
  for (const auto& v : m.variables) {
    fs::path p = fs::path(dir) / (v + ".f32");
    std::error_code ec;
    auto bytes = fs::file_size(p, ec);
    if (ec) throw DataError("dataset: missing field file " + p.string());
    if (bytes != static_cast<std::uintmax_t>(expect) * sizeof(float))
      throw DataError("dataset: " + p.string() + " holds " +
                      std::to_string(bytes) + " bytes, expected " +
                      std::to_string(expect * sizeof(float)) +
                      " (truncated or mismatched grid)");
    std::ifstream f(p, std::ios::binary);
    std::vector<float> raw(static_cast<std::size_t>(expect));
    f.read(reinterpret_cast<char*>(raw.data()),
           static_cast<std::streamsize>(raw.size() * sizeof(float)));
    if (!f) throw DataError("dataset: short read on " + p.string());
    frames.push_back(std::move(raw));
  }
  return Dataset(std::move(m), std::move(frames));
}

std::vector<VarStats> compute_normalization(
    const Dataset& ds, const std::vector<std::int64_t>& t_indices) {
  if (t_indices.empty())
    throw DataError("normalization: no timestamps to compute stats from");
  const auto& m = ds.manifest();
  std::int64_t fs_count = ds.frame_size();
  std::vector<VarStats> out;
  for (std::size_t v = 0; v < m.variables.size(); ++v) {
    const auto& raw = ds.raw(static_cast<std::int64_t>(v));
    double sum = 0.0, sq = 0.0;
    std::int64_t n = 0;
    for (auto t : t_indices) {
      const float* f = raw.data() + t * fs_count;
      for (std::int64_t i = 0; i < fs_count; ++i) {
        double x = static_cast<double>(f[i]);
        sum += x;
        sq += x * x;
        ++n;
      }
    }
    double mean = sum / static_cast<double>(n);
    double var = sq / static_cast<double>(n) - mean * mean;
    if (var < 0.0) var = 0.0;
    double sd = std::sqrt(var);
    if (sd == 0.0)
      throw DataError("normalization: variable '" + m.variables[v] +
                      "' is constant over the split");
    out.push_back(VarStats{mean, sd});
  }
  return out;
}

Tensor normalize(const Tensor& field, const VarStats& s) {
  if (s.stddev <= 0.0) throw DataError("normalize: non-positive stddev");
  std::vector<double> out(field.values());
  for (auto& x : out) x = (x - s.mean) / s.stddev;
  return Tensor::from_values(field.shape(), std::move(out));
}

Tensor denormalize(const Tensor& field, const VarStats& s) {
  std::vector<double> out(field.values());
  for (auto& x : out) x = x * s.stddev + s.mean;
  return Tensor::from_values(field.shape(), std::move(out));
}

SplitIndices split_by_years(const DatasetManifest& m, const SplitSpec& spec) {
  auto overlap = [](const std::vector<int>& a, const std::vector<int>& b) {
    for (int x : a)
      for (int y : b)
        if (x == y) return true;
    return false;
  };
  if (spec.train_years.empty() && spec.val_years.empty() &&
      spec.test_years.empty())
    throw DataError("splits: no years declared");
  if (overlap(spec.train_years, spec.val_years) ||
      overlap(spec.train_years, spec.test_years) ||
      overlap(spec.val_years, spec.test_years))
    throw DataError("splits: year sets overlap");
  SplitIndices out;
  std::set<int> seen;
  for (std::size_t i = 0; i < m.timestamps.size(); ++i) {
    int y = year_of_hours(m.timestamps[i]);
    auto in = [y](const std::vector<int>& ys) {
      return std::find(ys.begin(), ys.end(), y) != ys.end();
    };
    if (in(spec.train_years)) {
      out.train.push_back(static_cast<std::int64_t>(i));
      seen.insert(y);
    } else if (in(spec.val_years)) {
      out.val.push_back(static_cast<std::int64_t>(i));
      seen.insert(y);
    } else if (in(spec.test_years)) {
      out.test.push_back(static_cast<std::int64_t>(i));
      seen.insert(y);
    }
  }
  auto all_present = [&seen](const std::vector<int>& ys) {
    for (int y : ys)
      if (!seen.count(y)) return false;
    return true;
  };
  if (!all_present(spec.train_years) || !all_present(spec.val_years) ||
      !all_present(spec.test_years))
    throw DataError("splits: a declared year has no timestamps");
  return out;
}

std::vector<SampleWindow> windows_in_split(
    const DatasetManifest& m, const std::vector<std::int64_t>& split_indices,
    int lead_hours) {
  if (lead_hours <= 0) throw DataError("windows: lead must be positive");
  std::set<std::int64_t> in_split(split_indices.begin(), split_indices.end());
  std::vector<SampleWindow> out;
  for (auto t : split_indices) {
    std::int64_t target_ts = m.timestamps[static_cast<std::size_t>(t)] + lead_hours;
    auto it = std::lower_bound(m.timestamps.begin(), m.timestamps.end(), target_ts);
    if (it == m.timestamps.end() || *it != target_ts) continue;
    auto ti = static_cast<std::int64_t>(it - m.timestamps.begin());
    if (!in_split.count(ti)) continue;  // window crosses a split boundary
    out.push_back(SampleWindow{t, ti, lead_hours});
  }
  return out;
}

std::vector<std::string> default_variables() {
  return {"geopotential_500",        "2m_temperature",
          "relative_humidity_850",   "specific_humidity_850",
          "temperature_850",         "10m_u_component_of_wind",
          "10m_v_component_of_wind"};
}

namespace {

// smooth seeded field: a few low wavenumber modes over the sphere grid
std::vector<double> smooth_field(const GridSpec& g, Rng& rng) {
  std::vector<double> f(static_cast<std::size_t>(g.n_lat * g.n_lon), 0.0);
  const int modes = 6;
  for (int m = 0; m < modes; ++m) {
    double amp = rng.normal() / (1.0 + m);
    int k_lon = 1 + static_cast<int>(rng.index(4));
    int k_lat = 1 + static_cast<int>(rng.index(3));
    double ph1 = rng.uniform(0.0, 2.0 * M_PI);
    double ph2 = rng.uniform(0.0, 2.0 * M_PI);
    for (std::int64_t i = 0; i < g.n_lat; ++i) {
      double la = g.lat_centers[static_cast<std::size_t>(i)] * M_PI / 180.0;
      double row = std::cos(k_lat * la + ph2);
      for (std::int64_t j = 0; j < g.n_lon; ++j) {
        double lo = g.lon_centers[static_cast<std::size_t>(j)] * M_PI / 180.0;
        f[static_cast<std::size_t>(i * g.n_lon + j)] +=
            amp * row * std::cos(k_lon * lo + ph1);
      }
    }
  }
  return f;
}

// semi-Lagrangian zonal shift by a fractional number of cells, periodic
void advect_row(const double* src, double* dst, std::int64_t w, double shift) {
  for (std::int64_t j = 0; j < w; ++j) {
    double x = static_cast<double>(j) - shift;
    double fl = std::floor(x);
    double frac = x - fl;
    std::int64_t j0 = static_cast<std::int64_t>(fl) % w;
    if (j0 < 0) j0 += w;
    std::int64_t j1 = (j0 + 1) % w;
    dst[j] = (1.0 - frac) * src[j0] + frac * src[j1];
  }
}

}  // namespace

Dataset synth_generate(const GridSpec& grid, const SynthConfig& cfg) {
  if (cfg.variables.empty()) throw DataError("synth: no variables");
  if (cfg.n_steps < 1) throw DataError("synth: n_steps < 1");
  std::int64_t h = grid.n_lat, w = grid.n_lon;
  std::int64_t fs_count = h * w;
  DatasetManifest m;
  m.grid = grid;
  m.variables = cfg.variables;
  std::int64_t t0 = hours_from_civil(cfg.start_year, cfg.start_month,
                                     cfg.start_day, 0);
  for (std::int64_t t = 0; t < cfg.n_steps; ++t)
    m.timestamps.push_back(t0 + t * cfg.step_hours);

  std::vector<std::vector<float>> frames(cfg.variables.size());
  for (auto& f : frames)
    f.resize(static_cast<std::size_t>(cfg.n_steps * fs_count));

  for (std::size_t v = 0; v < cfg.variables.size(); ++v) {
    Rng rng(cfg.seed * 1000003ull + v * 7919ull + 17ull);
    std::vector<double> cur = smooth_field(grid, rng);
    std::vector<double> nxt(cur.size());
    // per-variable offset and scale keep magnitudes distinct
    double base = rng.uniform(-2.0, 2.0);
    double scale_v = 0.5 + rng.uniform();
    for (std::int64_t t = 0; t < cfg.n_steps; ++t) {
      float* out = frames[v].data() + t * fs_count;
      for (std::int64_t i = 0; i < fs_count; ++i)
        out[i] = static_cast<float>(base + scale_v * cur[i]);
      // advect, diffuse, and perturb for the next step
      for (std::int64_t i = 0; i < h; ++i) {
        double la = grid.lat_centers[static_cast<std::size_t>(i)] * M_PI / 180.0;
        double shift = cfg.advect_cells * std::cos(la);
        advect_row(cur.data() + i * w, nxt.data() + i * w, w, shift);
      }
      if (cfg.diffusion != 0.0) {
        std::vector<double> lap(cur.size());
        for (std::int64_t i = 0; i < h; ++i) {
          std::int64_t iu = i > 0 ? i - 1 : i;
          std::int64_t id = i + 1 < h ? i + 1 : i;
          for (std::int64_t j = 0; j < w; ++j) {
            std::int64_t jl = (j + w - 1) % w;
            std::int64_t jr = (j + 1) % w;
            lap[static_cast<std::size_t>(i * w + j)] =
                nxt[static_cast<std::size_t>(iu * w + j)] +
                nxt[static_cast<std::size_t>(id * w + j)] +
                nxt[static_cast<std::size_t>(i * w + jl)] +
                nxt[static_cast<std::size_t>(i * w + jr)] -
                4.0 * nxt[static_cast<std::size_t>(i * w + j)];
          }
        }
        for (std::size_t i = 0; i < nxt.size(); ++i)
          nxt[i] += cfg.diffusion * lap[i];
      }
      if (cfg.noise != 0.0)
        for (auto& x : nxt) x += cfg.noise * rng.normal();
      std::swap(cur, nxt);
    }
  }
  return Dataset(std::move(m), std::move(frames));
}

Dataset crop_dataset(const Dataset& ds, const CropIndex& ci) {
  const auto& m = ds.manifest();
  GridSpec sub = cropped_grid(m.grid, ci);
  std::int64_t w = static_cast<std::int64_t>(ci.lon_cols.size());
  std::int64_t fs_in = ds.frame_size();
  std::int64_t fs_out = ci.lat_count * w;
  std::vector<std::vector<float>> frames(m.variables.size());
  for (std::size_t v = 0; v < m.variables.size(); ++v) {
    const auto& src = ds.raw(static_cast<std::int64_t>(v));
    auto& dst = frames[v];
    dst.resize(static_cast<std::size_t>(ds.n_time() * fs_out));
    for (std::int64_t t = 0; t < ds.n_time(); ++t)
      for (std::int64_t i = 0; i < ci.lat_count; ++i)
        for (std::int64_t j = 0; j < w; ++j)
          dst[static_cast<std::size_t>(t * fs_out + i * w + j)] =
              src[static_cast<std::size_t>(
                  t * fs_in + (ci.lat_start + i) * m.grid.n_lon +
                  ci.lon_cols[static_cast<std::size_t>(j)])];
  }
  DatasetManifest sm;
  sm.grid = sub;
  sm.variables = m.variables;
  sm.timestamps = m.timestamps;
  sm.normalization = m.normalization;
  return Dataset(std::move(sm), std::move(frames));
}

}  // namespace stratus
