#pragma once

#include <optional>
#include <string>
#include <vector>

#include "stratus/grid.h"
#include "stratus/tensor.h"

namespace stratus {

// Timestamps are hours since 1970-01-01T00:00Z.
std::int64_t hours_from_civil(int year, int month, int day, int hour);
int year_of_hours(std::int64_t hours);

struct VarStats {
  double mean = 0.0;
  double stddev = 1.0;
};

// On disk a dataset is a directory: manifest.json plus one <variable>.f32
// per variable holding little-endian float32 frames, time-major [T, H, W].
struct DatasetManifest {
  GridSpec grid;
  std::vector<std::string> variables;
  std::vector<std::int64_t> timestamps;  // strictly increasing
  std::optional<std::vector<VarStats>> normalization;  // per variable

  std::int64_t var_index(const std::string& name) const;
};

class Dataset {
 public:
  Dataset() = default;
  Dataset(DatasetManifest manifest, std::vector<std::vector<float>> frames);

  const DatasetManifest& manifest() const { return manifest_; }
  std::int64_t n_time() const {
    return static_cast<std::int64_t>(manifest_.timestamps.size());
  }
  std::int64_t frame_size() const {
    return manifest_.grid.n_lat * manifest_.grid.n_lon;
  }

  // [H, W] doubles for one variable at one time index.
  Tensor frame(std::int64_t var, std::int64_t t) const;
  // [D, H, W] stacking the named variables at one time index.
  Tensor state(std::int64_t t, const std::vector<std::string>& vars) const;

  const std::vector<float>& raw(std::int64_t var) const;

 private:
  DatasetManifest manifest_;
  std::vector<std::vector<float>> frames_;  // per variable, T*H*W
};

void write_dataset(const Dataset& ds, const std::string& dir);
Dataset read_dataset(const std::string& dir);

// Stats from the given time indices only (one pass in 64-bit).
std::vector<VarStats> compute_normalization(
    const Dataset& ds, const std::vector<std::int64_t>& t_indices);

Tensor normalize(const Tensor& field, const VarStats& s);
Tensor denormalize(const Tensor& field, const VarStats& s);

struct SplitSpec {
  std::vector<int> train_years;
  std::vector<int> val_years;
  std::vector<int> test_years;
};

struct SplitIndices {
  std::vector<std::int64_t> train, val, test;
};

// Assigns every timestamp whose calendar year is listed; the year sets must
// be disjoint and each listed year must own at least one timestamp.
SplitIndices split_by_years(const DatasetManifest& m, const SplitSpec& spec);

// A training window is (input time, input time + lead). Windows whose two
// timestamps fall in different splits are dropped.
struct SampleWindow {
  std::int64_t t_in;      // index of the input timestamp
  std::int64_t t_target;  // index of the target timestamp
  int lead_hours;
};

std::vector<SampleWindow> windows_in_split(
    const DatasetManifest& m, const std::vector<std::int64_t>& split_indices,
    int lead_hours);

// Seeded advection-diffusion fields on the sphere grid: smooth random
// initial states advected zonally with a latitude-dependent speed, diffused,
// plus small per-step noise.
struct SynthConfig {
  std::vector<std::string> variables;
  std::int64_t n_steps = 256;
  int step_hours = 12;
  int start_year = 2001, start_month = 1, start_day = 1;
  double advect_cells = 0.6;  // equator displacement per step, in cells
  double diffusion = 0.04;
  double noise = 0.015;
  std::uint64_t seed = 1;
};

std::vector<std::string> default_variables();

Dataset synth_generate(const GridSpec& grid, const SynthConfig& cfg);

// In-memory crop of every frame; the manifest keeps timestamps and names.
Dataset crop_dataset(const Dataset& ds, const CropIndex& ci);

}  // namespace stratus
