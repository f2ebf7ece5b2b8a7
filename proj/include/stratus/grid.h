#pragma once

#include <cstdint>
#include <vector>

#include "stratus/tensor.h"

namespace stratus {

// Equiangular lat/lon grid. Cell centers sit half a cell off the edges:
// lat_i = -90 + res*(i+0.5), lon_j = res*(j+0.5). Latitudes increase
// south to north; longitudes are in [0, 360). A grid cropped across the
// dateline keeps its columns in wrapped order, which is the one case where
// lon centers are not strictly increasing.
struct GridSpec {
  std::int64_t n_lat = 0;
  std::int64_t n_lon = 0;
  std::vector<double> lat_centers;
  std::vector<double> lon_centers;

  static GridSpec from_resolution(double deg);
  static GridSpec custom(std::vector<double> lats, std::vector<double> lons);
};

// Inclusive bounds on cell centers. lon_min > lon_max means the box wraps
// across 0 degrees.
struct RegionBox {
  double lat_min, lat_max;
  double lon_min, lon_max;

  static RegionBox preset(const std::string& name);  // "mena", "globe"
};

struct LatWeights {
  std::vector<double> w;  // one per latitude row, mean 1 over the grid
};

// w_i = cos(lat_i) / mean_j cos(lat_j)
LatWeights latitude_weights(const GridSpec& g);

// Rows are a contiguous range; columns may wrap and are listed in the order
// they appear walking eastward from the western edge of the box.
struct CropIndex {
  std::int64_t lat_start = 0;
  std::int64_t lat_count = 0;
  std::vector<std::int64_t> lon_cols;
  bool wrapped = false;
};

CropIndex region_indices(const GridSpec& g, const RegionBox& box);

GridSpec cropped_grid(const GridSpec& g, const CropIndex& ci);

// field is [C, H, W]; returns the [C, H', W'] sub-field and its grid.
std::pair<Tensor, GridSpec> crop_region(const Tensor& field, const GridSpec& g,
                                        const RegionBox& box);
Tensor crop_field(const Tensor& field, const GridSpec& g, const CropIndex& ci);

// Expands a crop outward until its row range and wrapped column list align
// with a patch grid of size p (n_lat and n_lon must be divisible by p).
CropIndex patch_aligned(const CropIndex& ci, const GridSpec& g, std::int64_t p);

}  // namespace stratus
