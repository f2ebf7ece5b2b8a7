#include "stratus/grid.h"

#include <cmath>
#include <string>

namespace stratus {

namespace {
constexpr double kDegToRad = M_PI / 180.0;
}

GridSpec GridSpec::from_resolution(double deg) {
  if (deg <= 0.0 || deg > 90.0)
    throw RegionError("grid: bad resolution " + std::to_string(deg));
  double nlat_f = 180.0 / deg;
  double nlon_f = 360.0 / deg;
  auto n_lat = static_cast<std::int64_t>(std::llround(nlat_f));
  auto n_lon = static_cast<std::int64_t>(std::llround(nlon_f));
  if (std::fabs(nlat_f - static_cast<double>(n_lat)) > 1e-9 ||
      std::fabs(nlon_f - static_cast<double>(n_lon)) > 1e-9)
    throw RegionError("grid: resolution " + std::to_string(deg) +
                      " does not divide 180");
  std::vector<double> lats(static_cast<std::size_t>(n_lat));
  std::vector<double> lons(static_cast<std::size_t>(n_lon));
  for (std::int64_t i = 0; i < n_lat; ++i)
    lats[static_cast<std::size_t>(i)] = -90.0 + deg * (static_cast<double>(i) + 0.5);
  for (std::int64_t j = 0; j < n_lon; ++j)
    lons[static_cast<std::size_t>(j)] = deg * (static_cast<double>(j) + 0.5);
  return custom(std::move(lats), std::move(lons));
}

GridSpec GridSpec::custom(std::vector<double> lats, std::vector<double> lons) {
  if (lats.empty() || lons.empty()) throw RegionError("grid: empty axis");
  for (double v : lats)
    if (v < -90.0 || v > 90.0)
      throw RegionError("grid: latitude " + std::to_string(v) + " out of range");
  for (std::size_t i = 1; i < lats.size(); ++i)
    if (lats[i] <= lats[i - 1])
      throw RegionError("grid: latitudes not strictly increasing");
  for (double v : lons)
    if (v < 0.0 || v >= 360.0)
      throw RegionError("grid: longitude " + std::to_string(v) + " out of range");
  // strictly increasing, or increasing with a single wrap point
  std::int64_t drops = 0;
  for (std::size_t j = 1; j < lons.size(); ++j) {
    if (lons[j] == lons[j - 1]) throw RegionError("grid: duplicate longitude");
    if (lons[j] < lons[j - 1]) ++drops;
  }
  if (drops > 1) throw RegionError("grid: longitudes not in cyclic order");
  GridSpec g;
  g.n_lat = static_cast<std::int64_t>(lats.size());
  g.n_lon = static_cast<std::int64_t>(lons.size());
  g.lat_centers = std::move(lats);
  g.lon_centers = std::move(lons);
  return g;
}

RegionBox RegionBox::preset(const std::string& name) {
  if (name == "mena") return RegionBox{7.0, 40.0, 335.0, 63.0};
  if (name == "globe") return RegionBox{-90.0, 90.0, 0.0, 360.0 - 1e-9};
  throw RegionError("region: unknown preset '" + name + "'");
}

LatWeights latitude_weights(const GridSpec& g) {
  std::vector<double> w(g.lat_centers.size());
  double mean = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    // cos(90 deg) in doubles is ~6e-17, not 0; a pole row weighs nothing
    double lat = g.lat_centers[i];
    w[i] = std::abs(lat) == 90.0 ? 0.0 : std::cos(lat * kDegToRad);
    mean += w[i];
  }
  mean /= static_cast<double>(w.size());
  if (mean <= 0.0)
    throw RegionError("grid: degenerate latitude weights (all poles)");
  for (auto& v : w) v /= mean;
  return LatWeights{std::move(w)};
}

namespace {

bool lon_in_box(double lon, const RegionBox& b) {
  if (b.lon_min <= b.lon_max) return lon >= b.lon_min && lon <= b.lon_max;
  return lon >= b.lon_min || lon <= b.lon_max;  // wraps through 0
}

}  // namespace

CropIndex region_indices(const GridSpec& g, const RegionBox& box) {
  if (box.lat_min > box.lat_max)
    throw RegionError("region: lat_min " + std::to_string(box.lat_min) +
                      " above lat_max " + std::to_string(box.lat_max));
  CropIndex ci;
  std::int64_t first = -1, last = -1;
  for (std::int64_t i = 0; i < g.n_lat; ++i) {
    double lat = g.lat_centers[static_cast<std::size_t>(i)];
    if (lat >= box.lat_min && lat <= box.lat_max) {
      if (first < 0) first = i;
      last = i;
    } else if (first >= 0) {
      break;
    }
  }
  if (first < 0)
    throw RegionError("region: no latitude centers inside box");
  ci.lat_start = first;
  ci.lat_count = last - first + 1;

  std::vector<bool> member(static_cast<std::size_t>(g.n_lon));
  std::int64_t count = 0;
  for (std::int64_t j = 0; j < g.n_lon; ++j) {
    member[static_cast<std::size_t>(j)] =
        lon_in_box(g.lon_centers[static_cast<std::size_t>(j)], box);
    if (member[static_cast<std::size_t>(j)]) ++count;
  }
  if (count == 0) throw RegionError("region: no longitude centers inside box");
  if (count == g.n_lon) {
    for (std::int64_t j = 0; j < g.n_lon; ++j) ci.lon_cols.push_back(j);
    return ci;
  }
  // the membership mask must form one contiguous arc on the circle
  std::int64_t transitions = 0;
  for (std::int64_t j = 0; j < g.n_lon; ++j) {
    bool cur = member[static_cast<std::size_t>(j)];
    bool nxt = member[static_cast<std::size_t>((j + 1) % g.n_lon)];
    if (cur != nxt) ++transitions;
  }
  if (transitions != 2)
    throw RegionError("region: longitude box selects a non-contiguous range");
  std::int64_t start = 0;
  while (member[static_cast<std::size_t>(start)] ||
         !member[static_cast<std::size_t>((start + 1) % g.n_lon)])
    ++start;
  start = (start + 1) % g.n_lon;
  for (std::int64_t c = 0; c < count; ++c)
    ci.lon_cols.push_back((start + c) % g.n_lon);
  ci.wrapped = ci.lon_cols.back() < ci.lon_cols.front();
  return ci;
}

GridSpec cropped_grid(const GridSpec& g, const CropIndex& ci) {
  std::vector<double> lats(
      g.lat_centers.begin() + ci.lat_start,
      g.lat_centers.begin() + ci.lat_start + ci.lat_count);
  std::vector<double> lons;
  lons.reserve(ci.lon_cols.size());
  for (auto j : ci.lon_cols)
    lons.push_back(g.lon_centers[static_cast<std::size_t>(j)]);
  return GridSpec::custom(std::move(lats), std::move(lons));
}

Tensor crop_field(const Tensor& field, const GridSpec& g, const CropIndex& ci) {
  if (field.ndim() != 3)
    throw ShapeError("crop: field must be [C, H, W], got " +
                     shape_str(field.shape()));
  if (field.dim(1) != g.n_lat || field.dim(2) != g.n_lon)
    throw ShapeError("crop: field " + shape_str(field.shape()) +
                     " does not match grid " + std::to_string(g.n_lat) + "x" +
                     std::to_string(g.n_lon));
  std::int64_t c_ct = field.dim(0);
  std::int64_t w = static_cast<std::int64_t>(ci.lon_cols.size());
  std::vector<double> out(static_cast<std::size_t>(c_ct * ci.lat_count * w));
  const double* pf = field.data();
  for (std::int64_t c = 0; c < c_ct; ++c)
    for (std::int64_t i = 0; i < ci.lat_count; ++i)
      for (std::int64_t j = 0; j < w; ++j)
        out[(c * ci.lat_count + i) * w + j] =
            pf[(c * g.n_lat + ci.lat_start + i) * g.n_lon +
               ci.lon_cols[static_cast<std::size_t>(j)]];
  return Tensor::from_values({c_ct, ci.lat_count, w}, std::move(out));
}

std::pair<Tensor, GridSpec> crop_region(const Tensor& field, const GridSpec& g,
                                        const RegionBox& box) {
  CropIndex ci = region_indices(g, box);
  return {crop_field(field, g, ci), cropped_grid(g, ci)};
}

CropIndex patch_aligned(const CropIndex& ci, const GridSpec& g,
                        std::int64_t p) {
  if (p < 1) throw ContractError("patch_aligned: patch size < 1");
  if (g.n_lat % p != 0 || g.n_lon % p != 0)
    throw RegionError("patch_aligned: grid " + std::to_string(g.n_lat) + "x" +
                      std::to_string(g.n_lon) + " not divisible by patch " +
                      std::to_string(p));
  CropIndex out;
  std::int64_t lo = (ci.lat_start / p) * p;
  std::int64_t hi = ((ci.lat_start + ci.lat_count + p - 1) / p) * p;
  if (hi > g.n_lat) hi = g.n_lat;
  out.lat_start = lo;
  out.lat_count = hi - lo;
  // expand the wrapped-ordered column list to patch boundaries
  std::int64_t first = ci.lon_cols.front();
  std::int64_t count = static_cast<std::int64_t>(ci.lon_cols.size());
  if (count == g.n_lon) {
    out.lon_cols = ci.lon_cols;
    out.wrapped = ci.wrapped;
    return out;
  }
  std::int64_t start = (first / p) * p;
  std::int64_t last = ci.lon_cols.back();
  std::int64_t span = last >= first ? last - first + 1
                                    : g.n_lon - first + last + 1;
  span += first - start;
  span = ((span + p - 1) / p) * p;
  if (span > g.n_lon) span = g.n_lon;
  for (std::int64_t c = 0; c < span; ++c)
    out.lon_cols.push_back((start + c) % g.n_lon);
  out.wrapped = out.lon_cols.back() < out.lon_cols.front();
  return out;
}

}  // namespace stratus
