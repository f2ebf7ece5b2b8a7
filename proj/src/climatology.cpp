#include "stratus/climatology.h"

namespace stratus {

Climatology compute_climatology(const Dataset& ds,
                                const std::vector<std::int64_t>& t_indices,
                                const std::vector<std::string>& vars) {
  if (t_indices.empty())
    throw DataError("climatology: no timestamps");
  const auto& m = ds.manifest();
  std::int64_t fs_count = ds.frame_size();
  std::vector<double> acc(static_cast<std::size_t>(
      static_cast<std::int64_t>(vars.size()) * fs_count), 0.0);
  for (std::size_t d = 0; d < vars.size(); ++d) {
    std::int64_t v = m.var_index(vars[d]);
    const auto& raw = ds.raw(v);
    double* dst = acc.data() + static_cast<std::int64_t>(d) * fs_count;
    for (auto t : t_indices) {
      const float* f = raw.data() + t * fs_count;
      for (std::int64_t i = 0; i < fs_count; ++i)
        dst[i] += static_cast<double>(f[i]);
    }
  }
  double inv = 1.0 / static_cast<double>(t_indices.size());
  for (auto& x : acc) x *= inv;
  Climatology c;
  c.variables = vars;
  c.mean = Tensor::from_values({static_cast<std::int64_t>(vars.size()),
                                m.grid.n_lat, m.grid.n_lon},
                               std::move(acc));
  return c;
}

Climatology crop_climatology(const Climatology& c, const GridSpec& g,
                             const CropIndex& ci) {
  Climatology out;
  out.variables = c.variables;
  out.mean = crop_field(c.mean, g, ci);
  return out;
}

}  // namespace stratus
