#pragma once

#include "stratus/dataio.h"
#include "stratus/grid.h"

namespace stratus {

// Per-variable mean field over a set of timestamps, in physical units.
struct Climatology {
  std::vector<std::string> variables;
  Tensor mean;  // [D, H, W]
};

Climatology compute_climatology(const Dataset& ds,
                                const std::vector<std::int64_t>& t_indices,
                                const std::vector<std::string>& vars);

Climatology crop_climatology(const Climatology& c, const GridSpec& g,
                             const CropIndex& ci);

}  // namespace stratus
