#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "stratus/attention.h"
#include "stratus/grid.h"
#include "stratus/ops.h"

namespace stratus {

struct ModelConfig {
  std::int64_t embed_dim = 128;
  std::int64_t depth = 4;
  std::int64_t n_heads = 4;
  std::int64_t patch = 2;
  std::int64_t n_lat = 32;
  std::int64_t n_lon = 64;
  std::vector<std::string> input_variables;
  std::vector<std::string> target_variables;
  std::vector<int> lead_times = {12, 24, 36, 48, 60, 72};
  AttentionKernel kernel = AttentionKernel::streaming;
  std::int64_t tile_k = 32;

  void validate() const;
  std::int64_t n_patches() const { return (n_lat / patch) * (n_lon / patch); }
};

// [C, H, W] -> [N_p, C*p*p], channel-major within a token; differentiable.
Tensor patchify(const Tensor& field, std::int64_t p);
Tensor unpatchify(const Tensor& tokens, std::int64_t c, std::int64_t h,
                  std::int64_t w, std::int64_t p);

// Maps the patches of a cropped sub-grid onto the native patch grid so a
// regional forward can reuse the matching position embeddings.
struct PatchMap {
  std::int64_t h_cells = 0, w_cells = 0;
  std::vector<std::int64_t> global_patch;  // row-major over regional patches
};

// Forward hook for parameter-efficient adapters on the model's linears.
class AdapterHook {
 public:
  virtual ~AdapterHook() = default;
  virtual bool handles(const std::string& path) const = 0;
  virtual Tensor forward(const std::string& path, const Tensor& x,
                         const Tensor& w, const Tensor& b) = 0;
  virtual void begin_forward() {}
  virtual std::vector<std::string> param_paths() const = 0;
  virtual Tensor& param(const std::string& path) = 0;
  virtual std::int64_t param_count() const = 0;
};

struct ParamRef {
  std::string path;
  Tensor* slot;
};

enum class ParamFilter { all, trainable, frozen };

// Patch-token transformer over a variable-tokenized state: per-variable
// patch embeddings, a learned-query aggregation over variables at each
// position, lead-time conditioned encoder blocks, and a per-patch head.
class ForecastModel {
 public:
  ForecastModel() = default;
  ForecastModel(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }

  // input is [D, H', W'] where the patch map describes (H', W'); the native
  // map is used when pm is null. Output is [D_hat, H', W'].
  Tensor forward(const Tensor& input, int lead_hours,
                 const PatchMap* pm = nullptr) const;

  // [D, N_p, e] per-variable tokens, before aggregation.
  Tensor variable_tokenize(const Tensor& input, const PatchMap* pm = nullptr) const;
  // [D, N_p, e] -> [N_p, e] via the learned aggregation query.
  Tensor variable_aggregate(const Tensor& tokens) const;
  Tensor lead_time_embed(int lead_hours) const;

  PatchMap native_map() const;
  PatchMap region_map(const CropIndex& aligned) const;

  // base parameters
  const std::map<std::string, Tensor>& params() const { return params_; }
  const Tensor& param(const std::string& path) const;
  void set_param(const std::string& path, Tensor v);
  bool is_trainable(const std::string& path) const;
  void set_trainable(const std::string& path, bool on);
  void freeze_all();
  void unfreeze_all();

  // base trainables plus adapter parameters, deterministic order
  std::vector<ParamRef> trainable_params();
  std::int64_t count_parameters(ParamFilter f) const;

  void set_adapter(std::shared_ptr<AdapterHook> hook);
  void clear_adapter();
  std::shared_ptr<AdapterHook> adapter() const { return hook_; }

  ForecastModel clone() const;

 private:
  Tensor apply_linear(const std::string& path, const Tensor& x) const;
  Tensor block_forward(std::int64_t i, const Tensor& x) const;
  void init_params(std::uint64_t seed);

  ModelConfig cfg_;
  std::map<std::string, Tensor> params_;
  std::map<std::string, bool> trainable_;
  std::shared_ptr<AdapterHook> hook_;
};

// Binary checkpoint: JSON header (config, parameter manifest, caller extra)
// followed by raw little-endian 64-bit floats in header order. Round-trips
// bit-exactly.
void save_checkpoint(const ForecastModel& m, const std::string& path,
                     const std::string& extra_json = "{}");
struct LoadedCheckpoint {
  ForecastModel model;
  std::string extra_json;
};
LoadedCheckpoint load_checkpoint(const std::string& path);

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& s);

}  // namespace stratus
