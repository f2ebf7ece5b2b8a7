#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "stratus/model.h"

namespace stratus {

enum class AdapterKind { lora, reslora, glora };

// Which linear maps inside each encoder block receive adapters.
enum class TargetSet { attention, attention_fc1, attention_fc1fc2 };

std::string to_string(AdapterKind k);
AdapterKind adapter_kind_from_string(const std::string& s);
std::string to_string(TargetSet t);
TargetSet target_set_from_string(const std::string& s);

// Adapter target paths for a model config, block-major, fixed order.
std::vector<std::string> target_paths(const ModelConfig& cfg, TargetSet t);

// Structure of one trainable support tensor: absent, a single scalar, a
// full vector along the natural axis, or a rank-r factored pair.
enum class SupportTag { none, scalar, vec, low_rank };

std::string to_string(SupportTag t);
SupportTag support_tag_from_string(const std::string& s);

// Per-layer structure choice for the five supports of a generalized adapter:
// u scales the frozen weight, v adds to it, x is a learned prompt folded
// through the weight into a bias term, y scales the frozen bias, z shifts it.
struct SupportTags {
  SupportTag u = SupportTag::none;
  SupportTag v = SupportTag::none;
  SupportTag x = SupportTag::none;
  SupportTag y = SupportTag::none;
  SupportTag z = SupportTag::none;

  bool operator==(const SupportTags&) const = default;
};

struct AdapterSpec {
  AdapterKind kind = AdapterKind::lora;
  TargetSet targets = TargetSet::attention;
  std::int64_t rank = 16;
  // scaling = alpha / rank; alpha < 0 means alpha = rank (scaling 1).
  double alpha = -1.0;
  bool train_head = true;
  std::uint64_t seed = 7;
  // one entry per target path for generalized adapters; empty = all none
  std::vector<SupportTags> tags;

  double scaling() const { return (alpha < 0 ? double(rank) : alpha) / double(rank); }
};

// y = x W^T (+ b) + scaling * (x A^T) B^T, the update applied as two
// low-rank products; B A is never materialized here.
Tensor lora_forward(const Tensor& x, const Tensor& w, const Tensor& b,
                    const Tensor& a, const Tensor& b_up, double scaling);

// Dense merge for inference: W + scaling * B A, and its inverse.
Tensor merge_adapter(const Tensor& w, const Tensor& a, const Tensor& b_up,
                     double scaling);
Tensor unmerge_adapter(const Tensor& merged, const Tensor& a,
                       const Tensor& b_up, double scaling);

// Generalized adapted linear: (W + W u + v) x + fold(x_prompt, W) + y.b + z + b,
// each support shaped by its tag; all-none reproduces the base layer exactly.
Tensor glora_forward(const Tensor& x, const Tensor& w, const Tensor& b,
                     const SupportTags& tags,
                     const std::map<std::string, Tensor>& sup);

// State for one adapted linear map.
struct TargetAdapter {
  std::string path;       // e.g. "blocks.0.attn.q"
  std::int64_t d = 0, k = 0;
  Tensor a, b;            // low-rank pair, [r,k] and [d,r]
  std::int64_t res_prev = -1;  // index of the residual tap, -1 = none
  SupportTags tags;            // generalized supports
  std::map<std::string, Tensor> sup;
};

// A set of adapters attached to a model's linears, one per target path.
// Hooks into ForecastModel::forward; owns all trainable adapter state.
class AdapterSet : public AdapterHook {
 public:
  AdapterSet(const ForecastModel& base, AdapterSpec spec);

  bool handles(const std::string& path) const override;
  Tensor forward(const std::string& path, const Tensor& x, const Tensor& w,
                 const Tensor& b) override;
  void begin_forward() override;
  std::vector<std::string> param_paths() const override;
  Tensor& param(const std::string& path) override;
  std::int64_t param_count() const override;

  const AdapterSpec& spec() const { return spec_; }
  const std::vector<TargetAdapter>& targets() const { return targets_; }
  TargetAdapter& target(const std::string& path);

 private:
  void build_param_index();

  AdapterSpec spec_;
  std::vector<TargetAdapter> targets_;
  std::map<std::string, std::size_t> by_path_;
  std::map<std::string, Tensor*> param_index_;
  std::map<std::string, Tensor> branch_cache_;  // per-forward residual taps
};

// Freezes the whole base model (head stays trainable when the spec says so),
// builds the adapter set, and attaches it. The adapter parameters become the
// only trainables at the target paths.
std::shared_ptr<AdapterSet> attach_adapter(ForecastModel& model,
                                           const AdapterSpec& spec);

// Adapter-only checkpoint: JSON header (kind, targets, shapes) + raw 64-bit
// floats. Round-trips bit-exactly; loads onto any base whose target weights
// match the recorded shapes.
void save_adapter(const AdapterSet& set, const std::string& path);
std::shared_ptr<AdapterSet> load_adapter(const std::string& path,
                                         const ForecastModel& base);

// --- structure search over per-layer support tags ---

struct SearchGenome {
  std::vector<SupportTags> tags;  // one per layer
  double fitness = 0.0;           // validation loss, lower is better
};

struct SearchSpace {
  std::vector<std::string> layer_paths;
  std::vector<SupportTag> allowed = {SupportTag::none, SupportTag::scalar,
                                     SupportTag::vec, SupportTag::low_rank};
  std::int64_t rank = 4;
};

struct SearchConfig {
  std::int64_t population = 8;
  std::int64_t budget = 50;      // unique fitness evaluations
  std::int64_t tournament = 2;
  double p_mutation = 0.15;
  std::uint64_t seed = 0;
};

// (mu+lambda) evolution with tournament selection, uniform crossover, and
// per-gene mutation, finished by greedy coordinate sweeps over the best
// genome when the budget allows (or when evolution stalls). Fitness values
// are memoized so only novel genomes spend budget. Deterministic for a
// fixed seed and deterministic val_fn.
SearchGenome evolutionary_search(
    const SearchSpace& space, const SearchConfig& cfg,
    const std::function<double(const SearchGenome&)>& val_fn);

}  // namespace stratus
