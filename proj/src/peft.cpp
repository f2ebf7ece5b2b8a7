#include "stratus/peft.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>

#include "json.hpp"
#include "stratus/kernels.h"
#include "stratus/rng.h"

namespace stratus {

using nlohmann::json;

std::string to_string(AdapterKind k) {
  switch (k) {
    case AdapterKind::lora: return "lora";
    case AdapterKind::reslora: return "reslora";
    case AdapterKind::glora: return "glora";
  }
  throw ConfigError("unknown adapter kind");
}

AdapterKind adapter_kind_from_string(const std::string& s) {
  if (s == "lora") return AdapterKind::lora;
  if (s == "reslora") return AdapterKind::reslora;
  if (s == "glora") return AdapterKind::glora;
  throw ConfigError("unknown adapter kind '" + s + "'");
}

std::string to_string(TargetSet t) {
  switch (t) {
    case TargetSet::attention: return "attention";
    case TargetSet::attention_fc1: return "attention_fc1";
    case TargetSet::attention_fc1fc2: return "attention_fc1fc2";
  }
  throw ConfigError("unknown target set");
}

TargetSet target_set_from_string(const std::string& s) {
  if (s == "attention") return TargetSet::attention;
  if (s == "attention_fc1") return TargetSet::attention_fc1;
  if (s == "attention_fc1fc2") return TargetSet::attention_fc1fc2;
  throw ConfigError("unknown target set '" + s + "'");
}

std::string to_string(SupportTag t) {
  switch (t) {
    case SupportTag::none: return "none";
    case SupportTag::scalar: return "scalar";
    case SupportTag::vec: return "vector";
    case SupportTag::low_rank: return "low_rank";
  }
  throw ConfigError("unknown support tag");
}

SupportTag support_tag_from_string(const std::string& s) {
  if (s == "none") return SupportTag::none;
  if (s == "scalar") return SupportTag::scalar;
  if (s == "vector") return SupportTag::vec;
  if (s == "low_rank") return SupportTag::low_rank;
  throw ConfigError("unknown support tag '" + s + "'");
}

std::vector<std::string> target_paths(const ModelConfig& cfg, TargetSet t) {
  std::vector<std::string> out;
  for (std::int64_t i = 0; i < cfg.depth; ++i) {
    std::string b = "blocks." + std::to_string(i) + ".";
    for (const char* n : {"q", "k", "v", "out"}) out.push_back(b + "attn." + n);
    if (t == TargetSet::attention_fc1 || t == TargetSet::attention_fc1fc2)
      out.push_back(b + "mlp.fc1");
    if (t == TargetSet::attention_fc1fc2) out.push_back(b + "mlp.fc2");
  }
  return out;
}

Tensor lora_forward(const Tensor& x, const Tensor& w, const Tensor& b,
                    const Tensor& a, const Tensor& b_up, double scaling) {
  if (w.ndim() != 2 || a.ndim() != 2 || b_up.ndim() != 2)
    throw ShapeError("lora_forward: w, a, b_up must be 2-d");
  std::int64_t d = w.dim(0), k = w.dim(1), r = a.dim(0);
  if (a.dim(1) != k || b_up.dim(0) != d || b_up.dim(1) != r)
    throw ShapeError("lora_forward: a " + shape_str(a.shape()) + ", b_up " +
                     shape_str(b_up.shape()) + " against w " +
                     shape_str(w.shape()));
  Tensor y = linear(x, w, b);
  Tensor branch = scale(linear(linear(x, a), b_up), scaling);
  return add(y, branch);
}

namespace {

// dense scaling*B·A, tape-free; only used when merging for inference
std::vector<double> dense_update(const Tensor& a, const Tensor& b_up,
                                 double scaling) {
  std::int64_t d = b_up.dim(0), r = b_up.dim(1), k = a.dim(1);
  std::vector<double> ba(static_cast<std::size_t>(d * k));
  kernels::ref::matmul(b_up.data(), a.data(), ba.data(), d, r, k);
  for (double& v : ba) v *= scaling;
  return ba;
}

}  // namespace

Tensor merge_adapter(const Tensor& w, const Tensor& a, const Tensor& b_up,
                     double scaling) {
  if (w.dim(0) != b_up.dim(0) || w.dim(1) != a.dim(1))
    throw ShapeError("merge_adapter: w " + shape_str(w.shape()) +
                     " against a " + shape_str(a.shape()) + ", b_up " +
                     shape_str(b_up.shape()));
  std::vector<double> ba = dense_update(a, b_up, scaling);
  std::vector<double> out = w.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += ba[i];
  return Tensor::from_values(w.shape(), std::move(out));
}

Tensor unmerge_adapter(const Tensor& merged, const Tensor& a,
                       const Tensor& b_up, double scaling) {
  if (merged.dim(0) != b_up.dim(0) || merged.dim(1) != a.dim(1))
    throw ShapeError("unmerge_adapter: shape mismatch");
  std::vector<double> ba = dense_update(a, b_up, scaling);
  std::vector<double> out = merged.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= ba[i];
  return Tensor::from_values(merged.shape(), std::move(out));
}

Tensor glora_forward(const Tensor& x, const Tensor& w, const Tensor& b,
                     const SupportTags& tags,
                     const std::map<std::string, Tensor>& sup) {
  if (x.ndim() != 2 || w.ndim() != 2)
    throw ShapeError("glora_forward: x and w must be 2-d, got " +
                     shape_str(x.shape()) + " and " + shape_str(w.shape()));
  std::int64_t n = x.dim(0), d = w.dim(0), k = w.dim(1);
  if (x.dim(1) != k)
    throw ShapeError("glora_forward: x " + shape_str(x.shape()) +
                     " against w " + shape_str(w.shape()));
  auto get = [&](const char* name) -> const Tensor& {
    auto it = sup.find(name);
    if (it == sup.end())
      throw ContractError(std::string("glora_forward: missing support '") +
                          name + "'");
    return it->second;
  };

  Tensor base = linear(x, w);
  Tensor out = base;

  // weight-scaling support
  switch (tags.u) {
    case SupportTag::none: break;
    case SupportTag::scalar:
      out = add(out, mul(expand(get("u"), {n, d}), base));
      break;
    case SupportTag::vec:  // per-input-dimension scale
      out = add(out, linear(mul(x, expand(get("u"), {n, k})), w));
      break;
    case SupportTag::low_rank:
      out = add(out, linear(linear(linear(x, get("u.b")), get("u.a")), w));
      break;
  }

  // weight-shift support
  if (tags.v == SupportTag::low_rank) {
    out = add(out, linear(linear(x, get("v.b")), get("v.a")));
  } else if (tags.v != SupportTag::none) {
    // rank-one shift: row sums of x times a scalar or per-output vector
    Tensor rowsum = linear(x, Tensor::full({1, k}, 1.0));
    out = add(out, mul(expand(get("v"), {n, d}), expand(rowsum, {n, d})));
  }

  // bias-shaped contributions, accumulated into one vector
  Tensor extra;
  auto acc = [&](Tensor t) { extra = extra.defined() ? add(extra, t) : t; };

  // prompt folded through the frozen weight
  switch (tags.x) {
    case SupportTag::none: break;
    case SupportTag::scalar:
      acc(mul(expand(get("x"), {d}),
              reshape(linear(Tensor::full({1, k}, 1.0), w), {d})));
      break;
    case SupportTag::vec:
      acc(reshape(linear(reshape(get("x"), {1, k}), w), {d}));
      break;
    case SupportTag::low_rank: {
      const Tensor& xb = get("x.b");
      acc(reshape(
          linear(linear(reshape(xb, {1, xb.dim(0)}), get("x.a")), w), {d}));
      break;
    }
  }

  if (b.defined()) {
    switch (tags.y) {
      case SupportTag::none: break;
      case SupportTag::scalar: acc(mul(expand(get("y"), {d}), b)); break;
      case SupportTag::vec: acc(mul(get("y"), b)); break;
      case SupportTag::low_rank: {
        const Tensor& yb = get("y.b");
        acc(mul(reshape(linear(reshape(yb, {1, yb.dim(0)}), get("y.a")), {d}),
                b));
        break;
      }
    }
  }

  switch (tags.z) {
    case SupportTag::none: break;
    case SupportTag::scalar: acc(expand(get("z"), {d})); break;
    case SupportTag::vec: acc(get("z")); break;
    case SupportTag::low_rank: {
      const Tensor& zb = get("z.b");
      acc(reshape(linear(reshape(zb, {1, zb.dim(0)}), get("z.a")), {d}));
      break;
    }
  }

  if (b.defined()) out = add_bias(out, b);
  if (extra.defined()) out = add_bias(out, extra);
  return out;
}

namespace {

struct SupportPlan {
  const char* key;  // "u", "v", "x", "y", "z"
  SupportTag tag;
  // shapes: scalar [1]; vector [vec_len]; low-rank pair a/b
  std::int64_t vec_len;
  Shape a_shape, b_shape;  // a zero-initialized, b seeded
};

std::vector<SupportPlan> support_plans(const SupportTags& tags, std::int64_t d,
                                       std::int64_t k, std::int64_t r) {
  return {
      {"u", tags.u, k, {k, r}, {r, k}},
      {"v", tags.v, d, {d, r}, {r, k}},
      {"x", tags.x, k, {k, r}, {r}},
      {"y", tags.y, d, {d, r}, {r}},
      {"z", tags.z, d, {d, r}, {r}},
  };
}

}  // namespace

AdapterSet::AdapterSet(const ForecastModel& base, AdapterSpec spec)
    : spec_(std::move(spec)) {
  if (spec_.rank < 1) throw ConfigError("adapter: rank must be >= 1");
  std::vector<std::string> paths = target_paths(base.config(), spec_.targets);
  if (spec_.kind == AdapterKind::glora && !spec_.tags.empty() &&
      spec_.tags.size() != paths.size())
    throw ConfigError("adapter: " + std::to_string(spec_.tags.size()) +
                      " tag sets for " + std::to_string(paths.size()) +
                      " target layers");
  Rng rng(spec_.seed);
  // one linear map adapted per block and role; blocks.<i>.X taps blocks.<i-1>.X
  std::int64_t per_block =
      static_cast<std::int64_t>(paths.size()) / base.config().depth;
  for (std::size_t t = 0; t < paths.size(); ++t) {
    const std::string& path = paths[t];
    const Tensor& w = base.param(path + ".w");  // throws on unknown path
    if (w.ndim() != 2)
      throw ContractError("adapter: target '" + path + "' is not a linear map");
    TargetAdapter ta;
    ta.path = path;
    ta.d = w.dim(0);
    ta.k = w.dim(1);
    std::int64_t r = spec_.rank;
    if (r > std::min(ta.d, ta.k))
      throw ConfigError("adapter: rank " + std::to_string(r) + " exceeds min(" +
                        std::to_string(ta.d) + ", " + std::to_string(ta.k) +
                        ") at '" + path + "'");
    if (spec_.kind == AdapterKind::glora) {
      ta.tags = spec_.tags.empty() ? SupportTags{} : spec_.tags[t];
      for (const auto& p : support_plans(ta.tags, ta.d, ta.k, r)) {
        switch (p.tag) {
          case SupportTag::none: break;
          case SupportTag::scalar:
            ta.sup.emplace(p.key, Tensor::zeros({1}));
            break;
          case SupportTag::vec:
            ta.sup.emplace(p.key, Tensor::zeros({p.vec_len}));
            break;
          case SupportTag::low_rank:
            ta.sup.emplace(std::string(p.key) + ".a", Tensor::zeros(p.a_shape));
            ta.sup.emplace(std::string(p.key) + ".b",
                           Tensor::randn(p.b_shape, rng, 0.02));
            break;
        }
      }
    } else {
      ta.a = Tensor::randn({r, ta.k}, rng, 0.02);
      ta.b = Tensor::zeros({ta.d, r});
      if (spec_.kind == AdapterKind::reslora &&
          static_cast<std::int64_t>(t) >= per_block)
        ta.res_prev = static_cast<std::int64_t>(t) - per_block;
    }
    if (!by_path_.emplace(path, targets_.size()).second)
      throw ContractError("adapter: target '" + path + "' attached twice");
    targets_.push_back(std::move(ta));
  }
  build_param_index();
}

void AdapterSet::build_param_index() {
  for (auto& ta : targets_) {
    std::string pfx = "adapter." + ta.path + ".";
    if (spec_.kind == AdapterKind::glora) {
      for (auto& kv : ta.sup) param_index_.emplace(pfx + kv.first, &kv.second);
    } else {
      param_index_.emplace(pfx + "A", &ta.a);
      param_index_.emplace(pfx + "B", &ta.b);
    }
  }
}

bool AdapterSet::handles(const std::string& path) const {
  return by_path_.count(path) > 0;
}

void AdapterSet::begin_forward() { branch_cache_.clear(); }

Tensor AdapterSet::forward(const std::string& path, const Tensor& x,
                           const Tensor& w, const Tensor& b) {
  auto it = by_path_.find(path);
  if (it == by_path_.end())
    throw ContractError("adapter: no adapter at '" + path + "'");
  TargetAdapter& ta = targets_[it->second];
  if (spec_.kind == AdapterKind::glora)
    return glora_forward(x, w, b, ta.tags, ta.sup);

  Tensor branch = scale(linear(linear(x, ta.a), ta.b), spec_.scaling());
  Tensor out = add(linear(x, w, b), branch);
  if (spec_.kind == AdapterKind::reslora) {
    if (ta.res_prev >= 0) {
      auto c = branch_cache_.find(targets_[static_cast<std::size_t>(ta.res_prev)].path);
      if (c == branch_cache_.end())
        throw ContractError("adapter: residual tap for '" + path +
                            "' not cached; run blocks in order");
      if (c->second.shape() != branch.shape())
        throw ShapeError("adapter: residual shape " +
                         shape_str(c->second.shape()) + " against " +
                         shape_str(branch.shape()) + " at '" + path +
                         "' and no projection is configured");
      out = add(out, c->second);
    }
    branch_cache_[path] = branch;
  }
  return out;
}

std::vector<std::string> AdapterSet::param_paths() const {
  std::vector<std::string> out;
  for (const auto& ta : targets_) {
    std::string pfx = "adapter." + ta.path + ".";
    if (spec_.kind == AdapterKind::glora) {
      for (const auto& kv : ta.sup) out.push_back(pfx + kv.first);
    } else {
      out.push_back(pfx + "A");
      out.push_back(pfx + "B");
    }
  }
  return out;
}

Tensor& AdapterSet::param(const std::string& path) {
  auto it = param_index_.find(path);
  if (it == param_index_.end())
    throw ContractError("adapter: unknown parameter '" + path + "'");
  return *it->second;
}

std::int64_t AdapterSet::param_count() const {
  std::int64_t n = 0;
  for (const auto& kv : param_index_) n += kv.second->numel();
  return n;
}

TargetAdapter& AdapterSet::target(const std::string& path) {
  auto it = by_path_.find(path);
  if (it == by_path_.end())
    throw ContractError("adapter: no adapter at '" + path + "'");
  return targets_[it->second];
}

std::shared_ptr<AdapterSet> attach_adapter(ForecastModel& model,
                                           const AdapterSpec& spec) {
  if (model.adapter())
    throw ContractError("adapter: model already has an adapter attached");
  auto set = std::make_shared<AdapterSet>(model, spec);
  model.freeze_all();
  if (spec.train_head) {
    model.set_trainable("head.w", true);
    model.set_trainable("head.b", true);
  }
  model.set_adapter(set);
  return set;
}

namespace {

json tags_json(const SupportTags& t) {
  return json{{"u", to_string(t.u)},
              {"v", to_string(t.v)},
              {"x", to_string(t.x)},
              {"y", to_string(t.y)},
              {"z", to_string(t.z)}};
}

SupportTags tags_from(const json& j) {
  SupportTags t;
  t.u = support_tag_from_string(j.at("u").get<std::string>());
  t.v = support_tag_from_string(j.at("v").get<std::string>());
  t.x = support_tag_from_string(j.at("x").get<std::string>());
  t.y = support_tag_from_string(j.at("y").get<std::string>());
  t.z = support_tag_from_string(j.at("z").get<std::string>());
  return t;
}

// parameter names of one target, in serialization order
std::vector<std::string> entry_param_names(const AdapterSpec& spec,
                                           const TargetAdapter& ta) {
  std::vector<std::string> names;
  if (spec.kind == AdapterKind::glora) {
    for (const auto& kv : ta.sup) names.push_back(kv.first);
  } else {
    names = {"A", "B"};
  }
  return names;
}

const Tensor& entry_param(const AdapterSpec& spec, const TargetAdapter& ta,
                          const std::string& name) {
  if (spec.kind != AdapterKind::glora) return name == "A" ? ta.a : ta.b;
  return ta.sup.at(name);
}

}  // namespace

void save_adapter(const AdapterSet& set, const std::string& path) {
  const AdapterSpec& spec = set.spec();
  json header;
  header["format"] = 1;
  header["kind"] = to_string(spec.kind);
  header["targets"] = to_string(spec.targets);
  header["rank"] = spec.rank;
  header["alpha"] = spec.alpha;
  header["train_head"] = spec.train_head;
  header["seed"] = spec.seed;
  json entries = json::array();
  for (const auto& ta : set.targets()) {
    json e;
    e["path"] = ta.path;
    e["weight_shape"] = Shape{ta.d, ta.k};
    e["tags"] = tags_json(ta.tags);
    json plist = json::array();
    for (const auto& n : entry_param_names(spec, ta))
      plist.push_back({{"name", n}, {"shape", entry_param(spec, ta, n).shape()}});
    e["params"] = plist;
    entries.push_back(e);
  }
  header["entries"] = entries;
  std::string h = header.dump();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("adapter: cannot write " + path);
  const char magic[8] = {'S', 'T', 'R', 'T', 'A', 'D', 'P', '1'};
  f.write(magic, 8);
  std::uint64_t hlen = h.size();
  f.write(reinterpret_cast<const char*>(&hlen), 8);
  f.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const auto& ta : set.targets())
    for (const auto& n : entry_param_names(spec, ta)) {
      const auto& v = entry_param(spec, ta, n).values();
      f.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
    }
  if (!f) throw DataError("adapter: short write on " + path);
}

std::shared_ptr<AdapterSet> load_adapter(const std::string& path,
                                         const ForecastModel& base) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("adapter: cannot open " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::string(magic, 8) != "STRTADP1")
    throw DataError("adapter: bad magic in " + path);
  std::uint64_t hlen = 0;
  f.read(reinterpret_cast<char*>(&hlen), 8);
  std::string h(hlen, '\0');
  f.read(h.data(), static_cast<std::streamsize>(hlen));
  if (!f) throw DataError("adapter: truncated header in " + path);
  json header = json::parse(h);

  AdapterSpec spec;
  spec.kind = adapter_kind_from_string(header.at("kind").get<std::string>());
  spec.targets = target_set_from_string(header.at("targets").get<std::string>());
  spec.rank = header.at("rank").get<std::int64_t>();
  spec.alpha = header.at("alpha").get<double>();
  spec.train_head = header.at("train_head").get<bool>();
  spec.seed = header.at("seed").get<std::uint64_t>();
  const json& entries = header.at("entries");
  if (spec.kind == AdapterKind::glora)
    for (const auto& e : entries) spec.tags.push_back(tags_from(e.at("tags")));

  // the stored targets must exist on this base with the recorded shapes
  for (const auto& e : entries) {
    std::string tp = e.at("path").get<std::string>();
    Shape ws = e.at("weight_shape").get<Shape>();
    const Tensor& w = base.param(tp + ".w");
    if (w.shape() != ws)
      throw DataError("adapter: '" + tp + "' is " + shape_str(ws) +
                      " in the checkpoint but " + shape_str(w.shape()) +
                      " in the base model");
  }

  auto set = std::make_shared<AdapterSet>(base, spec);
  if (entries.size() != set->targets().size())
    throw DataError("adapter: checkpoint has " +
                    std::to_string(entries.size()) + " targets, base expects " +
                    std::to_string(set->targets().size()));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const json& e = entries[i];
    std::string tp = e.at("path").get<std::string>();
    if (tp != set->targets()[i].path)
      throw DataError("adapter: target '" + tp + "' does not match base '" +
                      set->targets()[i].path + "'");
    for (const auto& p : e.at("params")) {
      std::string name = p.at("name").get<std::string>();
      Shape shape = p.at("shape").get<Shape>();
      std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
      f.read(reinterpret_cast<char*>(v.data()),
             static_cast<std::streamsize>(v.size() * sizeof(double)));
      if (!f) throw DataError("adapter: truncated data in " + path);
      Tensor& slot = set->param("adapter." + tp + "." + name);
      if (slot.shape() != shape)
        throw DataError("adapter: parameter '" + tp + "." + name + "' is " +
                        shape_str(shape) + " in the checkpoint but " +
                        shape_str(slot.shape()) + " in the base model");
      slot = Tensor::from_values(shape, std::move(v));
    }
  }
  return set;
}

// --- evolutionary structure search ---

namespace {

std::array<SupportTag SupportTags::*, 5> tag_members() {
  return {&SupportTags::u, &SupportTags::v, &SupportTags::x, &SupportTags::y,
          &SupportTags::z};
}

SupportTag get_gene(const SearchGenome& g, std::size_t i) {
  return g.tags[i / 5].*(tag_members()[i % 5]);
}

void set_gene(SearchGenome& g, std::size_t i, SupportTag t) {
  g.tags[i / 5].*(tag_members()[i % 5]) = t;
}

std::string genome_key(const SearchGenome& g) {
  std::string s;
  for (std::size_t i = 0; i < g.tags.size() * 5; ++i)
    s += static_cast<char>('0' + static_cast<int>(get_gene(g, i)));
  return s;
}

}  // namespace

SearchGenome evolutionary_search(
    const SearchSpace& space, const SearchConfig& cfg,
    const std::function<double(const SearchGenome&)>& val_fn) {
  if (space.layer_paths.empty())
    throw ConfigError("search: no layers to search over");
  if (space.allowed.empty()) throw ConfigError("search: no tags allowed");
  if (cfg.population < 2) throw ConfigError("search: population must be >= 2");
  if (cfg.budget < cfg.population)
    throw ConfigError("search: budget smaller than population");
  if (cfg.tournament < 1) throw ConfigError("search: tournament must be >= 1");

  const std::size_t genes = space.layer_paths.size() * 5;
  Rng rng(cfg.seed);
  std::map<std::string, double> memo;
  std::int64_t evals = 0;

  // number of distinct genomes, saturated; lets tiny spaces terminate early
  double space_size = std::pow(static_cast<double>(space.allowed.size()),
                               static_cast<double>(genes));

  auto evaluate = [&](SearchGenome& g) -> bool {
    std::string key = genome_key(g);
    auto it = memo.find(key);
    if (it != memo.end()) {
      g.fitness = it->second;
      return true;
    }
    if (evals >= cfg.budget) return false;
    g.fitness = val_fn(g);
    memo.emplace(std::move(key), g.fitness);
    ++evals;
    return true;
  };

  auto pick_tag = [&]() {
    return space.allowed[static_cast<std::size_t>(
        rng.index(static_cast<std::int64_t>(space.allowed.size())))];
  };
  // mutation is forced-different: resampling to the current value would be a
  // no-op child, which only burns a slot
  auto mutate_tag = [&](SupportTag cur) {
    if (space.allowed.size() < 2) return cur;
    SupportTag t = cur;
    while (t == cur) t = pick_tag();
    return t;
  };
  auto random_genome = [&]() {
    SearchGenome g;
    g.tags.resize(space.layer_paths.size());
    for (std::size_t i = 0; i < genes; ++i) set_gene(g, i, pick_tag());
    return g;
  };

  // The population starts from the do-nothing genome: it is the reference
  // every structure must beat, so the result can never be worse than running
  // the frozen base unadapted. The rest of the population is random.
  std::vector<SearchGenome> pop;
  {
    SearchGenome baseline;
    baseline.tags.resize(space.layer_paths.size());
    bool none_allowed = std::find(space.allowed.begin(), space.allowed.end(),
                                  SupportTag::none) != space.allowed.end();
    if (!none_allowed) baseline = random_genome();
    if (evaluate(baseline)) pop.push_back(std::move(baseline));
  }
  for (std::int64_t i = 1; i < cfg.population; ++i) {
    SearchGenome g = random_genome();
    if (!evaluate(g)) break;
    pop.push_back(std::move(g));
  }
  if (pop.empty()) throw ConfigError("search: budget exhausted before start");

  auto best_of = [&](const std::vector<SearchGenome>& v) {
    std::size_t b = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
      if (v[i].fitness < v[b].fitness) b = i;
    return b;
  };
  SearchGenome best = pop[best_of(pop)];

  auto tournament = [&]() -> const SearchGenome& {
    auto draw = [&]() {
      return static_cast<std::size_t>(
          rng.index(static_cast<std::int64_t>(pop.size())));
    };
    std::size_t b = draw();
    for (std::int64_t t = 1; t < cfg.tournament; ++t) {
      std::size_t c = draw();
      if (pop[c].fitness < pop[b].fitness) b = c;
    }
    return pop[b];
  };

  auto make_child = [&]() {
    const SearchGenome& p1 = tournament();
    const SearchGenome& p2 = tournament();
    SearchGenome child;
    child.tags.resize(space.layer_paths.size());
    for (std::size_t gi = 0; gi < genes; ++gi)
      set_gene(child, gi,
               rng.uniform() < 0.5 ? get_gene(p1, gi) : get_gene(p2, gi));
    for (std::size_t gi = 0; gi < genes; ++gi)
      if (rng.uniform() < cfg.p_mutation)
        set_gene(child, gi, mutate_tag(get_gene(child, gi)));
    return child;
  };

  // Greedy first-improvement coordinate sweeps over the incumbent. For a
  // fitness that decomposes over genes a single sweep lands on the exact
  // optimum, which crossover and mutation alone rarely manage on budgets
  // this small. Returns false when the budget ran out mid-sweep.
  auto refine = [&](SearchGenome& g) {
    bool improving = true;
    while (improving) {
      improving = false;
      for (std::size_t gi = 0; gi < genes; ++gi) {
        SupportTag cur = get_gene(g, gi);
        for (SupportTag t : space.allowed) {
          if (t == cur) continue;
          SearchGenome cand = g;
          set_gene(cand, gi, t);
          if (!evaluate(cand)) return false;
          if (cand.fitness < g.fitness) {
            g = std::move(cand);
            improving = true;
            break;
          }
        }
      }
    }
    return true;
  };

  // When the budget can fund evolution plus one full sweep, hold the sweep
  // back as the endgame; tighter budgets refine only when evolution stalls.
  const std::int64_t sweep_cost =
      static_cast<std::int64_t>(genes) *
      (static_cast<std::int64_t>(space.allowed.size()) - 1);
  const bool reserve_sweep = cfg.budget >= sweep_cost + 2 * cfg.population;
  std::int64_t stalled = 0;

  // Only novel genomes spend budget, so generations whose children all hit
  // the memo are free; run until the unique-evaluation budget is gone. The
  // generation ceiling is a stall guard for degenerate fitness landscapes.
  const std::int64_t max_generations = 64 * cfg.budget;
  for (std::int64_t gen = 0; gen < max_generations; ++gen) {
    if (evals >= cfg.budget) break;
    if (static_cast<double>(memo.size()) >= space_size) break;
    if ((reserve_sweep &&
         evals + cfg.population + sweep_cost > cfg.budget) ||
        stalled >= 3) {
      bool had_budget = refine(best);
      stalled = 0;
      if (!had_budget || reserve_sweep) break;
      pop.back() = best;  // refined incumbent re-enters; resorted next round
      continue;
    }
    std::vector<SearchGenome> offspring;
    bool out_of_budget = false;
    for (std::int64_t i = 0; i < cfg.population && !out_of_budget; ++i) {
      SearchGenome child = make_child();
      // a few redraws to find a genome not yet scored; duplicates are kept
      // if novelty doesn't turn up, to preserve selection dynamics
      for (int tries = 0; tries < 16 && memo.count(genome_key(child)); ++tries)
        child = make_child();
      if (!evaluate(child)) {
        out_of_budget = true;
        break;
      }
      offspring.push_back(std::move(child));
    }
    for (auto& c : offspring) pop.push_back(std::move(c));
    std::stable_sort(pop.begin(), pop.end(),
                     [](const SearchGenome& a, const SearchGenome& b) {
                       return a.fitness < b.fitness;
                     });
    pop.resize(static_cast<std::size_t>(
        std::min<std::int64_t>(cfg.population,
                               static_cast<std::int64_t>(pop.size()))));
    if (pop[0].fitness < best.fitness) {
      best = pop[0];
      stalled = 0;
    } else {
      ++stalled;
    }
    if (out_of_budget) break;
  }
  return best;
}

}  // namespace stratus
