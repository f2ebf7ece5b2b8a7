#include "stratus/model.h"

#include <cmath>
#include <fstream>
#include <set>

#include "json.hpp"

namespace stratus {

using nlohmann::json;

void ModelConfig::validate() const {
  if (embed_dim < 1 || depth < 1 || n_heads < 1 || patch < 1)
    throw ConfigError("model: embed_dim, depth, n_heads, patch must be >= 1");
  if (embed_dim % n_heads != 0)
    throw ConfigError("model: embed_dim " + std::to_string(embed_dim) +
                      " not divisible by n_heads " + std::to_string(n_heads));
  if (n_lat < patch || n_lon < patch || n_lat % patch != 0 || n_lon % patch != 0)
    throw ConfigError("model: grid " + std::to_string(n_lat) + "x" +
                      std::to_string(n_lon) + " not divisible by patch " +
                      std::to_string(patch));
  if (input_variables.empty())
    throw ConfigError("model: no input variables");
  if (target_variables.empty())
    throw ConfigError("model: no target variables");
  std::set<std::string> seen(input_variables.begin(), input_variables.end());
  if (seen.size() != input_variables.size())
    throw ConfigError("model: duplicate input variable");
  if (lead_times.empty())
    throw ConfigError("model: empty lead time set");
  for (int l : lead_times)
    if (l <= 0) throw ConfigError("model: non-positive lead time");
  if (tile_k < 1) throw ConfigError("model: tile_k must be >= 1");
}

namespace {

std::shared_ptr<const std::vector<std::int64_t>> patch_indices(
    std::int64_t c, std::int64_t h, std::int64_t w, std::int64_t p) {
  std::int64_t hp = h / p, wp = w / p;
  auto idx = std::make_shared<std::vector<std::int64_t>>();
  idx->reserve(static_cast<std::size_t>(c * h * w));
  for (std::int64_t t = 0; t < hp * wp; ++t) {
    std::int64_t pr = t / wp, pc = t % wp;
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t i = 0; i < p; ++i)
        for (std::int64_t j = 0; j < p; ++j)
          idx->push_back((ch * h + pr * p + i) * w + pc * p + j);
  }
  return idx;
}

std::shared_ptr<const std::vector<std::int64_t>> unpatch_indices(
    std::int64_t c, std::int64_t h, std::int64_t w, std::int64_t p) {
  std::int64_t wp = w / p;
  std::int64_t token_len = c * p * p;
  auto idx = std::make_shared<std::vector<std::int64_t>>();
  idx->reserve(static_cast<std::size_t>(c * h * w));
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t i = 0; i < h; ++i)
      for (std::int64_t j = 0; j < w; ++j) {
        std::int64_t t = (i / p) * wp + (j / p);
        idx->push_back(t * token_len + ch * p * p + (i % p) * p + (j % p));
      }
  return idx;
}

}  // namespace

Tensor patchify(const Tensor& field, std::int64_t p) {
  if (field.ndim() != 3)
    throw ShapeError("patchify: field must be [C, H, W], got " +
                     shape_str(field.shape()));
  std::int64_t c = field.dim(0), h = field.dim(1), w = field.dim(2);
  if (p < 1 || h % p != 0 || w % p != 0)
    throw ShapeError("patchify: field " + shape_str(field.shape()) +
                     " not divisible by patch " + std::to_string(p));
  return gather(field, patch_indices(c, h, w, p), {(h / p) * (w / p), c * p * p});
}

Tensor unpatchify(const Tensor& tokens, std::int64_t c, std::int64_t h,
                  std::int64_t w, std::int64_t p) {
  if (tokens.ndim() != 2)
    throw ShapeError("unpatchify: tokens must be 2-d, got " +
                     shape_str(tokens.shape()));
  if (h % p != 0 || w % p != 0 || tokens.dim(0) != (h / p) * (w / p) ||
      tokens.dim(1) != c * p * p)
    throw ShapeError("unpatchify: tokens " + shape_str(tokens.shape()) +
                     " do not tile [" + std::to_string(c) + "x" +
                     std::to_string(h) + "x" + std::to_string(w) + "] at patch " +
                     std::to_string(p));
  return gather(tokens, unpatch_indices(c, h, w, p), {c, h, w});
}

ForecastModel::ForecastModel(ModelConfig cfg, std::uint64_t seed)
    : cfg_(std::move(cfg)) {
  cfg_.validate();
  init_params(seed);
}

void ForecastModel::init_params(std::uint64_t seed) {
  Rng rng(seed);
  const std::int64_t e = cfg_.embed_dim;
  const std::int64_t p2 = cfg_.patch * cfg_.patch;
  auto w_init = [&](Shape s) { return Tensor::randn(std::move(s), rng, 0.02); };
  auto put = [&](const std::string& path, Tensor t) {
    params_.emplace(path, std::move(t));
    trainable_.emplace(path, true);
  };
  for (const auto& v : cfg_.input_variables) {
    put("tok." + v + ".w", w_init({e, p2}));
    put("tok." + v + ".b", Tensor::zeros({e}));
    put("var_embed." + v, w_init({e}));
  }
  put("agg.query", w_init({e}));
  for (const char* n : {"k", "v", "out"}) {
    put(std::string("agg.") + n + ".w", w_init({e, e}));
    put(std::string("agg.") + n + ".b", Tensor::zeros({e}));
  }
  put("pos_embed", w_init({cfg_.n_patches(), e}));
  put("lead.fc1.w", w_init({e, 1}));
  put("lead.fc1.b", Tensor::zeros({e}));
  put("lead.fc2.w", w_init({e, e}));
  put("lead.fc2.b", Tensor::zeros({e}));
  for (std::int64_t i = 0; i < cfg_.depth; ++i) {
    std::string b = "blocks." + std::to_string(i) + ".";
    put(b + "ln1.g", Tensor::full({e}, 1.0));
    put(b + "ln1.b", Tensor::zeros({e}));
    for (const char* n : {"q", "k", "v", "out"}) {
      put(b + "attn." + n + ".w", w_init({e, e}));
      put(b + "attn." + n + ".b", Tensor::zeros({e}));
    }
    put(b + "ln2.g", Tensor::full({e}, 1.0));
    put(b + "ln2.b", Tensor::zeros({e}));
    put(b + "mlp.fc1.w", w_init({4 * e, e}));
    put(b + "mlp.fc1.b", Tensor::zeros({4 * e}));
    put(b + "mlp.fc2.w", w_init({e, 4 * e}));
    put(b + "mlp.fc2.b", Tensor::zeros({e}));
  }
  put("norm.g", Tensor::full({e}, 1.0));
  put("norm.b", Tensor::zeros({e}));
  std::int64_t d_hat = static_cast<std::int64_t>(cfg_.target_variables.size());
  put("head.w", w_init({d_hat * p2, e}));
  put("head.b", Tensor::zeros({d_hat * p2}));
}

const Tensor& ForecastModel::param(const std::string& path) const {
  auto it = params_.find(path);
  if (it == params_.end())
    throw ContractError("model: unknown parameter '" + path + "'");
  return it->second;
}

void ForecastModel::set_param(const std::string& path, Tensor v) {
  auto it = params_.find(path);
  if (it == params_.end())
    throw ContractError("model: unknown parameter '" + path + "'");
  if (v.shape() != it->second.shape())
    throw ShapeError("model: parameter '" + path + "' is " +
                     shape_str(it->second.shape()) + ", got " +
                     shape_str(v.shape()));
  it->second = std::move(v);
}

bool ForecastModel::is_trainable(const std::string& path) const {
  auto it = trainable_.find(path);
  if (it == trainable_.end())
    throw ContractError("model: unknown parameter '" + path + "'");
  return it->second;
}

void ForecastModel::set_trainable(const std::string& path, bool on) {
  auto it = trainable_.find(path);
  if (it == trainable_.end())
    throw ContractError("model: unknown parameter '" + path + "'");
  it->second = on;
}

void ForecastModel::freeze_all() {
  for (auto& kv : trainable_) kv.second = false;
}

void ForecastModel::unfreeze_all() {
  for (auto& kv : trainable_) kv.second = true;
}

std::vector<ParamRef> ForecastModel::trainable_params() {
  std::vector<ParamRef> out;
  for (auto& kv : params_)
    if (trainable_.at(kv.first)) out.push_back({kv.first, &kv.second});
  if (hook_)
    for (const auto& p : hook_->param_paths())
      out.push_back({p, &hook_->param(p)});
  return out;
}

std::int64_t ForecastModel::count_parameters(ParamFilter f) const {
  std::int64_t n = 0;
  for (const auto& kv : params_) {
    bool tr = trainable_.at(kv.first);
    if (f == ParamFilter::all || (f == ParamFilter::trainable && tr) ||
        (f == ParamFilter::frozen && !tr))
      n += kv.second.numel();
  }
  if (hook_ && f != ParamFilter::frozen) n += hook_->param_count();
  return n;
}

void ForecastModel::set_adapter(std::shared_ptr<AdapterHook> hook) {
  if (hook_) throw ContractError("model: an adapter is already attached");
  hook_ = std::move(hook);
}

void ForecastModel::clear_adapter() { hook_.reset(); }

ForecastModel ForecastModel::clone() const {
  ForecastModel m;
  m.cfg_ = cfg_;
  m.params_ = params_;
  m.trainable_ = trainable_;
  // the adapter, if any, is not cloned; callers attach their own
  return m;
}

Tensor ForecastModel::apply_linear(const std::string& path,
                                   const Tensor& x) const {
  const Tensor& w = param(path + ".w");
  const Tensor& b = param(path + ".b");
  if (hook_ && hook_->handles(path)) return hook_->forward(path, x, w, b);
  return linear(x, w, b);
}

PatchMap ForecastModel::native_map() const {
  PatchMap pm;
  pm.h_cells = cfg_.n_lat;
  pm.w_cells = cfg_.n_lon;
  pm.global_patch.resize(static_cast<std::size_t>(cfg_.n_patches()));
  for (std::size_t i = 0; i < pm.global_patch.size(); ++i)
    pm.global_patch[i] = static_cast<std::int64_t>(i);
  return pm;
}

PatchMap ForecastModel::region_map(const CropIndex& aligned) const {
  const std::int64_t p = cfg_.patch;
  if (aligned.lat_start % p != 0 || aligned.lat_count % p != 0)
    throw RegionError("region_map: rows not aligned to patch grid");
  std::int64_t w = static_cast<std::int64_t>(aligned.lon_cols.size());
  if (w % p != 0) throw RegionError("region_map: columns not aligned to patch grid");
  PatchMap pm;
  pm.h_cells = aligned.lat_count;
  pm.w_cells = w;
  std::int64_t wp_native = cfg_.n_lon / p;
  for (std::int64_t pr = 0; pr < aligned.lat_count / p; ++pr) {
    for (std::int64_t pc = 0; pc < w / p; ++pc) {
      std::int64_t col0 = aligned.lon_cols[static_cast<std::size_t>(pc * p)];
      if (col0 % p != 0)
        throw RegionError("region_map: wrapped columns not aligned to patch grid");
      for (std::int64_t o = 1; o < p; ++o) {
        std::int64_t expect = (col0 + o) % cfg_.n_lon;
        if (aligned.lon_cols[static_cast<std::size_t>(pc * p + o)] != expect)
          throw RegionError("region_map: column patch straddles a gap");
      }
      std::int64_t gr = aligned.lat_start / p + pr;
      pm.global_patch.push_back(gr * wp_native + col0 / p);
    }
  }
  return pm;
}

Tensor ForecastModel::variable_tokenize(const Tensor& input,
                                        const PatchMap* pm) const {
  PatchMap native;
  if (!pm) {
    native = native_map();
    pm = &native;
  }
  std::int64_t d_in = static_cast<std::int64_t>(cfg_.input_variables.size());
  if (input.ndim() != 3 || input.dim(0) != d_in || input.dim(1) != pm->h_cells ||
      input.dim(2) != pm->w_cells)
    throw ShapeError("model: input " + shape_str(input.shape()) +
                     ", expected [" + std::to_string(d_in) + "x" +
                     std::to_string(pm->h_cells) + "x" +
                     std::to_string(pm->w_cells) + "]");
  std::vector<Tensor> tokens;
  tokens.reserve(static_cast<std::size_t>(d_in));
  for (std::int64_t d = 0; d < d_in; ++d) {
    const std::string& name = cfg_.input_variables[static_cast<std::size_t>(d)];
    Tensor field = reshape(slice0(input, d), {1, pm->h_cells, pm->w_cells});
    Tensor patches = patchify(field, cfg_.patch);
    Tensor emb = apply_linear("tok." + name, patches);
    tokens.push_back(add_bias(emb, param("var_embed." + name)));
  }
  return concat0(tokens);
}

Tensor ForecastModel::variable_aggregate(const Tensor& tokens) const {
  if (tokens.ndim() != 3 || tokens.dim(2) != cfg_.embed_dim)
    throw ShapeError("aggregate: tokens " + shape_str(tokens.shape()));
  std::int64_t n_p = tokens.dim(1);
  Tensor kv = transpose01(tokens);  // [N_p, D, e]
  Tensor k = apply_linear("agg.k", kv);
  Tensor v = apply_linear("agg.v", kv);
  Tensor q = tile0(reshape(param("agg.query"), {1, cfg_.embed_dim}), n_p);
  AttentionInputs in{q, k, v, -1.0};
  Tensor att = attend(in, cfg_.kernel, cfg_.tile_k);
  return apply_linear("agg.out", reshape(att, {n_p, cfg_.embed_dim}));
}

Tensor ForecastModel::lead_time_embed(int lead_hours) const {
  if (lead_hours <= 0)
    throw ContractError("model: lead must be positive, got " +
                        std::to_string(lead_hours));
  Tensor t = Tensor::from_values({1, 1}, {static_cast<double>(lead_hours) / 72.0});
  Tensor h = gelu(apply_linear("lead.fc1", t));
  return reshape(apply_linear("lead.fc2", h), {cfg_.embed_dim});
}

Tensor ForecastModel::block_forward(std::int64_t i, const Tensor& x) const {
  std::string b = "blocks." + std::to_string(i) + ".";
  const std::int64_t e = cfg_.embed_dim;
  const std::int64_t heads = cfg_.n_heads;
  const std::int64_t dh = e / heads;
  std::int64_t n = x.dim(0);
  Tensor a = layer_norm(x, param(b + "ln1.g"), param(b + "ln1.b"));
  auto split = [&](const Tensor& t) {
    return transpose01(reshape(t, {n, heads, dh}));
  };
  Tensor q = split(apply_linear(b + "attn.q", a));
  Tensor k = split(apply_linear(b + "attn.k", a));
  Tensor v = split(apply_linear(b + "attn.v", a));
  AttentionInputs in{q, k, v, -1.0};
  Tensor att = attend(in, cfg_.kernel, cfg_.tile_k);
  Tensor merged = reshape(transpose01(att), {n, e});
  Tensor x1 = add(x, apply_linear(b + "attn.out", merged));
  Tensor m = layer_norm(x1, param(b + "ln2.g"), param(b + "ln2.b"));
  Tensor mlp = apply_linear(b + "mlp.fc2", gelu(apply_linear(b + "mlp.fc1", m)));
  return add(x1, mlp);
}

Tensor ForecastModel::forward(const Tensor& input, int lead_hours,
                              const PatchMap* pm) const {
  PatchMap native;
  if (!pm) {
    native = native_map();
    pm = &native;
  }
  if (hook_) hook_->begin_forward();
  Tensor tokens = variable_tokenize(input, pm);
  Tensor x = variable_aggregate(tokens);  // [N_p, e]
  std::int64_t n_p = x.dim(0);
  // position embeddings for the patches this input covers
  Tensor pos;
  if (static_cast<std::int64_t>(pm->global_patch.size()) == cfg_.n_patches()) {
    pos = param("pos_embed");
  } else {
    auto idx = std::make_shared<std::vector<std::int64_t>>();
    for (auto g : pm->global_patch)
      for (std::int64_t j = 0; j < cfg_.embed_dim; ++j)
        idx->push_back(g * cfg_.embed_dim + j);
    pos = gather(param("pos_embed"), idx, {n_p, cfg_.embed_dim});
  }
  x = add(x, pos);
  x = add_bias(x, lead_time_embed(lead_hours));
  for (std::int64_t i = 0; i < cfg_.depth; ++i) x = block_forward(i, x);
  x = layer_norm(x, param("norm.g"), param("norm.b"));
  Tensor y = apply_linear("head", x);
  std::int64_t d_hat = static_cast<std::int64_t>(cfg_.target_variables.size());
  return unpatchify(y, d_hat, pm->h_cells, pm->w_cells, cfg_.patch);
}

namespace {

json config_json(const ModelConfig& c) {
  json j;
  j["embed_dim"] = c.embed_dim;
  j["depth"] = c.depth;
  j["n_heads"] = c.n_heads;
  j["patch"] = c.patch;
  j["n_lat"] = c.n_lat;
  j["n_lon"] = c.n_lon;
  j["input_variables"] = c.input_variables;
  j["target_variables"] = c.target_variables;
  j["lead_times"] = c.lead_times;
  j["attention"] = c.kernel == AttentionKernel::naive ? "naive" : "streaming";
  j["tile_k"] = c.tile_k;
  return j;
}

ModelConfig config_from(const json& j) {
  ModelConfig c;
  c.embed_dim = j.at("embed_dim").get<std::int64_t>();
  c.depth = j.at("depth").get<std::int64_t>();
  c.n_heads = j.at("n_heads").get<std::int64_t>();
  c.patch = j.at("patch").get<std::int64_t>();
  c.n_lat = j.at("n_lat").get<std::int64_t>();
  c.n_lon = j.at("n_lon").get<std::int64_t>();
  c.input_variables = j.at("input_variables").get<std::vector<std::string>>();
  c.target_variables = j.at("target_variables").get<std::vector<std::string>>();
  c.lead_times = j.at("lead_times").get<std::vector<int>>();
  std::string k = j.at("attention").get<std::string>();
  if (k == "naive")
    c.kernel = AttentionKernel::naive;
  else if (k == "streaming")
    c.kernel = AttentionKernel::streaming;
  else
    throw ConfigError("model: unknown attention kernel '" + k + "'");
  c.tile_k = j.at("tile_k").get<std::int64_t>();
  c.validate();
  return c;
}

}  // namespace

std::string model_config_to_json(const ModelConfig& cfg) {
  return config_json(cfg).dump();
}

ModelConfig model_config_from_json(const std::string& s) {
  return config_from(json::parse(s));
}

void save_checkpoint(const ForecastModel& m, const std::string& path,
                     const std::string& extra_json) {
  json header;
  header["format"] = 1;
  header["config"] = config_json(m.config());
  header["extra"] = json::parse(extra_json);
  json plist = json::array();
  for (const auto& kv : m.params()) {
    plist.push_back({{"path", kv.first},
                     {"shape", kv.second.shape()},
                     {"trainable", m.is_trainable(kv.first)}});
  }
  header["params"] = plist;
  std::string h = header.dump();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("checkpoint: cannot write " + path);
  const char magic[8] = {'S', 'T', 'R', 'T', 'C', 'K', 'P', '1'};
  f.write(magic, 8);
  std::uint64_t hlen = h.size();
  f.write(reinterpret_cast<const char*>(&hlen), 8);
  f.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const auto& kv : m.params()) {
    const auto& v = kv.second.values();
    f.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
  }
  if (!f) throw DataError("checkpoint: short write on " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("checkpoint: cannot open " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::string(magic, 8) != "STRTCKP1")
    throw DataError("checkpoint: bad magic in " + path);
  std::uint64_t hlen = 0;
  f.read(reinterpret_cast<char*>(&hlen), 8);
  std::string h(hlen, '\0');
  f.read(h.data(), static_cast<std::streamsize>(hlen));
  if (!f) throw DataError("checkpoint: truncated header in " + path);
  json header = json::parse(h);
  ModelConfig cfg = config_from(header.at("config"));
  ForecastModel m(cfg, 0);
  for (const auto& p : header.at("params")) {
    std::string pp = p.at("path").get<std::string>();
    Shape shape = p.at("shape").get<Shape>();
    std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
    f.read(reinterpret_cast<char*>(v.data()),
           static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (!f) throw DataError("checkpoint: truncated data in " + path);
    m.set_param(pp, Tensor::from_values(shape, std::move(v)));
    m.set_trainable(pp, p.at("trainable").get<bool>());
  }
  return LoadedCheckpoint{std::move(m), header.at("extra").dump()};
}

}  // namespace stratus
