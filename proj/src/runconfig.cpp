#include "stratus/runconfig.h"

#include <filesystem>
#include <fstream>

#include "stratus/error.h"
#include "stratus/hash.h"
#include "stratus/version.h"

namespace stratus {

using nlohmann::json;

const std::vector<std::pair<std::string, std::vector<FieldSpec>>>&
config_schema() {
  static const std::vector<std::pair<std::string, std::vector<FieldSpec>>> s = {
      {"gen-data",
       {{"out", "string", true},
        {"grid_deg", "number", false},
        {"n_steps", "integer", false},
        {"step_hours", "integer", false},
        {"start_year", "integer", false},
        {"variables", "array[string]", false},
        {"advect_cells", "number", false},
        {"diffusion", "number", false},
        {"noise", "number", false},
        {"seed", "integer", false}}},
      {"pretrain",
       {{"data", "string", true},
        {"runs", "string", true},
        {"preset", "string", false},
        {"embed_dim", "integer", false},
        {"depth", "integer", false},
        {"heads", "integer", false},
        {"patch", "integer", false},
        {"attention", "string", false},
        {"tile_k", "integer", false},
        {"lr", "number", false},
        {"batch_size", "integer", false},
        {"max_epochs", "integer", false},
        {"patience", "integer", false},
        {"seed", "integer", false},
        {"leads", "array[integer]", false},
        {"max_steps_per_epoch", "integer", false},
        {"max_val_windows", "integer", false},
        {"train_years", "array[integer]", false},
        {"val_years", "array[integer]", false},
        {"test_years", "array[integer]", false}}},
      {"finetune",
       {{"data", "string", true},
        {"base", "string", true},
        {"runs", "string", true},
        {"region", "string", false},
        {"mode", "string", false},
        {"rank", "integer", false},
        {"targets", "string", false},
        {"alpha", "number", false},
        {"train_head", "boolean", false},
        {"tags", "array[string]", false},
        {"lr", "number", false},
        {"batch_size", "integer", false},
        {"max_epochs", "integer", false},
        {"patience", "integer", false},
        {"seed", "integer", false},
        {"leads", "array[integer]", false},
        {"max_steps_per_epoch", "integer", false},
        {"max_val_windows", "integer", false},
        {"train_years", "array[integer]", false},
        {"val_years", "array[integer]", false},
        {"test_years", "array[integer]", false}}},
      {"search",
       {{"data", "string", true},
        {"base", "string", true},
        {"runs", "string", true},
        {"region", "string", false},
        {"rank", "integer", false},
        {"population", "integer", false},
        {"budget", "integer", false},
        {"tournament", "integer", false},
        {"p_mutation", "number", false},
        {"steps", "integer", false},
        {"seed", "integer", false},
        {"leads", "array[integer]", false},
        {"train_years", "array[integer]", false},
        {"val_years", "array[integer]", false},
        {"test_years", "array[integer]", false}}},
      {"evaluate",
       {{"data", "string", true},
        {"checkpoint", "string", false},
        {"persistence", "boolean", false},
        {"runs", "string", true},
        {"region", "string", false},
        {"leads", "array[integer]", false},
        {"max_windows", "integer", false},
        {"maps", "boolean", false},
        {"train_years", "array[integer]", false},
        {"val_years", "array[integer]", false},
        {"test_years", "array[integer]", false}}},
      {"bench-attention",
       {{"sizes", "array[integer]", false},
        {"tiles", "array[integer]", false},
        {"head_dim", "integer", false},
        {"iters", "integer", false},
        {"out", "string", false}}},
      {"report",
       {{"runs", "string", true}, {"out", "string", true}}},
  };
  return s;
}

namespace {

const std::vector<FieldSpec>& fields_for(const std::string& command) {
  for (const auto& [cmd, fields] : config_schema())
    if (cmd == command) return fields;
  throw ConfigError("config: unknown command '" + command + "'");
}

bool type_ok(const json& v, const std::string& type) {
  if (type == "string") return v.is_string();
  if (type == "integer") return v.is_number_integer();
  if (type == "number") return v.is_number();
  if (type == "boolean") return v.is_boolean();
  if (type == "array[string]") {
    if (!v.is_array()) return false;
    for (const auto& e : v)
      if (!e.is_string()) return false;
    return true;
  }
  if (type == "array[integer]") {
    if (!v.is_array()) return false;
    for (const auto& e : v)
      if (!e.is_number_integer()) return false;
    return true;
  }
  throw ConfigError("config: unknown schema type '" + type + "'");
}

}  // namespace

void validate_config(const std::string& command, const json& cfg,
                     bool require_all) {
  if (!cfg.is_object())
    throw ConfigError("config: document for '" + command +
                      "' must be a JSON object");
  const auto& fields = fields_for(command);
  for (const auto& [key, value] : cfg.items()) {
    const FieldSpec* spec = nullptr;
    for (const auto& f : fields)
      if (key == f.key) spec = &f;
    if (!spec)
      throw ConfigError("config: unknown key '" + key + "' for '" + command +
                        "'");
    if (!type_ok(value, spec->type))
      throw ConfigError("config: key '" + key + "' for '" + command +
                        "' must be " + spec->type + ", got " +
                        std::string(value.type_name()));
  }
  if (require_all)
    for (const auto& f : fields)
      if (f.required && !cfg.contains(f.key))
        throw ConfigError("config: missing required key '" +
                          std::string(f.key) + "' for '" + command + "'");
}

json schema_json() {
  json out = json::object();
  for (const auto& [cmd, fields] : config_schema()) {
    json c = json::object();
    for (const auto& f : fields)
      c[f.key] = {{"type", f.type}, {"required", f.required}};
    out[cmd] = c;
  }
  return out;
}

std::string run_id_for(const std::string& command, const json& resolved) {
  return command + "-" + sha256_hex(resolved.dump()).substr(0, 12);
}

std::string write_run_manifest(const std::string& runs_root,
                               const std::string& command,
                               const json& resolved) {
  validate_config(command, resolved, true);
  std::string dir = runs_root + "/" + run_id_for(command, resolved);
  std::filesystem::create_directories(dir);
  json manifest;
  manifest["tool_version"] = kVersion;
  manifest["command"] = command;
  manifest["config"] = resolved;
  manifest["config_sha256"] = sha256_hex(resolved.dump());
  if (resolved.contains("seed")) manifest["seed"] = resolved["seed"];
  std::ofstream f(dir + "/manifest.json");
  if (!f) throw DataError("run: cannot write " + dir + "/manifest.json");
  f << manifest.dump(2) << "\n";
  return dir;
}

}  // namespace stratus
