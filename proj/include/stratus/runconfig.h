#pragma once

#include <string>
#include <vector>

#include "json.hpp"

namespace stratus {

// Allowed config keys per CLI subcommand; docs/config_schema.json publishes
// the same table and a test keeps the two in sync.
struct FieldSpec {
  const char* key;
  const char* type;  // string | integer | number | boolean | array[string] | array[integer]
  bool required;
};

const std::vector<std::pair<std::string, std::vector<FieldSpec>>>& config_schema();

// Checks keys and types; with require_all also checks required keys, which
// is applied to the fully resolved config right before a run starts.
void validate_config(const std::string& command, const nlohmann::json& cfg,
                     bool require_all);

nlohmann::json schema_json();

// Run ids are a function of the resolved config, so rerunning the same
// config lands in the same directory.
std::string run_id_for(const std::string& command,
                       const nlohmann::json& resolved);

// Creates runs_root/<run id>/ and writes its manifest.json; returns the dir.
std::string write_run_manifest(const std::string& runs_root,
                               const std::string& command,
                               const nlohmann::json& resolved);

}  // namespace stratus
