#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rpoly/disorder.hpp"

namespace rpoly {

using Json = nlohmann::json;

// Config layout: {"model": {...}, "engine": {...}, "run": {...}}; every key
// has a default, unknown keys throw ConfigInvalid.
Json default_config();
std::vector<std::string> preset_names();
Json preset_config(const std::string& name);  // partial config; throws ConfigInvalid
// deep merge of overlay into base; keys of overlay must exist in base
Json merge_config(const Json& base, const Json& overlay, const std::string& where = "");
void validate_config(const Json& cfg);
// "engine.n=5" style override; value parsed as JSON, else taken as a string
void apply_assignment(Json& cfg, const std::string& assignment);
// FNV-1a 64 over the canonical dump, run.threads and run.out excluded
std::string config_hash(const Json& cfg);

// model block to library objects
StepDistribution config_steps(const Json& cfg);
PotentialLaw config_law(const Json& cfg);
RVec config_drift(const Json& cfg);
PolymerModel config_model(const Json& cfg);
std::vector<std::uint64_t> config_seeds(const Json& cfg);

struct RunOutput {
    Json results = Json::object();
    Json checks = Json::object();  // name -> bool
    std::vector<std::pair<std::string, std::string>> files;  // file name -> contents
    std::vector<std::string> lines;  // stdout
    bool ok() const;
    // summary.json contents
    std::string summary(const std::string& subcommand, const Json& cfg) const;
};

// Throws SubcommandUnknown, ConfigInvalid, or library errors.
RunOutput run_subcommand(const std::string& subcommand, const Json& cfg);
std::vector<std::string> subcommand_names();

// exit codes: 0 ok, 1 failed check or model error, 2 usage or config error
int cli_main(int argc, char** argv);

}  // namespace rpoly
