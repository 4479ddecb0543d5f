#pragma once

#include <string>

#include <json.hpp>

#include "kexp/train.hpp"

namespace kexp {

// Fully resolved config (every field explicit), suitable for echoing into a
// run's output directory.
nlohmann::json to_json(const RunConfig& cfg);

// Applies a partial JSON document over the given defaults. Sections and
// fields are all optional; unknown keys raise ConfigError naming the key.
RunConfig run_config_from_json(const nlohmann::json& j,
                               RunConfig base = RunConfig{});

RunConfig load_run_config_file(const std::string& path,
                               RunConfig base = RunConfig{});

}  // namespace kexp
