#pragma once

// JSON view of ExperimentConfig. A user file is applied as a merge patch on
// top of the built-in defaults; unknown keys are rejected.

#include <filesystem>

#include <json.hpp>

#include "soc_ude/experiments.hpp"

namespace socude {

nlohmann::json config_to_json(const ExperimentConfig& cfg);

/// Throws std::invalid_argument on unknown keys or invalid values.
ExperimentConfig config_from_json(const nlohmann::json& patch, const ExperimentConfig& base = {});

ExperimentConfig load_config(const std::filesystem::path& path);

}  // namespace socude
