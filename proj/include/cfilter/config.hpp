#pragma once

// JSON forms of the configuration types. Objects serialize with sorted keys,
// so dump() output is canonical. Missing keys keep their defaults; unknown
// keys are rejected.

#include <json.hpp>

#include "cfilter/harness.hpp"

namespace cfilter {

void to_json(nlohmann::json& j, const LayerSpec& s);
void from_json(const nlohmann::json& j, LayerSpec& s);
void to_json(nlohmann::json& j, const ModelSpec& s);
void from_json(const nlohmann::json& j, ModelSpec& s);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const MaskStrategy& s);
void from_json(const nlohmann::json& j, MaskStrategy& s);
void to_json(nlohmann::json& j, const ConfoundedImageConfig& c);
void from_json(const nlohmann::json& j, ConfoundedImageConfig& c);
void to_json(nlohmann::json& j, const ToyConfig& c);
void from_json(const nlohmann::json& j, ToyConfig& c);
void to_json(nlohmann::json& j, const DataSource& d);
void from_json(const nlohmann::json& j, DataSource& d);
void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

// Parses and validates; any problem surfaces as ConfigError.
ExperimentConfig parse_experiment_config(const std::string& text);
ExperimentConfig load_experiment_config(const std::string& path);
std::string experiment_config_text(const ExperimentConfig& config);

}  // namespace cfilter
