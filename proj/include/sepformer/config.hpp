#pragma once

#include <json.hpp>

#include "sepformer/geometry.hpp"
#include "sepformer/losses.hpp"
#include "sepformer/matching.hpp"
#include "sepformer/model.hpp"

// Human-readable key-value documents for every configuration block. Missing
// keys keep their defaults; unknown keys are rejected.
namespace sepformer {

nlohmann::json to_json(const ModelConfig& cfg);
nlohmann::json to_json(const LossConfig& cfg);
nlohmann::json to_json(const MatchConfig& cfg);
nlohmann::json to_json(const GeometryConfig& cfg);

ModelConfig model_config_from_json(const nlohmann::json& j);
LossConfig loss_config_from_json(const nlohmann::json& j);
MatchConfig match_config_from_json(const nlohmann::json& j);
GeometryConfig geometry_config_from_json(const nlohmann::json& j);

}  // namespace sepformer
