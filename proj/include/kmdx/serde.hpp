#pragma once

#include <nlohmann/json.hpp>

#include "kmdx/memory_injection.hpp"
#include "kmdx/model.hpp"
#include "kmdx/trainer.hpp"

namespace kmdx {

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const MemoryConfig& c);
MemoryConfig memory_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const Ablation& a);
Ablation ablation_from_json(const nlohmann::json& j);

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

}  // namespace kmdx
