#pragma once

// Training hyperparameters and JSON (de)serialization of run configuration.
// Unknown keys are rejected with a ConfigError naming the key.

#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

#include "rlt/model_config.hpp"

namespace rlt {

struct TrainConfig {
  double lr = 2e-4;
  double weight_decay = 0.01;
  std::size_t iterations = 2000;
  double lambda_m = 50.0;
  double lambda_1 = 0.01;
  double tau = 0.07;
  std::size_t n_pos = 4;
  std::size_t n_neg = 10;
  std::size_t bank_capacity = 64;
  double prompt_dropout = 0.1;
  std::uint64_t seed = 0;
  std::size_t rank = 16;
  double lora_scale = 1.0;
  std::string placement = "QK|V";
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t checkpoint_every = 0;  // 0: only at the end

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

// Dataset generation parameters for the "data" section of a run config.
struct DataConfig {
  std::string relation = "approach";
  std::size_t count = 16;
  std::uint64_t seed = 0;
  std::string shape1;  // empty: drawn per video
  std::string shape2;

  bool operator==(const DataConfig&) const = default;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
};

nlohmann::json to_json(const ModelConfig& c);
nlohmann::json to_json(const TrainConfig& c);
nlohmann::json to_json(const DataConfig& c);
nlohmann::json to_json(const RunConfig& c);

// Missing keys keep their defaults.
ModelConfig model_config_from_json(const nlohmann::json& j);
TrainConfig train_config_from_json(const nlohmann::json& j);
DataConfig data_config_from_json(const nlohmann::json& j);
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);

// Applies "section.key=value" where value is parsed with the type of the
// existing field.
void apply_override(RunConfig& cfg, const std::string& dotted_key, const std::string& value);

}  // namespace rlt
