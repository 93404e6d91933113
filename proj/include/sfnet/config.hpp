#pragma once

#include <string>

#include "json.hpp"
#include "sfnet/model.hpp"
#include "sfnet/train.hpp"

namespace sfnet {

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::string data;  // dataset directory
  std::string out;   // output directory

  void validate() const;
};

nlohmann::json to_json(const RunConfig& cfg);
nlohmann::json to_json(const ModelConfig& cfg);

// Starts from `base` and overrides every key present in `j`. Unknown keys
// and type errors are collected over the whole document and reported in one
// ConfigError naming every offending key path.
RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base = {});
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {});

RunConfig load_run_config(const std::string& path);

}  // namespace sfnet
