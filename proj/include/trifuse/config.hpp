#pragma once

#include "json.hpp"
#include "trifuse/train.hpp"

namespace trifuse {

// Whole-artifact configuration. Every field has a default; an empty JSON
// document yields the Base configuration on synthetic data.
struct ArtifactConfig {
  int schema_version = 1;
  std::uint64_t seed = 1234;
  PreprocessConfig preprocess;
  AugmentConfig augment;
  bool augment_enabled = true;
  NetworkConfig network;
  SemanticConfig semantic;
  std::vector<std::string> template_bank = default_template_bank();
  TrainConfig train;
  AblationSwitches switches;
  SynthConfig synth;

  TrainSetup setup() const;
  void validate() const;
};

ArtifactConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ArtifactConfig& c);

// Empty path loads pure defaults.
ArtifactConfig load_config(const std::string& path);

nlohmann::json switches_to_json(const AblationSwitches& s);
AblationSwitches switches_from_json(const nlohmann::json& j);

}  // namespace trifuse
