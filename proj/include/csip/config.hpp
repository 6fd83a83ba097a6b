#pragma once

#include <string>
#include <vector>

#include "csip/pipeline.hpp"

namespace csip {

/// Raised for bad flags, config values or schema violations (CLI exit 1).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EvalRunConfig {
  bool exclude_same_camera = true;
  std::vector<int> cmc_ranks{1, 5, 10};
};

struct RunConfig {
  std::uint64_t seed = 0;
  bool deterministic = true;
  DataConfig data;
  ModelConfig model;
  Stage1Config stage1;
  Stage2Config stage2;
  EvalRunConfig eval;
};

/// Defaults, then the JSON file (when non-empty), then dotted
/// "section.key=value" overrides, in that order.
RunConfig load_run_config(const std::string& config_path,
                          const std::vector<std::string>& overrides);

std::string run_config_json(const RunConfig& cfg);

}  // namespace csip
