#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cea/backbone.hpp"
#include "cea/dataset.hpp"
#include "cea/objectives.hpp"

namespace cea {

struct OptimConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t steps = 200;
  /// When set, overrides `steps` with epochs * ceil(n_train / batch).
  std::optional<std::size_t> epochs;
  std::size_t batch = 8;
  bool cosine = true;
  bool flips = true;

  void validate() const;
};

struct RunConfig {
  BackboneConfig backbone;  ///< backbone.cea is mirrored from `cea`
  CeaConfig cea;
  LossConfig loss;
  OptimConfig optim;
  std::string dataset_path = "data/toy";
  DatasetConfig dataset;  ///< used by `generate`
  std::string eval_split = "test";
  std::uint64_t seed = 0;
  std::string out = "runs/default";
  std::size_t threads = 1;

  /// Backbone config with the CEA block attached.
  BackboneConfig model() const;
  void validate() const;
};

nlohmann::json to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& j);

RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const std::filesystem::path& path, const RunConfig& cfg);

/// Applies `key=value` with a dotted key (e.g. "cea.rank=16"). The value is
/// parsed as JSON when possible, otherwise taken as a string.
void apply_override(nlohmann::json& j, const std::string& assignment);
RunConfig with_overrides(const RunConfig& base, const std::vector<std::string>& assignments);

/// Dotted paths of leaves that differ between two configs.
std::vector<std::string> config_diff(const RunConfig& a, const RunConfig& b);

}  // namespace cea
