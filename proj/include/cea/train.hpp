#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cea/backbone.hpp"
#include "cea/config.hpp"
#include "cea/dataset.hpp"
#include "cea/objectives.hpp"

namespace cea {

/// Adam with bias correction over every parameter of a store.
class Adam {
 public:
  Adam(const ParamStore& params, const OptimConfig& cfg);
  void step(double lr);
  std::size_t steps_taken() const { return t_; }

 private:
  const ParamStore& params_;
  OptimConfig cfg_;
  std::map<std::string, std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

/// Cosine decay from `base` at step 0 to 0 at `total`.
double cosine_lr(double base, std::size_t step, std::size_t total);

/// Total optimizer steps implied by the config for a training split of `n_train`.
std::size_t planned_steps(const OptimConfig& cfg, std::size_t n_train);

struct LossLogRow {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
};

struct TrainResult {
  RestorerState state;
  std::vector<LossLogRow> log;
  double initial_loss = 0.0;  ///< mean loss over the first batch
  double final_loss = 0.0;    ///< mean loss over the last batch
};

/// Trains a restorer on the train split. Deterministic for a fixed config.
/// Throws NumericError naming the first non-finite tensor if the loss diverges.
TrainResult train_model(const RunConfig& cfg, const ToyDataset& data);

struct GroupMeans {
  double psnr = 0.0;
  double ssim = 0.0;
  std::size_t count = 0;  ///< categories contributing
};

struct EvalReport {
  std::vector<MetricRecord> records;
  std::map<std::string, GroupMeans> categories;
  /// "Single", "Double", "Triple" (by chain length) and "Avg": each a mean of
  /// category means, not of images.
  std::map<std::string, GroupMeans> groups;
};

/// Group name for a category tag by its number of operators.
std::string group_of(const std::string& category);

EvalReport aggregate(std::vector<MetricRecord> records);

/// Restores every item of `split` (fanning out over `threads`) and scores it.
EvalReport evaluate(const RestorerState& state, const ToyDataset& data, const std::string& split,
                    std::size_t threads = 1);

/// Scores the degraded inputs themselves (identity restorer).
EvalReport evaluate_identity(const ToyDataset& data, const std::string& split);

/// Artifacts under `dir`: checkpoint.ceak + checkpoint.json, config.json,
/// loss_log.csv, metrics_<split>.csv, eval_<split>.json, flops.json, env.json.
struct RunArtifacts {
  std::filesystem::path dir;
  std::filesystem::path checkpoint;
  TrainResult result;
  EvalReport eval;
};

RunArtifacts run_training(const RunConfig& cfg, const ToyDataset& data,
                          const std::filesystem::path& dir);

/// Rebuilds a restorer from a checkpoint written by run_training.
RestorerState load_restorer(const std::filesystem::path& checkpoint, const RunConfig& cfg);

nlohmann::json eval_to_json(const EvalReport& r);
std::string eval_table(const EvalReport& r);

}  // namespace cea
