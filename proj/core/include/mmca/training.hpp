#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "mmca/features.hpp"
#include "mmca/model.hpp"

namespace mmca {

struct TrainConfig {
  double learning_rate = 5e-4;
  int batch_size = 32;
  int max_epochs = 100;
  int early_stop_patience = 10;
  double validation_fraction = 0.10;
  uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  bool clip_gradients = true;
  double clip_norm = 5.0;

  void validate() const;
};

// Adam over a ModelParams registry; state is keyed by entry order.
class AdamOptimizer {
 public:
  AdamOptimizer(ModelParams& params, const TrainConfig& config);
  void step();
  void zero_grad();

 private:
  ModelParams& params_;
  TrainConfig config_;
  int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double wall_time_s = 0.0;
};

struct RunRecord {
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  double best_val_loss = 0.0;
};

struct DatasetSplit {
  std::vector<WindowSpec> train;
  std::vector<WindowSpec> validation;  // trailing block of train dates
  std::vector<WindowSpec> test;
};

// Assigns windows by the calendar date of their first input interval; the
// validation block is the last `validation_fraction` of train-date windows,
// contiguous and unshuffled. Windows on unlisted dates are dropped.
DatasetSplit split_by_date(const FrameGrid& grid,
                           const std::vector<WindowSpec>& windows,
                           const std::set<int>& train_dates,
                           const std::set<int>& test_dates,
                           double validation_fraction = 0.10);

struct TrainResult {
  ModelParams best_params;
  NormStats stats;
  RunRecord record;
};

// Adam on t-NLL with validation-loss early stopping. NormStats come from the
// training windows only. Deterministic for a fixed config seed.
TrainResult train_model(const FrameGrid& grid, const DatasetSplit& split,
                        const ModelConfig& model_config,
                        const TrainConfig& train_config);

// Writes one epoch per line as JSON.
void save_run_record(const std::string& path, const RunRecord& record);

struct SweepEntry {
  std::map<std::string, double> values;
  double best_val_loss = 0.0;
  RunRecord record;
};

// Cartesian grid over named TrainConfig overrides ("learning_rate",
// "batch_size", "max_epochs"), each point trained, ranked by validation loss.
std::vector<SweepEntry> sweep(
    const FrameGrid& grid, const DatasetSplit& split,
    const ModelConfig& model_config, const TrainConfig& base,
    const std::map<std::string, std::vector<double>>& param_grid);

}  // namespace mmca
