#pragma once

#include <string>
#include <vector>

#include "cdcn/data.hpp"
#include "cdcn/metrics.hpp"
#include "cdcn/model.hpp"

namespace cdcn {

struct TrainConfig {
  double lr = 1e-4;
  double weight_decay = 5e-5;
  int epochs = 50;
  int lr_halve_every = 20;  // <= 0 keeps the learning rate constant
  int batch_size = 8;
  uint32_t seed = 0;
  bool augment = false;
  ThresholdPolicy threshold = ThresholdPolicy::fixed(0.5);
  ModelConfig model;
  std::string checkpoint_dir;
  std::string train_data;
  std::string dev_data;  // optional; enables best-checkpoint selection

  void validate() const;
};

// Flat key = value file mirroring the TrainConfig/ModelConfig field names;
// '#' starts a comment. Lists (modalities, score_weights) are comma-joined.
TrainConfig read_train_config(const std::string& path);

struct StepLog {
  int epoch = 0;
  int step = 0;  // global step index, starting at 0
  double lr = 0.0;
  float mse = 0.0f;
  float cdl = 0.0f;
  float overall = 0.0f;
};

struct EpochLog {
  int epoch = 0;
  float mean_mse = 0.0f;
  float mean_cdl = 0.0f;
  float mean_overall = 0.0f;
  bool has_dev = false;
  double dev_acer = 0.0;
  double dev_threshold = 0.0;
};

struct TrainResult {
  std::vector<StepLog> steps;
  std::vector<EpochLog> epochs;
  std::string last_checkpoint;
  std::string best_checkpoint;  // best dev ACER; last epoch when no dev set
};

// Deterministic training loop: per-epoch seeded shuffles, optional flip
// augmentation, Adam with the halving schedule, a checkpoint per epoch plus
// checkpoint_dir/best.ckpt, and train_log.csv / epoch_log.csv.
TrainResult train_model(const TrainConfig& cfg,
                        const std::vector<SampleRecord>& train_set,
                        const std::vector<SampleRecord>& dev_set);

// Per-sample mask-mean scores in record order, eval mode.
std::vector<ScoredSample> score_dataset(Model& model,
                                        const std::vector<SampleRecord>& records,
                                        int batch_size);

struct EvalOutcome {
  double threshold = 0.5;
  EvalReport report;
  std::vector<ScoredSample> scores;
};

// Scores the set, picks the threshold per policy on those same scores, and
// builds the per-sub-protocol report.
EvalOutcome evaluate_model(Model& model,
                           const std::vector<SampleRecord>& records,
                           const ThresholdPolicy& policy, int batch_size);

}  // namespace cdcn
