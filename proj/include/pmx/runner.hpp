#pragma once

#include <map>

#include "pmx/checkpoint.hpp"
#include "pmx/config.hpp"

namespace pmx {

// Warmup-then-step learning rate: linear 0 -> base over epochs [0,10], flat
// until epoch 30, then one decade division at epochs 31, 61 and 91.
real lr_schedule(int epoch, real base_lr = 0.1, int total_epochs = 101);

struct StepRecord {
  int step = 0;
  int epoch = 0;
  real lr = 0;
  real mu = 0;
  std::map<std::string, real> losses;  // enabled components plus "total"
};

struct EvalSnapshot {
  int epoch = 0;
  real rank1 = 0;
  real map = 0;
};

struct TrainLog {
  std::vector<StepRecord> steps;
  std::vector<EvalSnapshot> evals;
};

struct TrainResult {
  std::string run_dir;
  std::string checkpoint_path;
  TrainLog log;
  ExperimentConfig config;  // resolved (class count filled in)
};

TrainResult train(const ExperimentConfig& cfg);

struct EvalOutput {
  EvalResult result;
  std::string report_path;
  std::string table_path;
  std::string histogram_path;
};

EvalOutput evaluate(const Checkpoint& ckpt, const ExperimentConfig& cfg);
EvalOutput evaluate(const std::string& checkpoint_path, const ExperimentConfig& cfg);

struct SweepRow {
  std::string value;
  real rank1 = 0;
  real rank10 = 0;
  real map = 0;
};

// Trains and evaluates once per value of one config path (same base seed),
// writing sweep_<param>.csv under the base run directory.
std::vector<SweepRow> sweep(const std::string& param, const std::vector<std::string>& values,
                            const ExperimentConfig& base);

DatasetIndex build_train_index(const ExperimentConfig& cfg);
DatasetIndex build_test_index(const ExperimentConfig& cfg);

// cfg.run_dir if set, else $PMX_RUN_ROOT (or ./runs) + /seed<seed>.
std::string resolve_run_dir(const ExperimentConfig& cfg);

real cmc_at(const EvalResult& r, int rank);  // rank is 1-based, clamped

}  // namespace pmx
