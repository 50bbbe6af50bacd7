#pragma once

#include <string>
#include <vector>

#include "pmx/bank.hpp"
#include "pmx/data.hpp"
#include "pmx/eval.hpp"
#include "pmx/losses.hpp"
#include "pmx/model.hpp"
#include "pmx/patchmix.hpp"

namespace pmx {

struct OptimizerConfig {
  real momentum = 0.9;
  real weight_decay = 5e-4;
  real base_lr = 0.1;
};

// Table-3-style component switches. `parts` controls the part heads and both
// part losses; the others gate one loss each.
struct AblationSwitches {
  bool parts = true;
  bool part_align = true;
  bool c2c = true;
  bool patchmix = true;
  bool pmml = true;
};

struct DatasetConfig {
  std::string kind = "synth";  // synth | flat | sysu_like | regdb_like
  std::string root;            // on-disk layouts: <root>/train and <root>/test
  std::uint64_t seed = 1;      // synthetic generator seed (independent of the run seed)
  SynthSpec train;
  SynthSpec test;

  DatasetConfig() {
    test.rgb_per_id = 6;
    test.ir_per_id = 6;
    test.split = 1;
  }
};

struct ExperimentConfig {
  std::string preset = "paper";  // paper | toy
  DatasetConfig dataset;
  ModelConfig model;  // class_count 0 = derived from the dataset
  LossWeights losses;
  MixConfig mix;
  MuSchedule mu;
  BankConfig bank;
  OptimizerConfig optimizer;
  AugmentConfig augment;
  PKConfig pk;
  EvalProtocol eval;
  AblationSwitches enable;
  int total_epochs = 101;
  int steps_per_epoch = 0;    // 0 = ceil(train images / batch images)
  int eval_every = 0;         // 0 = evaluate only on demand
  int checkpoint_every = 0;   // 0 = final checkpoint only
  std::uint64_t seed = 0;     // run seed (init, sampling, augmentation, masks)
  std::string run_dir;        // empty = $PMX_RUN_ROOT (or ./runs) /seed<seed>
  // Explicit loss-gate weights so that disabling a component can be compared
  // against running it with weight zero.
  real part_align_weight = 1.0;
  real pmml_weight = 1.0;

  void validate() const;
};

// Named base profiles: "paper" carries the published hyperparameters and
// full-scale geometry; "toy" is the desk-scale profile used by the fast
// experiment suites (96x48 inputs, 8x8 patches, 16 synthetic identities).
ExperimentConfig preset_config(const std::string& name);

// defaults <- optional JSON file <- repeatable "key.path=value" overrides.
// Unknown keys are collected and reported; malformed files report the line.
ExperimentConfig parse_config(const std::string& path, const std::vector<std::string>& overrides);

// Sets one dotted path (e.g. "mix.ratio_p=0.5") on top of a config. The
// sweep entry point uses the same mechanism.
void apply_override(ExperimentConfig& cfg, const std::string& assignment);

std::string config_to_json(const ExperimentConfig& cfg);

// ModelConfig alone, for checkpoint headers.
std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

}  // namespace pmx
