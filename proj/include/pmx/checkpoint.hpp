#pragma once

#include "pmx/bank.hpp"
#include "pmx/model.hpp"

namespace pmx {

// Self-describing checkpoint: a JSON header (version, epoch, model config,
// tensor directory) followed by raw little-endian doubles.
struct Checkpoint {
  int version = 1;
  int epoch = 0;
  ModelConfig model;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor& find(const std::string& name) const;
  bool has(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Collects everything a run needs to be restored: encoder parameters and BN
// running statistics, both sample-to-sample projectors, and the center bank.
Checkpoint snapshot_state(Encoder& enc, const S2SProjector& proj_g, const S2SProjector& proj_p,
                          const CenterBank& bank, int epoch);

// Writes a checkpoint back into live objects; shapes and names must match
// exactly, otherwise the checkpoint does not belong to this configuration.
void restore_state(const Checkpoint& ckpt, Encoder& enc, S2SProjector& proj_g,
                   S2SProjector& proj_p, CenterBank& bank);

}  // namespace pmx
