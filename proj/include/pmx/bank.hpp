#pragma once

#include <array>

#include "pmx/losses.hpp"

namespace pmx {

struct BankConfig {
  real alpha = 0.1;      // EMA blend weight for fresh batch means
  int start_epoch = 10;  // the center loss stays off before this epoch

  void validate() const {
    if (!(alpha > 0 && alpha <= 1)) throw std::invalid_argument("BankConfig: alpha in (0,1]");
    if (start_epoch < 0) throw std::invalid_argument("BankConfig: negative start_epoch");
  }
};

// Per-identity, per-modality running feature centers (global + one slot per
// part) for the two original modalities. Updated every mini-batch by EMA;
// the first observation of an (identity, modality) sets the center directly.
//
// The update keeps a differentiable view of the blended centers for the
// current step, so the center loss backpropagates through the fresh batch
// contribution while everything stored is constant.
class CenterBank {
 public:
  CenterBank(int identities, int parts, int dim, BankConfig cfg = {});

  // global_feats {N,D}; part_feats is P vars of {N,D}; modalities must be
  // RGB or IR only.
  void update(const Var& global_feats, const std::vector<Var>& part_feats,
              const std::vector<int>& labels, const std::vector<Modality>& modalities);

  struct C2CLoss {
    Var combined;            // lambda2 * global + mu * lambda3 * part
    real global_value = 0;   // unweighted components, for the metrics log
    real part_value = 0;
    bool active = false;
  };
  // Zero (inactive) before start_epoch or while any slot is uninitialized.
  C2CLoss c2c_loss(int epoch, real mu, const LossWeights& w) const;

  // Drops the differentiable overlay; call once the optimizer step is done.
  void end_step();

  bool fully_initialized() const;
  bool initialized(int identity, Modality m) const;
  int identities() const { return identities_; }
  int parts() const { return parts_; }
  int dim() const { return dim_; }
  const BankConfig& config() const { return cfg_; }

  // Center of one (identity, modality, slot); slot 0 is global, 1..P parts.
  Tensor center(int identity, Modality m, int slot) const;

  // Raw storage for checkpointing: {Y, 2, 1+P, D} plus the flags.
  Tensor& storage() { return centers_; }
  const Tensor& storage() const { return centers_; }
  std::vector<std::uint8_t>& flags() { return init_; }
  const std::vector<std::uint8_t>& flags() const { return init_; }

 private:
  long long offset(int identity, int mod, int slot) const {
    return ((static_cast<long long>(identity) * 2 + mod) * (1 + parts_) + slot) * dim_;
  }

  int identities_, parts_, dim_;
  BankConfig cfg_;
  Tensor centers_;                 // {Y, 2, 1+P, D}
  std::vector<std::uint8_t> init_; // Y*2, one flag per (identity, modality)
  std::array<std::vector<Var>, 2> overlay_;  // per modality: (1+P) vars {Y,D}
  bool has_overlay_ = false;
};

}  // namespace pmx
