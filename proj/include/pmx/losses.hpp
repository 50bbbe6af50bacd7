#pragma once

#include <vector>

#include "pmx/model.hpp"
#include "pmx/nn.hpp"

namespace pmx {

struct LossWeights {
  real lambda1 = 0.2;        // sample-to-sample weight
  real lambda2 = 0.2;        // global center-to-center weight
  real lambda3 = 1.0;        // part center-to-center weight
  real triplet_margin = 0.3;
  real mix_ratio = 0.1;      // p, shared with the patch-mix config

  void validate() const {
    if (!(std::isfinite(lambda1) && std::isfinite(lambda2) && std::isfinite(lambda3)))
      throw std::invalid_argument("LossWeights: non-finite weight");
    if (triplet_margin < 0) throw std::invalid_argument("LossWeights: negative margin");
    if (!(mix_ratio >= 0 && mix_ratio <= 1))
      throw std::invalid_argument("LossWeights: mix_ratio must lie in [0,1]");
  }
};

// Ramp weight for the part-based losses: linear from 0 to max_value over the
// first ramp_epochs, constant afterwards.
struct MuSchedule {
  real max_value = 0.5;
  int ramp_epochs = 50;
  int total_epochs = 101;

  void validate() const {
    if (ramp_epochs < 0 || ramp_epochs > total_epochs)
      throw std::invalid_argument("MuSchedule: need 0 <= ramp_epochs <= total_epochs");
  }
};

real mu_schedule(int epoch, const MuSchedule& sched);

// Projection head F(.) used by the sample-to-sample loss: two affine maps
// with a ReLU between, dimensions D -> D -> D.
struct S2SProjector {
  Var w1, b1, w2, b2;

  S2SProjector() = default;
  S2SProjector(int dim, Rng& rng);
  Var apply(const Var& x) const;
  std::vector<Var> parameters() const { return {w1, b1, w2, b2}; }
};

// ---------------------------------------------------------------------------
// Core losses. All return scalar vars and are >= 0.
// ---------------------------------------------------------------------------

// Mean softmax cross-entropy.
Var id_loss(const Var& logits, const std::vector<int>& labels);

// Batch-hard triplet: per anchor, the farthest same-label and nearest
// other-label sample by Euclidean distance; mean hinge over all anchors.
Var hard_triplet_loss(const Var& embeddings, const std::vector<int>& labels, real margin);

// Mean squared difference of the projected paired features.
Var s2s_loss(const Var& feats_v, const Var& feats_i, const S2SProjector& proj);

// Sum over samples and parts of KL(softmax(global) || softmax(part_k)).
// The global distribution is the reference and carries no gradient.
Var part_align_loss(const Var& global_logits, const std::vector<Var>& part_logits);

// p * L(M|V) + (1-p) * L(M|I), where L(M|X) sums the global and per-part
// KL divergences from X's prediction distributions (references, no gradient)
// to the mixed modality's distributions.
Var pmml_loss(const BatchBundles& bundles_v, const BatchBundles& bundles_i,
              const BatchBundles& bundles_m, real p);

// Named components of the full objective. Null terms contribute zero.
struct LossTerms {
  Var id_g, tri, s2s_g;          // global baseline
  Var id_p, s2s_p, part_align;   // part baseline, scaled by mu here
  Var c2c;                       // already weighted by the bank
  Var pmml;                      // scaled by mu here
};

Var total_loss(const LossTerms& terms, const LossWeights& w, real mu);

// ---------------------------------------------------------------------------
// Reusable scalar ops (also used by the center bank)
// ---------------------------------------------------------------------------

// Mean over all elements of the squared difference.
Var mse_mean(const Var& a, const Var& b);

// Mean over rows of the squared L2 row distance.
Var sqdist_rows_mean(const Var& a, const Var& b);

// Sum over rows of KL(softmax(ref_row) || softmax(pred_row)); ref is read as
// a constant so no gradient flows into it.
Var kl_sum(const Tensor& ref_logits, const Var& pred_logits);

}  // namespace pmx
