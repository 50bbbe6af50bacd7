#pragma once

#include "pmx/autograd.hpp"
#include "pmx/common.hpp"

namespace pmx::nn {

// ---------------------------------------------------------------------------
// Parameter initialization (seeded, deterministic)
// ---------------------------------------------------------------------------

Tensor he_normal(const std::vector<int>& shape, int fan_in, Rng& rng);
Tensor normal_init(const std::vector<int>& shape, real stddev, Rng& rng);

// ---------------------------------------------------------------------------
// Layers as free functions over the tape
// ---------------------------------------------------------------------------

// x {N,C,H,W}, w {Co,Ci,kh,kw}, b {Co}. Zero padding, square stride.
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);

// Running statistics for a batch-norm layer. Training-mode forwards update
// the running buffers in place; eval-mode forwards read them.
struct BnState {
  Tensor running_mean;
  Tensor running_var;
  real momentum = 0.1;
  real eps = 1e-5;
  explicit BnState(int channels = 0)
      : running_mean({channels}), running_var({channels}, real(1)) {}
};

// Spatial BN over (N,H,W) per channel; x {N,C,H,W}.
Var batch_norm2d(const Var& x, const Var& gamma, const Var& beta, BnState& state, bool training);
// Feature BN over N per column; x {N,D}.
Var batch_norm1d(const Var& x, const Var& gamma, const Var& beta, BnState& state, bool training);

Var relu(const Var& x);

// y = x * w^T + b with w {out,in}, b {out}, x {N,in}.
Var linear(const Var& x, const Var& w, const Var& b);

// {N,C,H,W} -> {N,C}, mean over all spatial positions.
Var global_avg_pool(const Var& x);

// Mean over horizontal stripe k of `parts` equal-height stripes -> {N,C}.
Var stripe_avg_pool(const Var& x, int parts, int k);

// Part-wise attention: each of `parts` horizontal stripes is rescaled by a
// scalar sigmoid gate computed from the stripe's pooled descriptor through a
// small bottleneck MLP (w1 {R,C}, b1 {R}, w2 {1,R}, b2 {1}).
Var part_gate(const Var& x, const Var& w1, const Var& b1, const Var& w2, const Var& b2,
              int parts);

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

// SGD with classic momentum; weight decay is added to the gradient before the
// momentum update, matching the common deep-learning convention.
class Sgd {
 public:
  Sgd(real momentum, real weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}

  void step(const std::vector<Var>& params, real lr);
  static void zero_grad(const std::vector<Var>& params);

 private:
  real momentum_;
  real weight_decay_;
  std::unordered_map<Node*, Tensor> velocity_;
};

}  // namespace pmx::nn
