#pragma once

#include <vector>

#include "pmx/image.hpp"
#include "pmx/nn.hpp"

namespace pmx {

// One trunk stage: a strided downsample conv unit followed by `blocks`
// residual blocks at the same width.
struct StageSpec {
  int channels = 0;
  int stride = 1;
  int blocks = 0;
};

struct TrunkSpec {
  int stem_channels = 8;
  std::vector<StageSpec> stages = {{16, 2, 1}, {32, 2, 1}, {48, 1, 0}};
  int attention_bottleneck = 8;
};

struct ModelConfig {
  int part_count = 6;
  int feature_dim = 48;  // must equal the final stage width
  int stem_count = 3;    // RGB, IR, MIX
  int class_count = 0;   // Y
  int input_height = 96;
  int input_width = 48;
  TrunkSpec trunk;

  // Feature-map height after the stem and all stage strides.
  int feature_map_height() const;
  int feature_map_width() const;
  void validate() const;
};

// Per-batch differentiable outputs, rows aligned with the input order.
struct BatchBundles {
  Var global_feat;              // {N,D}, pre-BN, feeds triplet/s2s/centers
  std::vector<Var> part_feats;  // P x {N,D}, pre-BN
  Var embedding;                // {N,D}, BN neck output, retrieval space
  Var global_logits;            // {N,Y}
  std::vector<Var> part_logits; // P x {N,Y}
};

// One image's plain (non-differentiable) outputs.
struct FeatureBundle {
  Tensor global_feat;
  std::vector<Tensor> part_feats;
  Tensor embedding;
  Tensor global_logits;
  std::vector<Tensor> part_logits;
};

// Two-stream encoder: one stem per modality (equal architecture, independent
// parameters), a weight-shared trunk with part-wise attention at the top,
// global/stripe pooling, BN necks and per-head classifiers shared across
// modalities.
class Encoder {
 public:
  Encoder(const ModelConfig& cfg, Rng& rng);

  // Forward of a full batch; `training` selects batch statistics in every BN
  // and keeps the tape alive for backward.
  BatchBundles forward_batch(const std::vector<const ModalityImage*>& images, bool training);

  std::vector<FeatureBundle> forward(const std::vector<ModalityImage>& images);
  Tensor extract_embedding(const ModalityImage& img);

  const ModelConfig& config() const { return cfg_; }
  std::vector<Var> parameters() const;                    // all trainable
  std::vector<Var> stem_parameters(Modality m) const;     // one stem's subset
  // Named views for serialization.
  std::vector<std::pair<std::string, Var>> named_parameters() const;
  std::vector<std::pair<std::string, nn::BnState*>> named_bn_states();

 private:
  struct ConvUnit {
    Var w, b, gamma, beta;
    nn::BnState bn;
    int stride = 1;
  };
  struct ResBlock {
    ConvUnit c1, c2;  // second unit's ReLU happens after the skip connection
  };
  struct BnNeck {
    Var gamma, beta;
    nn::BnState state;
  };
  struct Head {
    Var w, b;
  };

  ConvUnit make_conv(int in_ch, int out_ch, int stride, Rng& rng);
  Var run_conv(ConvUnit& u, const Var& x, bool training, bool with_relu = true);
  Var run_block(ResBlock& blk, const Var& x, bool training);
  Var trunk_forward(const Var& stem_out, bool training);

  ModelConfig cfg_;
  std::vector<ConvUnit> stems_;          // indexed by Modality
  std::vector<ConvUnit> downs_;          // per stage
  std::vector<std::vector<ResBlock>> blocks_;
  Var att_w1_, att_b1_, att_w2_, att_b2_;
  BnNeck neck_g_;
  std::vector<BnNeck> neck_p_;
  Head cls_g_;
  std::vector<Head> cls_p_;
};

// Packs images (H,W,3 in [0,1]) into an {N,3,H,W} input tensor.
Tensor pack_images(const std::vector<const ModalityImage*>& images, int height, int width);

}  // namespace pmx
