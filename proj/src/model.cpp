#include "pmx/model.hpp"

#include <numeric>

namespace pmx {

int ModelConfig::feature_map_height() const {
  int h = input_height;
  auto down = [&h](int stride) {
    if (h % stride != 0)
      throw std::invalid_argument("ModelConfig: height " + std::to_string(h) +
                                  " not divisible by stride " + std::to_string(stride));
    h /= stride;
  };
  down(2);  // stem stride
  for (const auto& s : trunk.stages) down(s.stride);
  return h;
}

int ModelConfig::feature_map_width() const {
  int w = input_width;
  auto down = [&w](int stride) {
    if (w % stride != 0)
      throw std::invalid_argument("ModelConfig: width " + std::to_string(w) +
                                  " not divisible by stride " + std::to_string(stride));
    w /= stride;
  };
  down(2);
  for (const auto& s : trunk.stages) down(s.stride);
  return w;
}

void ModelConfig::validate() const {
  if (part_count < 1) throw std::invalid_argument("ModelConfig: part_count must be >= 1");
  if (class_count < 1) throw std::invalid_argument("ModelConfig: class_count must be >= 1");
  if (stem_count != 3) throw std::invalid_argument("ModelConfig: stem_count must be 3");
  if (trunk.stages.empty()) throw std::invalid_argument("ModelConfig: trunk has no stages");
  if (feature_dim != trunk.stages.back().channels)
    throw std::invalid_argument("ModelConfig: feature_dim must equal the final stage width");
  const int h = feature_map_height();
  if (h % part_count != 0)
    throw std::invalid_argument("ModelConfig: feature map height " + std::to_string(h) +
                                " not divisible by part_count " + std::to_string(part_count));
  (void)feature_map_width();
}

Tensor pack_images(const std::vector<const ModalityImage*>& images, int height, int width) {
  const int n = static_cast<int>(images.size());
  Tensor out({n, 3, height, width});
  for (int i = 0; i < n; ++i) {
    const ModalityImage& img = *images[static_cast<size_t>(i)];
    if (img.height() != height || img.width() != width)
      throw std::invalid_argument("pack_images: image size mismatch");
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) out.at(i, c, y, x) = img.px(y, x, c);
  }
  return out;
}

// ---------------------------------------------------------------------------
// construction
// ---------------------------------------------------------------------------

Encoder::ConvUnit Encoder::make_conv(int in_ch, int out_ch, int stride, Rng& rng) {
  ConvUnit u;
  u.w = make_leaf(nn::he_normal({out_ch, in_ch, 3, 3}, in_ch * 9, rng));
  u.b = make_leaf(Tensor({out_ch}));
  u.gamma = make_leaf(Tensor({out_ch}, real(1)));
  u.beta = make_leaf(Tensor({out_ch}));
  u.bn = nn::BnState(out_ch);
  u.stride = stride;
  return u;
}

Encoder::Encoder(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const auto& trunk = cfg_.trunk;

  for (int s = 0; s < cfg_.stem_count; ++s)
    stems_.push_back(make_conv(3, trunk.stem_channels, 2, rng));

  int in_ch = trunk.stem_channels;
  for (const auto& stage : trunk.stages) {
    downs_.push_back(make_conv(in_ch, stage.channels, stage.stride, rng));
    std::vector<ResBlock> stage_blocks;
    for (int b = 0; b < stage.blocks; ++b) {
      ResBlock blk;
      blk.c1 = make_conv(stage.channels, stage.channels, 1, rng);
      blk.c2 = make_conv(stage.channels, stage.channels, 1, rng);
      stage_blocks.push_back(std::move(blk));
    }
    blocks_.push_back(std::move(stage_blocks));
    in_ch = stage.channels;
  }

  const int d = cfg_.feature_dim, r = trunk.attention_bottleneck;
  att_w1_ = make_leaf(nn::he_normal({r, d}, d, rng));
  att_b1_ = make_leaf(Tensor({r}));
  att_w2_ = make_leaf(nn::he_normal({1, r}, r, rng));
  att_b2_ = make_leaf(Tensor({1}));

  auto make_neck = [&] {
    BnNeck n;
    n.gamma = make_leaf(Tensor({d}, real(1)));
    n.beta = make_leaf(Tensor({d}));
    n.state = nn::BnState(d);
    return n;
  };
  auto make_head = [&] {
    Head h;
    h.w = make_leaf(nn::normal_init({cfg_.class_count, d}, 0.01, rng));
    h.b = make_leaf(Tensor({cfg_.class_count}));
    return h;
  };
  neck_g_ = make_neck();
  cls_g_ = make_head();
  for (int k = 0; k < cfg_.part_count; ++k) {
    neck_p_.push_back(make_neck());
    cls_p_.push_back(make_head());
  }
}

// ---------------------------------------------------------------------------
// forward
// ---------------------------------------------------------------------------

Var Encoder::run_conv(ConvUnit& u, const Var& x, bool training, bool with_relu) {
  Var y = nn::conv2d(x, u.w, u.b, u.stride, 1);
  y = nn::batch_norm2d(y, u.gamma, u.beta, u.bn, training);
  return with_relu ? nn::relu(y) : y;
}

Var Encoder::run_block(ResBlock& blk, const Var& x, bool training) {
  Var y = run_conv(blk.c1, x, training);
  y = run_conv(blk.c2, y, training, /*with_relu=*/false);
  return nn::relu(add(y, x));
}

Var Encoder::trunk_forward(const Var& stem_out, bool training) {
  Var x = stem_out;
  for (size_t s = 0; s < downs_.size(); ++s) {
    x = run_conv(downs_[s], x, training);
    for (auto& blk : blocks_[s]) x = run_block(blk, x, training);
  }
  return nn::part_gate(x, att_w1_, att_b1_, att_w2_, att_b2_, cfg_.part_count);
}

BatchBundles Encoder::forward_batch(const std::vector<const ModalityImage*>& images,
                                    bool training) {
  if (images.empty()) throw std::invalid_argument("forward_batch: empty batch");
  const int n = static_cast<int>(images.size());

  // Route every image to its modality stem, keeping the original positions.
  std::vector<std::vector<const ModalityImage*>> groups(stems_.size());
  std::vector<std::vector<int>> group_rows(stems_.size());
  for (int i = 0; i < n; ++i) {
    const int m = static_cast<int>(images[static_cast<size_t>(i)]->modality);
    if (m < 0 || m >= static_cast<int>(stems_.size()))
      throw std::invalid_argument("forward_batch: unknown modality tag, cannot route");
    groups[static_cast<size_t>(m)].push_back(images[static_cast<size_t>(i)]);
    group_rows[static_cast<size_t>(m)].push_back(i);
  }

  std::vector<Var> stem_outs;
  std::vector<int> order;  // row in the stacked batch -> original position
  for (size_t m = 0; m < groups.size(); ++m) {
    if (groups[m].empty()) continue;
    Var input = make_constant(pack_images(groups[m], cfg_.input_height, cfg_.input_width));
    stem_outs.push_back(run_conv(stems_[m], input, training));
    order.insert(order.end(), group_rows[m].begin(), group_rows[m].end());
  }
  Var stacked = stem_outs.size() == 1 ? stem_outs[0] : concat_dim0(stem_outs);
  Var fmap = trunk_forward(stacked, training);

  // Inverse permutation restores input order on the pooled features.
  std::vector<int> inv(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) inv[static_cast<size_t>(order[static_cast<size_t>(i)])] = i;
  const bool identity_order =
      std::is_sorted(order.begin(), order.end());
  auto restore = [&](const Var& v) { return identity_order ? v : permute_rows(v, inv); };

  BatchBundles out;
  out.global_feat = restore(nn::global_avg_pool(fmap));
  out.embedding = nn::batch_norm1d(out.global_feat, neck_g_.gamma, neck_g_.beta, neck_g_.state,
                                   training);
  out.global_logits = nn::linear(out.embedding, cls_g_.w, cls_g_.b);
  for (int k = 0; k < cfg_.part_count; ++k) {
    Var f = restore(nn::stripe_avg_pool(fmap, cfg_.part_count, k));
    Var e = nn::batch_norm1d(f, neck_p_[k].gamma, neck_p_[k].beta, neck_p_[k].state, training);
    out.part_feats.push_back(f);
    out.part_logits.push_back(nn::linear(e, cls_p_[k].w, cls_p_[k].b));
  }
  return out;
}

std::vector<FeatureBundle> Encoder::forward(const std::vector<ModalityImage>& images) {
  std::vector<const ModalityImage*> ptrs;
  for (const auto& img : images) ptrs.push_back(&img);
  BatchBundles batch = forward_batch(ptrs, /*training=*/false);

  const int n = static_cast<int>(images.size()), d = cfg_.feature_dim, y = cfg_.class_count;
  std::vector<FeatureBundle> out(static_cast<size_t>(n));
  auto row = [](const Var& v, int i, int cols) {
    Tensor t({cols});
    for (int c = 0; c < cols; ++c) t[c] = v->value.at(i, c);
    return t;
  };
  for (int i = 0; i < n; ++i) {
    FeatureBundle& b = out[static_cast<size_t>(i)];
    b.global_feat = row(batch.global_feat, i, d);
    b.embedding = row(batch.embedding, i, d);
    b.global_logits = row(batch.global_logits, i, y);
    for (int k = 0; k < cfg_.part_count; ++k) {
      b.part_feats.push_back(row(batch.part_feats[static_cast<size_t>(k)], i, d));
      b.part_logits.push_back(row(batch.part_logits[static_cast<size_t>(k)], i, y));
    }
  }
  return out;
}

Tensor Encoder::extract_embedding(const ModalityImage& img) {
  return forward({img})[0].embedding;
}

// ---------------------------------------------------------------------------
// parameter registry
// ---------------------------------------------------------------------------

std::vector<std::pair<std::string, Var>> Encoder::named_parameters() const {
  std::vector<std::pair<std::string, Var>> out;
  auto conv = [&out](const std::string& prefix, const ConvUnit& u) {
    out.emplace_back(prefix + ".w", u.w);
    out.emplace_back(prefix + ".b", u.b);
    out.emplace_back(prefix + ".gamma", u.gamma);
    out.emplace_back(prefix + ".beta", u.beta);
  };
  for (size_t m = 0; m < stems_.size(); ++m)
    conv("stem" + std::to_string(m), stems_[m]);
  for (size_t s = 0; s < downs_.size(); ++s) {
    conv("stage" + std::to_string(s) + ".down", downs_[s]);
    for (size_t b = 0; b < blocks_[s].size(); ++b) {
      const std::string p = "stage" + std::to_string(s) + ".block" + std::to_string(b);
      conv(p + ".c1", blocks_[s][b].c1);
      conv(p + ".c2", blocks_[s][b].c2);
    }
  }
  out.emplace_back("att.w1", att_w1_);
  out.emplace_back("att.b1", att_b1_);
  out.emplace_back("att.w2", att_w2_);
  out.emplace_back("att.b2", att_b2_);
  out.emplace_back("neck_g.gamma", neck_g_.gamma);
  out.emplace_back("neck_g.beta", neck_g_.beta);
  out.emplace_back("cls_g.w", cls_g_.w);
  out.emplace_back("cls_g.b", cls_g_.b);
  for (int k = 0; k < cfg_.part_count; ++k) {
    const std::string p = "part" + std::to_string(k);
    out.emplace_back(p + ".neck.gamma", neck_p_[static_cast<size_t>(k)].gamma);
    out.emplace_back(p + ".neck.beta", neck_p_[static_cast<size_t>(k)].beta);
    out.emplace_back(p + ".cls.w", cls_p_[static_cast<size_t>(k)].w);
    out.emplace_back(p + ".cls.b", cls_p_[static_cast<size_t>(k)].b);
  }
  return out;
}

std::vector<Var> Encoder::parameters() const {
  std::vector<Var> out;
  for (auto& [name, var] : named_parameters()) out.push_back(var);
  return out;
}

std::vector<Var> Encoder::stem_parameters(Modality m) const {
  const auto& u = stems_.at(static_cast<size_t>(m));
  return {u.w, u.b, u.gamma, u.beta};
}

std::vector<std::pair<std::string, nn::BnState*>> Encoder::named_bn_states() {
  std::vector<std::pair<std::string, nn::BnState*>> out;
  for (size_t m = 0; m < stems_.size(); ++m)
    out.emplace_back("stem" + std::to_string(m) + ".bn", &stems_[m].bn);
  for (size_t s = 0; s < downs_.size(); ++s) {
    out.emplace_back("stage" + std::to_string(s) + ".down.bn", &downs_[s].bn);
    for (size_t b = 0; b < blocks_[s].size(); ++b) {
      const std::string p = "stage" + std::to_string(s) + ".block" + std::to_string(b);
      out.emplace_back(p + ".c1.bn", &blocks_[s][b].c1.bn);
      out.emplace_back(p + ".c2.bn", &blocks_[s][b].c2.bn);
    }
  }
  out.emplace_back("neck_g.bn", &neck_g_.state);
  for (int k = 0; k < cfg_.part_count; ++k)
    out.emplace_back("part" + std::to_string(k) + ".neck.bn",
                     &neck_p_[static_cast<size_t>(k)].state);
  return out;
}

}  // namespace pmx
