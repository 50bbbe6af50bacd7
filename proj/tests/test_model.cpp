#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "gradcheck.hpp"
#include "pmx/model.hpp"

using namespace pmx;
using pmx::test::gradcheck;

namespace {

ModelConfig tiny_config(int class_count = 3) {
  ModelConfig cfg;
  cfg.input_height = 16;
  cfg.input_width = 8;
  cfg.part_count = 2;
  cfg.feature_dim = 6;
  cfg.class_count = class_count;
  cfg.trunk.stem_channels = 4;
  cfg.trunk.stages = {{6, 2, 1}};
  cfg.trunk.attention_bottleneck = 3;
  return cfg;
}

ModalityImage noise_image(int h, int w, Modality m, Rng& rng, int id = 0) {
  ModalityImage img = make_image(h, w, m, id);
  std::uniform_real_distribution<real> unit(0.0, 1.0);
  for (long long i = 0; i < img.pixels.size(); ++i) img.pixels[i] = unit(rng);
  return img;
}

Var weighted_reduce(const Var& x) {
  real s = 0;
  for (long long i = 0; i < x->value.size(); ++i) s += x->value[i] * std::sin(real(i) + 1);
  return make_node(Tensor::scalar(s), {x},
                   [](Node& n) {
                     const Var& in = n.inputs[0];
                     if (!in->requires_grad) return;
                     Tensor g(in->value.shape());
                     for (long long i = 0; i < g.size(); ++i)
                       g[i] = n.grad.item() * std::sin(real(i) + 1);
                     accumulate(in, g);
                   },
                   "weighted_reduce");
}

bool tensors_equal(const Tensor& a, const Tensor& b, real tol = 0) {
  if (a.shape() != b.shape()) return false;
  for (long long i = 0; i < a.size(); ++i)
    if (std::abs(a[i] - b[i]) > tol) return false;
  return true;
}

}  // namespace

TEST_CASE("stems are parameter-disjoint while the trunk is shared") {
  Rng rng = make_rng(1, rng_stream::kInit);
  Encoder enc(tiny_config(), rng);

  std::set<Node*> rgb, ir, mix;
  for (const auto& v : enc.stem_parameters(Modality::RGB)) rgb.insert(v.get());
  for (const auto& v : enc.stem_parameters(Modality::IR)) ir.insert(v.get());
  for (const auto& v : enc.stem_parameters(Modality::MIX)) mix.insert(v.get());
  for (Node* p : rgb) {
    CHECK(ir.count(p) == 0);
    CHECK(mix.count(p) == 0);
  }
  for (Node* p : ir) CHECK(mix.count(p) == 0);

  // Each parameter is registered exactly once.
  std::set<Node*> all;
  for (const auto& v : enc.parameters()) {
    CHECK(all.insert(v.get()).second);
  }
  CHECK(all.size() == enc.named_parameters().size());
}

TEST_CASE("same seed gives identical encoders, different seeds differ") {
  ModelConfig cfg = tiny_config();
  Rng r1 = make_rng(5, rng_stream::kInit);
  Rng r2 = make_rng(5, rng_stream::kInit);
  Rng r3 = make_rng(6, rng_stream::kInit);
  Encoder a(cfg, r1), b(cfg, r2), c(cfg, r3);
  auto pa = a.named_parameters(), pb = b.named_parameters(), pc = c.named_parameters();
  bool any_diff = false;
  for (size_t i = 0; i < pa.size(); ++i) {
    CHECK(tensors_equal(pa[i].second->value, pb[i].second->value));
    if (!tensors_equal(pa[i].second->value, pc[i].second->value)) any_diff = true;
  }
  CHECK(any_diff);
}

TEST_CASE("part pooling divisibility rule") {
  // Feature height 18 accepts 6 parts; height 16 does not.
  ModelConfig ok;
  ok.input_height = 144;
  ok.input_width = 48;
  ok.part_count = 6;
  ok.class_count = 2;
  ok.feature_dim = 48;
  CHECK(ok.feature_map_height() == 18);
  CHECK_NOTHROW(ok.validate());

  ModelConfig bad = ok;
  bad.input_height = 128;
  CHECK(bad.feature_map_height() == 16);
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("evaluation forward is deterministic and batch-consistent") {
  Rng rng = make_rng(7, rng_stream::kInit);
  ModelConfig cfg = tiny_config();
  Encoder enc(cfg, rng);

  Rng img_rng(3);
  ModalityImage rgb = noise_image(16, 8, Modality::RGB, img_rng, 0);
  ModalityImage ir = noise_image(16, 8, Modality::IR, img_rng, 1);

  auto once = enc.forward({rgb, rgb, ir});
  CHECK(tensors_equal(once[0].embedding, once[1].embedding));
  CHECK(tensors_equal(once[0].global_logits, once[1].global_logits));
  CHECK(once[0].embedding.size() == cfg.feature_dim);
  CHECK(once[0].part_feats.size() == static_cast<size_t>(cfg.part_count));

  // Same image through the single-image path.
  Tensor emb = enc.extract_embedding(rgb);
  CHECK(tensors_equal(emb, once[0].embedding, 1e-12));
  Tensor emb2 = enc.extract_embedding(rgb);
  CHECK(tensors_equal(emb, emb2));
}

TEST_CASE("modality routing is order-independent in evaluation mode") {
  Rng rng = make_rng(9, rng_stream::kInit);
  Encoder enc(tiny_config(), rng);
  Rng img_rng(5);
  ModalityImage a = noise_image(16, 8, Modality::IR, img_rng, 0);
  ModalityImage b = noise_image(16, 8, Modality::RGB, img_rng, 1);
  ModalityImage c = noise_image(16, 8, Modality::MIX, img_rng, 2);

  auto mixed = enc.forward({a, b, c});
  auto solo_a = enc.forward({a})[0];
  auto solo_b = enc.forward({b})[0];
  auto solo_c = enc.forward({c})[0];
  CHECK(tensors_equal(mixed[0].embedding, solo_a.embedding, 1e-10));
  CHECK(tensors_equal(mixed[1].embedding, solo_b.embedding, 1e-10));
  CHECK(tensors_equal(mixed[2].embedding, solo_c.embedding, 1e-10));
  CHECK(tensors_equal(mixed[2].global_logits, solo_c.global_logits, 1e-10));
}

TEST_CASE("part features partition the global feature") {
  Rng rng = make_rng(11, rng_stream::kInit);
  ModelConfig cfg = tiny_config();
  Encoder enc(cfg, rng);
  Rng img_rng(7);
  ModalityImage img = noise_image(16, 8, Modality::RGB, img_rng);
  auto bundle = enc.forward({img})[0];
  // Equal stripes of one gated map: the mean of part features is exactly the
  // global feature.
  for (int dch = 0; dch < cfg.feature_dim; ++dch) {
    real mean = 0;
    for (const auto& part : bundle.part_feats) mean += part[dch];
    mean /= static_cast<real>(cfg.part_count);
    CHECK(mean == doctest::Approx(bundle.global_feat[dch]).epsilon(1e-12));
  }
}

TEST_CASE("unknown modality tag fails to route") {
  Rng rng = make_rng(13, rng_stream::kInit);
  Encoder enc(tiny_config(), rng);
  Rng img_rng(9);
  ModalityImage img = noise_image(16, 8, Modality::RGB, img_rng);
  img.modality = static_cast<Modality>(9);
  std::vector<const ModalityImage*> batch = {&img};
  CHECK_THROWS_AS(enc.forward_batch(batch, false), std::invalid_argument);
}

TEST_CASE("all outputs stay finite") {
  Rng rng = make_rng(15, rng_stream::kInit);
  Encoder enc(tiny_config(), rng);
  Rng img_rng(11);
  std::vector<ModalityImage> imgs;
  for (int i = 0; i < 4; ++i)
    imgs.push_back(noise_image(16, 8, i % 2 ? Modality::IR : Modality::RGB, img_rng, i));
  for (const auto& b : enc.forward(imgs)) {
    CHECK(b.global_feat.all_finite());
    CHECK(b.embedding.all_finite());
    CHECK(b.global_logits.all_finite());
    for (const auto& p : b.part_feats) CHECK(p.all_finite());
    for (const auto& p : b.part_logits) CHECK(p.all_finite());
  }
}

TEST_CASE("end-to-end encoder gradients match finite differences") {
  // Full wiring check: stems, shared trunk, attention, pooling, necks and
  // classifiers, with a mixed-modality batch exercising the row restore.
  ModelConfig cfg;
  cfg.input_height = 8;
  cfg.input_width = 4;
  cfg.part_count = 2;
  cfg.feature_dim = 4;
  cfg.class_count = 2;
  cfg.trunk.stem_channels = 3;
  cfg.trunk.stages = {{4, 2, 1}};
  cfg.trunk.attention_bottleneck = 2;
  Rng rng = make_rng(17, rng_stream::kInit);
  Encoder enc(cfg, rng);

  Rng img_rng(13);
  std::vector<ModalityImage> imgs;
  imgs.push_back(noise_image(8, 4, Modality::IR, img_rng, 0));
  imgs.push_back(noise_image(8, 4, Modality::RGB, img_rng, 1));
  imgs.push_back(noise_image(8, 4, Modality::MIX, img_rng, 0));
  imgs.push_back(noise_image(8, 4, Modality::RGB, img_rng, 1));
  std::vector<const ModalityImage*> ptrs;
  for (auto& i : imgs) ptrs.push_back(&i);

  auto build = [&]() -> Var {
    BatchBundles b = enc.forward_batch(ptrs, /*training=*/true);
    std::vector<Var> terms = {weighted_reduce(b.global_logits), weighted_reduce(b.embedding),
                              weighted_reduce(b.global_feat)};
    std::vector<real> coeffs = {1.0, 0.7, 0.3};
    for (int k = 0; k < cfg.part_count; ++k) {
      terms.push_back(weighted_reduce(b.part_logits[static_cast<size_t>(k)]));
      terms.push_back(weighted_reduce(b.part_feats[static_cast<size_t>(k)]));
      coeffs.push_back(0.5);
      coeffs.push_back(0.2);
    }
    return weighted_sum(terms, coeffs);
  };

  auto result = gradcheck(build, enc.parameters(), 1e-5);
  CHECK(result.checked > 400);
  CHECK(result.max_rel_err < 1e-5);
}
