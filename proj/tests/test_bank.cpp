#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "pmx/bank.hpp"

using namespace pmx;
using pmx::test::gradcheck;
using pmx::test::random_tensor;

namespace {

// A one-part bank fed with a two-row batch (one RGB, one IR row per call).
struct Fixture {
  CenterBank bank;
  Fixture(int y, BankConfig cfg = {}) : bank(y, 1, 2, cfg) {}

  void feed(int id, Modality m, real a, real b) {
    Var g = make_constant(Tensor({1, 2}, std::vector<real>{a, b}));
    bank.update(g, {g}, {id}, {m});
    bank.end_step();
  }
};

}  // namespace

TEST_CASE("first observation sets the center directly") {
  Fixture f(2);
  f.feed(0, Modality::RGB, 3.0, -1.0);
  Tensor c = f.bank.center(0, Modality::RGB, 0);
  CHECK(c[0] == 3.0);
  CHECK(c[1] == -1.0);
  CHECK(f.bank.initialized(0, Modality::RGB));
  CHECK_FALSE(f.bank.initialized(0, Modality::IR));
  CHECK_FALSE(f.bank.fully_initialized());
}

TEST_CASE("EMA update: fixed point and hand step") {
  BankConfig cfg;
  cfg.alpha = 0.1;
  Fixture f(1, cfg);
  f.feed(0, Modality::RGB, 0.0, 0.0);

  // Features equal to the stored center leave it unchanged.
  f.feed(0, Modality::RGB, 0.0, 0.0);
  CHECK(f.bank.center(0, Modality::RGB, 0)[0] == 0.0);

  // alpha=0.1, center 0, batch mean 1 -> 0.1.
  f.feed(0, Modality::RGB, 1.0, 1.0);
  CHECK(f.bank.center(0, Modality::RGB, 0)[0] == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(f.bank.center(0, Modality::RGB, 0)[1] == doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("repeated updates contract geometrically to the batch mean") {
  BankConfig cfg;
  cfg.alpha = 0.25;
  Fixture f(1, cfg);
  f.feed(0, Modality::RGB, 0.0, 0.0);
  real expected_gap = 1.0;  // distance to the fixed batch mean of 1
  for (int k = 0; k < 6; ++k) {
    f.feed(0, Modality::RGB, 1.0, 1.0);
    expected_gap *= 1 - cfg.alpha;
    CHECK(f.bank.center(0, Modality::RGB, 0)[0] ==
          doctest::Approx(1.0 - expected_gap).epsilon(1e-12));
  }
}

TEST_CASE("batch means are computed per identity within one update") {
  CenterBank bank(2, 0, 1);
  Var g = make_constant(Tensor({4, 1}, std::vector<real>{1, 3, 10, 20}));
  bank.update(g, {}, {0, 0, 1, 1}, {Modality::RGB, Modality::RGB, Modality::RGB, Modality::RGB});
  bank.end_step();
  CHECK(bank.center(0, Modality::RGB, 0)[0] == doctest::Approx(2.0));   // mean(1,3)
  CHECK(bank.center(1, Modality::RGB, 0)[0] == doctest::Approx(15.0));  // mean(10,20)
}

TEST_CASE("update rejects out-of-range identities and mixed-modality rows") {
  CenterBank bank(2, 0, 1);
  Var g = make_constant(Tensor({1, 1}, std::vector<real>{1}));
  CHECK_THROWS_AS(bank.update(g, {}, {7}, {Modality::RGB}), std::invalid_argument);
  CHECK_THROWS_AS(bank.update(g, {}, {0}, {Modality::MIX}), std::invalid_argument);
}

TEST_CASE("center loss is inactive before start epoch and until fully initialized") {
  BankConfig cfg;
  cfg.start_epoch = 10;
  Fixture f(1, cfg);
  LossWeights w;

  f.feed(0, Modality::RGB, 1.0, 0.0);
  f.feed(0, Modality::IR, 0.0, 1.0);

  // Distinct centers, but epoch below the threshold.
  auto early = f.bank.c2c_loss(9, 0.5, w);
  CHECK_FALSE(early.active);
  CHECK(early.combined->value.item() == 0.0);

  auto late = f.bank.c2c_loss(10, 0.5, w);
  CHECK(late.active);
  CHECK(late.combined->value.item() > 0);

  // A bank with an uninitialized slot stays off regardless of epoch.
  Fixture partial(2, cfg);
  partial.feed(0, Modality::RGB, 1.0, 0.0);
  partial.feed(0, Modality::IR, 0.0, 1.0);
  auto off = partial.bank.c2c_loss(50, 0.5, w);
  CHECK_FALSE(off.active);
  CHECK(off.combined->value.item() == 0.0);
}

TEST_CASE("center loss hand value") {
  // Y=1, global slot (1,0) vs (0,1), lambda2=0.2, mu=0: 0.2 * 2 = 0.4.
  BankConfig cfg;
  cfg.start_epoch = 0;
  Fixture f(1, cfg);
  f.feed(0, Modality::RGB, 1.0, 0.0);
  f.feed(0, Modality::IR, 0.0, 1.0);
  LossWeights w;
  auto loss = f.bank.c2c_loss(0, 0.0, w);
  CHECK(loss.combined->value.item() == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(loss.global_value == doctest::Approx(2.0).epsilon(1e-12));

  // Coinciding centers give exactly zero.
  Fixture same(1, cfg);
  same.feed(0, Modality::RGB, 0.7, 0.7);
  same.feed(0, Modality::IR, 0.7, 0.7);
  CHECK(same.bank.c2c_loss(0, 0.5, w).combined->value.item() == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("center loss is invariant to a consistent identity relabeling") {
  BankConfig cfg;
  cfg.start_epoch = 0;
  LossWeights w;
  Rng rng(3);
  Tensor feats = random_tensor({6, 2}, rng);
  std::vector<Modality> mods = {Modality::RGB, Modality::IR, Modality::RGB,
                                Modality::IR, Modality::RGB, Modality::IR};

  CenterBank a(3, 0, 2, cfg);
  a.update(make_constant(feats), {}, {0, 0, 1, 1, 2, 2}, mods);
  a.end_step();
  CenterBank b(3, 0, 2, cfg);
  b.update(make_constant(feats), {}, {2, 2, 0, 0, 1, 1}, mods);  // permuted labels
  b.end_step();
  CHECK(a.c2c_loss(0, 0.5, w).combined->value.item() ==
        doctest::Approx(b.c2c_loss(0, 0.5, w).combined->value.item()).epsilon(1e-12));
}

TEST_CASE("update order of disjoint identities does not matter") {
  BankConfig cfg;
  Rng rng(5);
  Tensor feats = random_tensor({4, 2}, rng);
  Tensor swapped({4, 2});
  swapped.mat().topRows(2) = feats.mat().bottomRows(2);
  swapped.mat().bottomRows(2) = feats.mat().topRows(2);

  CenterBank a(2, 0, 2, cfg);
  a.update(make_constant(feats), {}, {0, 0, 1, 1},
           {Modality::RGB, Modality::RGB, Modality::RGB, Modality::RGB});
  CenterBank b(2, 0, 2, cfg);
  b.update(make_constant(swapped), {}, {1, 1, 0, 0},
           {Modality::RGB, Modality::RGB, Modality::RGB, Modality::RGB});
  for (int id = 0; id < 2; ++id)
    for (int c = 0; c < 2; ++c)
      CHECK(a.center(id, Modality::RGB, 0)[c] == b.center(id, Modality::RGB, 0)[c]);
}

TEST_CASE("gradients flow only through the current batch contribution") {
  BankConfig cfg;
  cfg.alpha = 0.2;
  cfg.start_epoch = 0;
  LossWeights w;
  Rng rng(7);
  Tensor warm_g = random_tensor({4, 2}, rng);
  Tensor warm_p = random_tensor({4, 2}, rng);
  std::vector<int> labels = {0, 0, 1, 1};
  std::vector<Modality> mods = {Modality::RGB, Modality::IR, Modality::RGB, Modality::IR};

  Var g = make_leaf(random_tensor({4, 2}, rng));
  Var p = make_leaf(random_tensor({4, 2}, rng));

  // Fresh bank per evaluation: warm-up update with constants, then the
  // differentiable step under test.
  auto build = [&]() -> Var {
    CenterBank bank(2, 1, 2, cfg);
    bank.update(make_constant(warm_g), {make_constant(warm_p)}, labels, mods);
    bank.end_step();
    bank.update(g, {p}, labels, mods);
    return bank.c2c_loss(0, 0.5, w).combined;
  };
  CHECK(gradcheck(build, {g, p}).max_rel_err < 1e-8);

  // After end_step the stored centers are constants: no gradient path.
  CenterBank bank(2, 1, 2, cfg);
  bank.update(g, {p}, labels, mods);
  bank.end_step();
  g->zero_grad();
  Var loss = bank.c2c_loss(0, 0.5, w).combined;
  CHECK_FALSE(loss->requires_grad);
}

TEST_CASE("checkpoint storage round-trips") {
  Fixture f(2);
  f.feed(0, Modality::RGB, 1.0, 2.0);
  f.feed(0, Modality::IR, 3.0, 4.0);
  f.feed(1, Modality::RGB, 5.0, 6.0);
  f.feed(1, Modality::IR, 7.0, 8.0);

  CenterBank copy(2, 1, 2);
  copy.storage() = f.bank.storage();
  copy.flags() = f.bank.flags();
  CHECK(copy.fully_initialized());
  CHECK(copy.center(1, Modality::IR, 0)[1] == 8.0);
  LossWeights w;
  CHECK(copy.c2c_loss(10, 0.5, w).combined->value.item() ==
        doctest::Approx(f.bank.c2c_loss(10, 0.5, w).combined->value.item()).epsilon(1e-15));
}
