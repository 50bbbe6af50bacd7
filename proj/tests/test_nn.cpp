#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "pmx/nn.hpp"

using namespace pmx;
using pmx::test::gradcheck;
using pmx::test::random_tensor;

namespace {

// Direct convolution, no im2col: the independent oracle for conv2d.
Tensor conv_reference(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  const int n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int ho = (h + 2 * pad - kh) / stride + 1;
  const int wo = (wd + 2 * pad - kw) / stride + 1;
  Tensor out({n, co, ho, wo});
  for (int img = 0; img < n; ++img)
    for (int oc = 0; oc < co; ++oc)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          real acc = b[oc];
          for (int ic = 0; ic < ci; ++ic)
            for (int ky = 0; ky < kh; ++ky)
              for (int kx = 0; kx < kw; ++kx) {
                const int iy = oy * stride - pad + ky;
                const int ix = ox * stride - pad + kx;
                if (iy >= 0 && iy < h && ix >= 0 && ix < wd)
                  acc += x.at(img, ic, iy, ix) * w.at(oc, ic, ky, kx);
              }
          out.at(img, oc, oy, ox) = acc;
        }
  return out;
}

// Weighted sum so gradients are non-uniform across elements.
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

}  // namespace

TEST_CASE("conv2d matches direct convolution") {
  Rng rng(7);
  Var x = make_leaf(random_tensor({2, 3, 5, 4}, rng));
  Var w = make_leaf(random_tensor({4, 3, 3, 3}, rng));
  Var b = make_leaf(random_tensor({4}, rng));
  for (int stride : {1, 2}) {
    Var y = nn::conv2d(x, w, b, stride, 1);
    Tensor ref = conv_reference(x->value, w->value, b->value, stride, 1);
    REQUIRE(y->value.shape() == ref.shape());
    for (long long i = 0; i < ref.size(); ++i) CHECK(y->value[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
}

TEST_CASE("conv2d gradients match finite differences") {
  Rng rng(11);
  Var x = make_leaf(random_tensor({2, 2, 4, 4}, rng));
  Var w = make_leaf(random_tensor({3, 2, 3, 3}, rng));
  Var b = make_leaf(random_tensor({3}, rng));
  auto build = [&] { return weighted_reduce(nn::conv2d(x, w, b, 2, 1)); };
  auto r = gradcheck(build, {x, w, b});
  CHECK(r.max_rel_err < 1e-7);
}

TEST_CASE("batch_norm2d forward matches direct formula and normalizes") {
  Rng rng(3);
  Var x = make_leaf(random_tensor({4, 3, 2, 2}, rng));
  Var gamma = make_leaf(Tensor({3}, real(1)));
  Var beta = make_leaf(Tensor({3}));
  nn::BnState st(3);
  Var y = nn::batch_norm2d(x, gamma, beta, st, true);

  const long long m = 4 * 2 * 2;
  for (int c = 0; c < 3; ++c) {
    real mu = 0, var = 0;
    for (int n = 0; n < 4; ++n)
      for (int h = 0; h < 2; ++h)
        for (int w = 0; w < 2; ++w) mu += x->value.at(n, c, h, w);
    mu /= real(m);
    for (int n = 0; n < 4; ++n)
      for (int h = 0; h < 2; ++h)
        for (int w = 0; w < 2; ++w) {
          real d = x->value.at(n, c, h, w) - mu;
          var += d * d;
        }
    var /= real(m);
    for (int n = 0; n < 4; ++n)
      for (int h = 0; h < 2; ++h)
        for (int w = 0; w < 2; ++w) {
          const real expect = (x->value.at(n, c, h, w) - mu) / std::sqrt(var + st.eps);
          CHECK(y->value.at(n, c, h, w) == doctest::Approx(expect).epsilon(1e-12));
        }
    CHECK(st.running_mean[c] == doctest::Approx(0.1 * mu).epsilon(1e-12));
  }
}

TEST_CASE("batch_norm gradients, train and eval modes") {
  Rng rng(5);
  Var x = make_leaf(random_tensor({3, 2, 2, 3}, rng));
  Var gamma = make_leaf(random_tensor({2}, rng, 0.5, 1.5));
  Var beta = make_leaf(random_tensor({2}, rng));
  nn::BnState st(2);
  st.running_mean = random_tensor({2}, rng);
  st.running_var = random_tensor({2}, rng, 0.5, 2.0);

  for (bool training : {true, false}) {
    auto build = [&] { return weighted_reduce(nn::batch_norm2d(x, gamma, beta, st, training)); };
    auto r = gradcheck(build, {x, gamma, beta});
    CHECK(r.max_rel_err < 1e-6);
  }

  Var xv = make_leaf(random_tensor({5, 3}, rng));
  Var g1 = make_leaf(random_tensor({3}, rng, 0.5, 1.5));
  Var b1 = make_leaf(random_tensor({3}, rng));
  nn::BnState st1(3);
  auto build1 = [&] { return weighted_reduce(nn::batch_norm1d(xv, g1, b1, st1, true)); };
  CHECK(gradcheck(build1, {xv, g1, b1}).max_rel_err < 1e-6);
}

TEST_CASE("linear and relu") {
  Rng rng(13);
  Var x = make_leaf(random_tensor({3, 4}, rng));
  Var w = make_leaf(random_tensor({5, 4}, rng));
  Var b = make_leaf(random_tensor({5}, rng));
  Var y = nn::linear(x, w, b);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 5; ++j) {
      real acc = b->value[j];
      for (int k = 0; k < 4; ++k) acc += x->value.at(i, k) * w->value.at(j, k);
      CHECK(y->value.at(i, j) == doctest::Approx(acc).epsilon(1e-12));
    }
  auto build = [&] { return weighted_reduce(nn::relu(nn::linear(x, w, b))); };
  CHECK(gradcheck(build, {x, w, b}).max_rel_err < 1e-6);
}

TEST_CASE("global pool equals mean of stripe pools") {
  Rng rng(17);
  Var x = make_leaf(random_tensor({2, 3, 6, 2}, rng));
  Var g = nn::global_avg_pool(x);
  const int parts = 3;
  std::vector<Var> stripes;
  for (int k = 0; k < parts; ++k) stripes.push_back(nn::stripe_avg_pool(x, parts, k));
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c) {
      real mean_of_parts = 0;
      for (int k = 0; k < parts; ++k) mean_of_parts += stripes[k]->value.at(n, c);
      mean_of_parts /= parts;
      CHECK(g->value.at(n, c) == doctest::Approx(mean_of_parts).epsilon(1e-12));
    }
  CHECK_THROWS_AS(nn::stripe_avg_pool(x, 4, 0), std::invalid_argument);

  auto build = [&] { return weighted_reduce(nn::stripe_avg_pool(x, 3, 1)); };
  CHECK(gradcheck(build, {x}).max_rel_err < 1e-7);
  auto buildg = [&] { return weighted_reduce(nn::global_avg_pool(x)); };
  CHECK(gradcheck(buildg, {x}).max_rel_err < 1e-7);
}

TEST_CASE("part_gate matches a scalar recomputation of the gate") {
  Rng rng(19);
  const int n = 2, c = 3, h = 4, w = 2, parts = 2, r = 2;
  Var x = make_leaf(random_tensor({n, c, h, w}, rng));
  Var w1 = make_leaf(random_tensor({r, c}, rng));
  Var b1 = make_leaf(random_tensor({r}, rng));
  Var w2 = make_leaf(random_tensor({1, r}, rng));
  Var b2 = make_leaf(random_tensor({1}, rng));
  Var y = nn::part_gate(x, w1, b1, w2, b2, parts);

  const int hs = h / parts;
  for (int img = 0; img < n; ++img)
    for (int s = 0; s < parts; ++s) {
      // Scalar re-derivation of the stripe gate.
      std::vector<real> d(c, 0.0);
      for (int ch = 0; ch < c; ++ch) {
        for (int y0 = s * hs; y0 < (s + 1) * hs; ++y0)
          for (int x0 = 0; x0 < w; ++x0) d[ch] += x->value.at(img, ch, y0, x0);
        d[ch] /= real(hs * w);
      }
      real z = b2->value[0];
      for (int j = 0; j < r; ++j) {
        real hj = b1->value[j];
        for (int ch = 0; ch < c; ++ch) hj += w1->value.at(j, ch) * d[ch];
        z += w2->value.at(0, j) * std::max(real(0), hj);
      }
      const real gate = 1 / (1 + std::exp(-z));
      CHECK(gate > 0);
      CHECK(gate < 1);
      for (int ch = 0; ch < c; ++ch)
        for (int y0 = s * hs; y0 < (s + 1) * hs; ++y0)
          for (int x0 = 0; x0 < w; ++x0)
            CHECK(y->value.at(img, ch, y0, x0) ==
                  doctest::Approx(x->value.at(img, ch, y0, x0) * gate).epsilon(1e-12));
    }

  // Gate never amplifies.
  for (long long i = 0; i < y->value.size(); ++i)
    CHECK(std::abs(y->value[i]) <= std::abs(x->value[i]) + 1e-15);

  auto build = [&] { return weighted_reduce(nn::part_gate(x, w1, b1, w2, b2, parts)); };
  CHECK(gradcheck(build, {x, w1, b1, w2, b2}).max_rel_err < 1e-6);
}

TEST_CASE("part_gate with saturated gates is the identity") {
  Rng rng(23);
  Var x = make_leaf(random_tensor({1, 2, 4, 2}, rng));
  Var w1 = make_leaf(Tensor({2, 2}));
  Var b1 = make_leaf(Tensor({2}));
  Var w2 = make_leaf(Tensor({1, 2}));
  Var b2 = make_leaf(Tensor({1}, real(50)));  // sigmoid(50) == 1 to double precision
  Var y = nn::part_gate(x, w1, b1, w2, b2, 2);
  for (long long i = 0; i < y->value.size(); ++i)
    CHECK(y->value[i] == doctest::Approx(x->value[i]).epsilon(1e-12));
}

TEST_CASE("concat and slice round-trip with correct gradients") {
  Rng rng(29);
  Var a = make_leaf(random_tensor({2, 3}, rng));
  Var b = make_leaf(random_tensor({4, 3}, rng));
  Var cat = concat_rows({a, b});
  CHECK(cat->value.dim(0) == 6);
  Var back = slice_rows(cat, 2, 4);
  for (long long i = 0; i < back->value.size(); ++i) CHECK(back->value[i] == b->value[i]);

  auto build = [&] { return weighted_reduce(slice_rows(concat_rows({a, b}), 1, 3)); };
  CHECK(gradcheck(build, {a, b}).max_rel_err < 1e-7);
}

TEST_CASE("weighted_sum composes scalars") {
  Var a = make_leaf(Tensor::scalar(2.0));
  Var b = make_leaf(Tensor::scalar(3.0));
  Var s = weighted_sum({a, nullptr, b}, {0.5, 9.0, 2.0});
  CHECK(s->value.item() == doctest::Approx(7.0));
  backward(s);
  CHECK(a->grad.item() == doctest::Approx(0.5));
  CHECK(b->grad.item() == doctest::Approx(2.0));
}

TEST_CASE("sgd applies momentum and weight decay") {
  Var p = make_leaf(Tensor({2}, std::vector<real>{1.0, -2.0}));
  p->ensure_grad();
  p->grad[0] = 0.5;
  p->grad[1] = -1.0;
  nn::Sgd opt(0.9, 0.01);
  opt.step({p}, 0.1);
  // v = g + wd*p; p -= lr*v
  CHECK(p->value[0] == doctest::Approx(1.0 - 0.1 * (0.5 + 0.01 * 1.0)));
  CHECK(p->value[1] == doctest::Approx(-2.0 - 0.1 * (-1.0 + 0.01 * -2.0)));
  const real v0 = 0.5 + 0.01 * 1.0;
  const real p0 = 1.0 - 0.1 * v0;
  opt.step({p}, 0.1);  // same gradient, momentum kicks in
  CHECK(p->value[0] == doctest::Approx(p0 - 0.1 * (0.9 * v0 + 0.5 + 0.01 * p0)));
}

TEST_CASE("deterministic initialization") {
  Rng r1 = make_rng(42, rng_stream::kInit);
  Rng r2 = make_rng(42, rng_stream::kInit);
  Tensor a = nn::he_normal({3, 3}, 9, r1);
  Tensor b = nn::he_normal({3, 3}, 9, r2);
  for (long long i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  Rng r3 = make_rng(43, rng_stream::kInit);
  Tensor c = nn::he_normal({3, 3}, 9, r3);
  bool any_diff = false;
  for (long long i = 0; i < a.size(); ++i) any_diff |= (a[i] != c[i]);
  CHECK(any_diff);
}
