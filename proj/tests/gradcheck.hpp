#pragma once

// Central finite-difference oracle for the tape. Independent of any backward
// implementation: it only re-evaluates the forward closure at perturbed
// leaf values and compares the quotient against the accumulated gradients.

#include <functional>
#include <vector>

#include "pmx/autograd.hpp"

namespace pmx::test {

struct GradCheck {
  real max_rel_err = 0;
  long long checked = 0;
};

// `build` must construct a fresh graph from the current leaf values and
// return a scalar root. Relative error uses max(1,|a|,|n|) in the
// denominator so near-zero gradients are compared absolutely.
inline GradCheck gradcheck(const std::function<Var()>& build, const std::vector<Var>& leaves,
                           real h = 1e-5) {
  for (const auto& leaf : leaves) leaf->zero_grad();
  Var root = build();
  backward(root);

  GradCheck result;
  for (const auto& leaf : leaves) {
    const Tensor analytic = leaf->grad.empty() ? Tensor(leaf->value.shape()) : leaf->grad;
    for (long long i = 0; i < leaf->value.size(); ++i) {
      const real saved = leaf->value[i];
      leaf->value[i] = saved + h;
      const real fp = build()->value.item();
      leaf->value[i] = saved - h;
      const real fm = build()->value.item();
      leaf->value[i] = saved;

      const real numeric = (fp - fm) / (2 * h);
      const real a = analytic[i];
      const real denom = std::max({real(1), std::abs(a), std::abs(numeric)});
      result.max_rel_err = std::max(result.max_rel_err, std::abs(a - numeric) / denom);
      ++result.checked;
    }
  }
  return result;
}

inline Tensor random_tensor(const std::vector<int>& shape, Rng& rng, real lo = -1, real hi = 1) {
  Tensor t(shape);
  std::uniform_real_distribution<real> dist(lo, hi);
  for (long long i = 0; i < t.size(); ++i) t[i] = dist(rng);
  return t;
}

}  // namespace pmx::test
