#include "pmx/losses.hpp"

#include <cmath>
#include <map>

namespace pmx {

real mu_schedule(int epoch, const MuSchedule& sched) {
  sched.validate();
  if (epoch < 0 || epoch > sched.total_epochs)
    throw std::out_of_range("mu_schedule: epoch " + std::to_string(epoch) +
                            " outside [0," + std::to_string(sched.total_epochs) + "]");
  if (sched.ramp_epochs == 0 || epoch >= sched.ramp_epochs) return sched.max_value;
  return sched.max_value * (static_cast<real>(epoch) / static_cast<real>(sched.ramp_epochs));
}

S2SProjector::S2SProjector(int dim, Rng& rng) {
  w1 = make_leaf(nn::he_normal({dim, dim}, dim, rng));
  b1 = make_leaf(Tensor({dim}));
  w2 = make_leaf(nn::he_normal({dim, dim}, dim, rng));
  b2 = make_leaf(Tensor({dim}));
}

Var S2SProjector::apply(const Var& x) const {
  return nn::linear(nn::relu(nn::linear(x, w1, b1)), w2, b2);
}

// ---------------------------------------------------------------------------
// primitives
// ---------------------------------------------------------------------------

namespace {

// Row softmax with the usual max shift.
void softmax_row(const real* logits, int y, real* out) {
  real m = logits[0];
  for (int j = 1; j < y; ++j) m = std::max(m, logits[j]);
  real z = 0;
  for (int j = 0; j < y; ++j) {
    out[j] = std::exp(logits[j] - m);
    z += out[j];
  }
  for (int j = 0; j < y; ++j) out[j] /= z;
}

}  // namespace

Var id_loss(const Var& logits, const std::vector<int>& labels) {
  const Tensor& lv = logits->value;
  if (lv.rank() != 2) throw std::invalid_argument("id_loss: rank-2 logits required");
  const int n = lv.dim(0), y = lv.dim(1);
  if (static_cast<int>(labels.size()) != n)
    throw std::invalid_argument("id_loss: label count mismatch");
  for (int l : labels)
    if (l < 0 || l >= y)
      throw std::invalid_argument("id_loss: label " + std::to_string(l) + " outside [0," +
                                  std::to_string(y) + ")");

  auto probs = std::make_shared<Tensor>(std::vector<int>{n, y});
  real loss = 0;
  for (int i = 0; i < n; ++i) {
    softmax_row(lv.data() + static_cast<size_t>(i) * y, y, probs->data() + static_cast<size_t>(i) * y);
    loss -= std::log(std::max((*probs)[static_cast<long long>(i) * y + labels[static_cast<size_t>(i)]],
                              real(1e-300)));
  }
  loss /= static_cast<real>(n);

  return make_node(Tensor::scalar(loss), {logits},
                   [probs, labels, n, y](Node& node) {
                     const Var& in = node.inputs[0];
                     if (!in->requires_grad) return;
                     Tensor& g = in->ensure_grad();
                     const real s = node.grad.item() / static_cast<real>(n);
                     for (int i = 0; i < n; ++i)
                       for (int j = 0; j < y; ++j) {
                         real d = (*probs).at(i, j) - (labels[static_cast<size_t>(i)] == j ? 1 : 0);
                         g.at(i, j) += s * d;
                       }
                   },
                   "id_loss");
}

Var hard_triplet_loss(const Var& embeddings, const std::vector<int>& labels, real margin) {
  const Tensor& x = embeddings->value;
  if (x.rank() != 2) throw std::invalid_argument("hard_triplet_loss: rank-2 input required");
  const int n = x.dim(0), d = x.dim(1);
  if (static_cast<int>(labels.size()) != n)
    throw std::invalid_argument("hard_triplet_loss: label count mismatch");

  // Batch composition: each label twice or more, at least two labels.
  std::map<int, int> counts;
  for (int l : labels) counts[l]++;
  if (counts.size() < 2)
    throw std::invalid_argument("hard_triplet_loss: need at least two distinct labels");
  for (auto& [l, c] : counts)
    if (c < 2)
      throw std::invalid_argument("hard_triplet_loss: label " + std::to_string(l) +
                                  " appears only once");

  constexpr real kEps = 1e-12;  // keeps the sqrt differentiable at zero distance
  Tensor dist({n, n});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      real s = 0;
      for (int c = 0; c < d; ++c) {
        const real diff = x.at(i, c) - x.at(j, c);
        s += diff * diff;
      }
      dist.at(i, j) = std::sqrt(s + kEps);
    }

  // Hard mining; first index wins ties so the choice is deterministic.
  auto hard_pos = std::make_shared<std::vector<int>>(n);
  auto hard_neg = std::make_shared<std::vector<int>>(n);
  auto active = std::make_shared<std::vector<char>>(n);
  real loss = 0;
  for (int i = 0; i < n; ++i) {
    int hp = -1, hn = -1;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      if (labels[static_cast<size_t>(j)] == labels[static_cast<size_t>(i)]) {
        if (hp < 0 || dist.at(i, j) > dist.at(i, hp)) hp = j;
      } else {
        if (hn < 0 || dist.at(i, j) < dist.at(i, hn)) hn = j;
      }
    }
    (*hard_pos)[static_cast<size_t>(i)] = hp;
    (*hard_neg)[static_cast<size_t>(i)] = hn;
    const real term = dist.at(i, hp) - dist.at(i, hn) + margin;
    (*active)[static_cast<size_t>(i)] = term > 0;
    if (term > 0) loss += term;
  }
  loss /= static_cast<real>(n);

  auto dists = std::make_shared<Tensor>(dist);
  return make_node(
      Tensor::scalar(loss), {embeddings},
      [hard_pos, hard_neg, active, dists, n, d](Node& node) {
        const Var& in = node.inputs[0];
        if (!in->requires_grad) return;
        Tensor& g = in->ensure_grad();
        const Tensor& x = in->value;
        const real s = node.grad.item() / static_cast<real>(n);
        for (int i = 0; i < n; ++i) {
          if (!(*active)[static_cast<size_t>(i)]) continue;
          const int p = (*hard_pos)[static_cast<size_t>(i)];
          const int nn_ = (*hard_neg)[static_cast<size_t>(i)];
          const real dp = dists->at(i, p), dn = dists->at(i, nn_);
          for (int c = 0; c < d; ++c) {
            const real up = (x.at(i, c) - x.at(p, c)) / dp;
            const real un = (x.at(i, c) - x.at(nn_, c)) / dn;
            g.at(i, c) += s * (up - un);
            g.at(p, c) -= s * up;
            g.at(nn_, c) += s * un;
          }
        }
      },
      "hard_triplet_loss");
}

Var mse_mean(const Var& a, const Var& b) {
  if (!a->value.same_shape(b->value)) throw std::invalid_argument("mse_mean: shape mismatch");
  const long long m = a->value.size();
  real loss = 0;
  for (long long i = 0; i < m; ++i) {
    const real diff = a->value[i] - b->value[i];
    loss += diff * diff;
  }
  loss /= static_cast<real>(m);
  return make_node(Tensor::scalar(loss), {a, b},
                   [m](Node& node) {
                     const Var& a_in = node.inputs[0];
                     const Var& b_in = node.inputs[1];
                     const real s = node.grad.item() * 2 / static_cast<real>(m);
                     for (long long i = 0; i < m; ++i) {
                       const real diff = a_in->value[i] - b_in->value[i];
                       if (a_in->requires_grad) a_in->ensure_grad()[i] += s * diff;
                       if (b_in->requires_grad) b_in->ensure_grad()[i] -= s * diff;
                     }
                   },
                   "mse_mean");
}

Var sqdist_rows_mean(const Var& a, const Var& b) {
  if (!a->value.same_shape(b->value) || a->value.rank() != 2)
    throw std::invalid_argument("sqdist_rows_mean: matching rank-2 inputs required");
  const int rows = a->value.dim(0);
  real loss = 0;
  for (long long i = 0; i < a->value.size(); ++i) {
    const real diff = a->value[i] - b->value[i];
    loss += diff * diff;
  }
  loss /= static_cast<real>(rows);
  return make_node(Tensor::scalar(loss), {a, b},
                   [rows](Node& node) {
                     const Var& a_in = node.inputs[0];
                     const Var& b_in = node.inputs[1];
                     const real s = node.grad.item() * 2 / static_cast<real>(rows);
                     for (long long i = 0; i < a_in->value.size(); ++i) {
                       const real diff = a_in->value[i] - b_in->value[i];
                       if (a_in->requires_grad) a_in->ensure_grad()[i] += s * diff;
                       if (b_in->requires_grad) b_in->ensure_grad()[i] -= s * diff;
                     }
                   },
                   "sqdist_rows_mean");
}

Var s2s_loss(const Var& feats_v, const Var& feats_i, const S2SProjector& proj) {
  if (feats_v->value.dim(0) != feats_i->value.dim(0))
    throw std::invalid_argument("s2s_loss: row count mismatch between the modality halves");
  return mse_mean(proj.apply(feats_v), proj.apply(feats_i));
}

Var kl_sum(const Tensor& ref_logits, const Var& pred_logits) {
  if (!ref_logits.same_shape(pred_logits->value) || ref_logits.rank() != 2)
    throw std::invalid_argument("kl_sum: matching rank-2 logits required");
  const int n = ref_logits.dim(0), y = ref_logits.dim(1);

  auto p = std::make_shared<Tensor>(std::vector<int>{n, y});  // reference distribution
  auto q = std::make_shared<Tensor>(std::vector<int>{n, y});  // prediction distribution
  real loss = 0;
  for (int i = 0; i < n; ++i) {
    softmax_row(ref_logits.data() + static_cast<size_t>(i) * y, y, p->data() + static_cast<size_t>(i) * y);
    softmax_row(pred_logits->value.data() + static_cast<size_t>(i) * y, y,
                q->data() + static_cast<size_t>(i) * y);
    for (int j = 0; j < y; ++j) {
      const real pj = p->at(i, j);
      if (pj > 0) loss += pj * (std::log(pj) - std::log(std::max(q->at(i, j), real(1e-300))));
    }
  }

  return make_node(Tensor::scalar(loss), {pred_logits},
                   [p, q, n, y](Node& node) {
                     const Var& in = node.inputs[0];
                     if (!in->requires_grad) return;
                     Tensor& g = in->ensure_grad();
                     const real s = node.grad.item();
                     // d KL(p||softmax(z)) / dz = q - p
                     for (int i = 0; i < n; ++i)
                       for (int j = 0; j < y; ++j) g.at(i, j) += s * (q->at(i, j) - p->at(i, j));
                   },
                   "kl_sum");
}

Var part_align_loss(const Var& global_logits, const std::vector<Var>& part_logits) {
  if (part_logits.empty()) throw std::invalid_argument("part_align_loss: no part logits");
  std::vector<Var> terms;
  for (const auto& part : part_logits) {
    if (!part->value.same_shape(global_logits->value))
      throw std::invalid_argument("part_align_loss: shape mismatch between heads");
    terms.push_back(kl_sum(global_logits->value, part));
  }
  return weighted_sum(terms, std::vector<real>(terms.size(), real(1)));
}

namespace {

// Sum of global and per-part KL divergences from the reference bundles'
// distributions to the mixed bundles' distributions.
Var modality_alignment(const BatchBundles& ref, const BatchBundles& mixed) {
  if (ref.global_logits->value.dim(0) != mixed.global_logits->value.dim(0))
    throw std::invalid_argument("pmml_loss: bundle alignment mismatch");
  if (ref.part_logits.size() != mixed.part_logits.size())
    throw std::invalid_argument("pmml_loss: part count mismatch");
  std::vector<Var> terms = {kl_sum(ref.global_logits->value, mixed.global_logits)};
  for (size_t k = 0; k < ref.part_logits.size(); ++k)
    terms.push_back(kl_sum(ref.part_logits[k]->value, mixed.part_logits[k]));
  return weighted_sum(terms, std::vector<real>(terms.size(), real(1)));
}

}  // namespace

Var pmml_loss(const BatchBundles& bundles_v, const BatchBundles& bundles_i,
              const BatchBundles& bundles_m, real p) {
  if (!(p >= 0 && p <= 1)) throw std::invalid_argument("pmml_loss: p must lie in [0,1]");
  Var to_visible = modality_alignment(bundles_v, bundles_m);
  Var to_infrared = modality_alignment(bundles_i, bundles_m);
  return weighted_sum({to_visible, to_infrared}, {p, 1 - p});
}

Var total_loss(const LossTerms& terms, const LossWeights& w, real mu) {
  w.validate();
  auto check = [](const Var& v, const char* name) {
    if (v && !std::isfinite(v->value.item()))
      throw std::runtime_error(std::string("total_loss: component '") + name +
                               "' is not finite");
  };
  check(terms.id_g, "id_g");
  check(terms.tri, "tri");
  check(terms.s2s_g, "s2s_g");
  check(terms.id_p, "id_p");
  check(terms.s2s_p, "s2s_p");
  check(terms.part_align, "part_align");
  check(terms.c2c, "c2c");
  check(terms.pmml, "pmml");

  return weighted_sum(
      {terms.id_g, terms.tri, terms.s2s_g, terms.id_p, terms.s2s_p, terms.part_align, terms.c2c,
       terms.pmml},
      {1, 1, w.lambda1, mu, mu, mu, 1, mu});
}

}  // namespace pmx
