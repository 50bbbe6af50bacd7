#include "pmx/bank.hpp"

#include <map>

namespace pmx {

CenterBank::CenterBank(int identities, int parts, int dim, BankConfig cfg)
    : identities_(identities), parts_(parts), dim_(dim), cfg_(cfg),
      centers_({identities, 2, 1 + parts, dim}),
      init_(static_cast<size_t>(identities) * 2, 0) {
  if (identities < 1 || parts < 0 || dim < 1)
    throw std::invalid_argument("CenterBank: bad dimensions");
  cfg_.validate();
}

bool CenterBank::initialized(int identity, Modality m) const {
  if (identity < 0 || identity >= identities_)
    throw std::out_of_range("CenterBank: identity out of range");
  return init_[static_cast<size_t>(identity) * 2 + (m == Modality::IR ? 1 : 0)] != 0;
}

bool CenterBank::fully_initialized() const {
  for (auto f : init_)
    if (!f) return false;
  return true;
}

Tensor CenterBank::center(int identity, Modality m, int slot) const {
  if (slot < 0 || slot > parts_) throw std::out_of_range("CenterBank: slot out of range");
  const int mod = m == Modality::IR ? 1 : 0;
  Tensor out({dim_});
  const real* src = centers_.data() + offset(identity, mod, slot);
  std::copy(src, src + dim_, out.data());
  return out;
}

void CenterBank::update(const Var& global_feats, const std::vector<Var>& part_feats,
                        const std::vector<int>& labels,
                        const std::vector<Modality>& modalities) {
  const int n = global_feats->value.dim(0);
  if (static_cast<int>(labels.size()) != n || static_cast<int>(modalities.size()) != n)
    throw std::invalid_argument("CenterBank::update: label/modality count mismatch");
  if (static_cast<int>(part_feats.size()) != parts_)
    throw std::invalid_argument("CenterBank::update: part count mismatch");
  for (int l : labels)
    if (l < 0 || l >= identities_)
      throw std::invalid_argument("CenterBank::update: identity " + std::to_string(l) +
                                  " out of range");
  for (Modality m : modalities)
    if (m != Modality::RGB && m != Modality::IR)
      throw std::invalid_argument("CenterBank::update: only RGB and IR feed the bank");

  // Rows per (modality, identity).
  std::array<std::map<int, std::vector<int>>, 2> rows;
  for (int i = 0; i < n; ++i) {
    const int mod = modalities[static_cast<size_t>(i)] == Modality::IR ? 1 : 0;
    rows[static_cast<size_t>(mod)][labels[static_cast<size_t>(i)]].push_back(i);
  }

  // One differentiable blended-center matrix per (modality, slot).
  auto blend_slot = [this, &rows](int mod, int slot, const Var& feats) {
    // coeff[row] applied to d(center of its identity); captured for backward.
    auto contrib = std::make_shared<std::vector<std::pair<int, std::pair<int, real>>>>();
    Tensor value({identities_, dim_});
    for (int id = 0; id < identities_; ++id) {
      real* dst = value.data() + static_cast<long long>(id) * dim_;
      const real* old = centers_.data() + offset(id, mod, slot);
      const auto it = rows[static_cast<size_t>(mod)].find(id);
      if (it == rows[static_cast<size_t>(mod)].end()) {
        std::copy(old, old + dim_, dst);
        continue;
      }
      const auto& batch_rows = it->second;
      const real inv = real(1) / static_cast<real>(batch_rows.size());
      const bool fresh = init_[static_cast<size_t>(id) * 2 + mod] == 0;
      const real keep = fresh ? 0 : (1 - cfg_.alpha);
      const real take = fresh ? 1 : cfg_.alpha;
      for (int c = 0; c < dim_; ++c) {
        real mean = 0;
        for (int r : batch_rows) mean += feats->value.at(r, c);
        dst[c] = keep * old[c] + take * mean * inv;
      }
      for (int r : batch_rows) contrib->emplace_back(r, std::make_pair(id, take * inv));
    }
    const int d = dim_;
    Var out = make_node(std::move(value), {feats},
                        [contrib, d](Node& node) {
                          const Var& in = node.inputs[0];
                          if (!in->requires_grad) return;
                          Tensor& g = in->ensure_grad();
                          for (const auto& [row, target] : *contrib) {
                            const auto& [id, coeff] = target;
                            for (int c = 0; c < d; ++c)
                              g.at(row, c) += coeff * node.grad.at(id, c);
                          }
                        },
                        "bank_blend");
    // Commit the blended values as the stored centers.
    for (int id = 0; id < identities_; ++id) {
      real* dst = centers_.data() + offset(id, mod, slot);
      const real* src = out->value.data() + static_cast<long long>(id) * dim_;
      std::copy(src, src + dim_, dst);
    }
    return out;
  };

  for (int mod = 0; mod < 2; ++mod) {
    overlay_[static_cast<size_t>(mod)].clear();
    overlay_[static_cast<size_t>(mod)].push_back(blend_slot(mod, 0, global_feats));
    for (int k = 0; k < parts_; ++k)
      overlay_[static_cast<size_t>(mod)].push_back(blend_slot(mod, k + 1, part_feats[static_cast<size_t>(k)]));
  }
  has_overlay_ = true;

  // Flip the initialization flags last so every slot of this step saw the
  // same fresh/EMA decision.
  for (int mod = 0; mod < 2; ++mod)
    for (const auto& [id, r] : rows[static_cast<size_t>(mod)]) init_[static_cast<size_t>(id) * 2 + mod] = 1;
}

void CenterBank::end_step() {
  overlay_[0].clear();
  overlay_[1].clear();
  has_overlay_ = false;
}

CenterBank::C2CLoss CenterBank::c2c_loss(int epoch, real mu, const LossWeights& w) const {
  C2CLoss out;
  if (epoch < cfg_.start_epoch || !fully_initialized()) {
    out.combined = make_constant(Tensor::scalar(0));
    return out;
  }

  auto slot_var = [this](int mod, int slot) -> Var {
    if (has_overlay_) return overlay_[static_cast<size_t>(mod)][static_cast<size_t>(slot)];
    Tensor value({identities_, dim_});
    for (int id = 0; id < identities_; ++id) {
      const real* src = centers_.data() + offset(id, mod, slot);
      std::copy(src, src + dim_, value.data() + static_cast<long long>(id) * dim_);
    }
    return make_constant(std::move(value));
  };

  Var global = sqdist_rows_mean(slot_var(0, 0), slot_var(1, 0));
  out.global_value = global->value.item();

  Var part;
  if (parts_ > 0) {
    std::vector<Var> terms;
    for (int k = 0; k < parts_; ++k)
      terms.push_back(sqdist_rows_mean(slot_var(0, k + 1), slot_var(1, k + 1)));
    part = weighted_sum(terms, std::vector<real>(terms.size(), real(1) / parts_));
    out.part_value = part->value.item();
  }

  out.combined = weighted_sum({global, part}, {w.lambda2, mu * w.lambda3});
  out.active = true;
  return out;
}

}  // namespace pmx
