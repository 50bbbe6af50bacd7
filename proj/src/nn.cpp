#include "pmx/nn.hpp"

#include <cmath>

namespace pmx::nn {

Tensor he_normal(const std::vector<int>& shape, int fan_in, Rng& rng) {
  Tensor t(shape);
  std::normal_distribution<real> dist(0.0, std::sqrt(2.0 / static_cast<real>(fan_in)));
  for (long long i = 0; i < t.size(); ++i) t[i] = dist(rng);
  return t;
}

Tensor normal_init(const std::vector<int>& shape, real stddev, Rng& rng) {
  Tensor t(shape);
  std::normal_distribution<real> dist(0.0, stddev);
  for (long long i = 0; i < t.size(); ++i) t[i] = dist(rng);
  return t;
}

// ---------------------------------------------------------------------------
// conv2d, im2col formulation
// ---------------------------------------------------------------------------

namespace {

// col has one row per output position (n-major, then ho, wo) and one column
// per (ci,kh,kw) tap.
void im2col(const Tensor& x, int kh, int kw, int stride, int pad, int ho, int wo, Tensor& col) {
  const int n_imgs = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int patch = ci * kh * kw;
  for (int n = 0; n < n_imgs; ++n) {
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        real* row = col.data() + (static_cast<size_t>(n) * ho * wo + oy * wo + ox) * patch;
        int idx = 0;
        for (int c = 0; c < ci; ++c) {
          for (int ky = 0; ky < kh; ++ky) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= h) {
              for (int kx = 0; kx < kw; ++kx) row[idx++] = 0;
              continue;
            }
            const real* src = x.data() + ((static_cast<size_t>(n) * ci + c) * h + iy) * w;
            for (int kx = 0; kx < kw; ++kx) {
              const int ix = ox * stride - pad + kx;
              row[idx++] = (ix < 0 || ix >= w) ? real(0) : src[ix];
            }
          }
        }
      }
    }
  }
}

void col2im(const Tensor& dcol, int kh, int kw, int stride, int pad, int ho, int wo, Tensor& dx) {
  const int n_imgs = dx.dim(0), ci = dx.dim(1), h = dx.dim(2), w = dx.dim(3);
  const int patch = ci * kh * kw;
  for (int n = 0; n < n_imgs; ++n) {
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        const real* row = dcol.data() + (static_cast<size_t>(n) * ho * wo + oy * wo + ox) * patch;
        int idx = 0;
        for (int c = 0; c < ci; ++c) {
          for (int ky = 0; ky < kh; ++ky) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= h) {
              idx += kw;
              continue;
            }
            real* dst = dx.data() + ((static_cast<size_t>(n) * ci + c) * h + iy) * w;
            for (int kx = 0; kx < kw; ++kx) {
              const int ix = ox * stride - pad + kx;
              if (ix >= 0 && ix < w) dst[ix] += row[idx];
              ++idx;
            }
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  const Tensor& xv = x->value;
  const Tensor& wv = w->value;
  if (xv.rank() != 4 || wv.rank() != 4) throw std::invalid_argument("conv2d: rank-4 x and w required");
  if (xv.dim(1) != wv.dim(1)) throw std::invalid_argument("conv2d: channel mismatch");
  const int n = xv.dim(0), h = xv.dim(2), width = xv.dim(3);
  const int co = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
  const int ho = (h + 2 * pad - kh) / stride + 1;
  const int wo = (width + 2 * pad - kw) / stride + 1;
  if (ho <= 0 || wo <= 0) throw std::invalid_argument("conv2d: empty output");
  const int patch = xv.dim(1) * kh * kw;
  const long long rows = static_cast<long long>(n) * ho * wo;

  auto col = std::make_shared<Tensor>(std::vector<int>{static_cast<int>(rows), patch});
  im2col(xv, kh, kw, stride, pad, ho, wo, *col);

  // rows x co = (rows x patch) * (patch x co)
  Tensor prod({static_cast<int>(rows), co});
  prod.mat() = col->mat() * wv.mat(co, patch).transpose();

  Tensor out({n, co, ho, wo});
  for (int img = 0; img < n; ++img)
    for (int c = 0; c < co; ++c)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox)
          out.at(img, c, oy, ox) =
              prod.at(img * ho * wo + oy * wo + ox, c) + b->value[c];

  auto bw = [col, stride, pad, ho, wo, kh, kw, patch, co, n](Node& node) {
    const Var& x_in = node.inputs[0];
    const Var& w_in = node.inputs[1];
    const Var& b_in = node.inputs[2];
    const Tensor& dout = node.grad;
    const long long rows = static_cast<long long>(n) * ho * wo;

    Tensor dprod({static_cast<int>(rows), co});
    for (int img = 0; img < n; ++img)
      for (int c = 0; c < co; ++c)
        for (int oy = 0; oy < ho; ++oy)
          for (int ox = 0; ox < wo; ++ox)
            dprod.at(img * ho * wo + oy * wo + ox, c) = dout.at(img, c, oy, ox);

    if (b_in->requires_grad) {
      Tensor& db = b_in->ensure_grad();
      for (int c = 0; c < co; ++c) db[c] += dprod.mat().col(c).sum();
    }
    if (w_in->requires_grad) {
      Tensor& dw = w_in->ensure_grad();
      dw.mat(co, patch).noalias() += dprod.mat().transpose() * col->mat();
    }
    if (x_in->requires_grad) {
      Tensor dcol({static_cast<int>(rows), patch});
      dcol.mat().noalias() = dprod.mat() * w_in->value.mat(co, patch);
      Tensor& dx = x_in->ensure_grad();
      col2im(dcol, kh, kw, stride, pad, ho, wo, dx);
    }
  };
  return make_node(std::move(out), {x, w, b}, std::move(bw), "conv2d");
}

// ---------------------------------------------------------------------------
// batch norm
// ---------------------------------------------------------------------------

namespace {

// Shared BN core over a generic (channel, element) indexing. `index(c, m)`
// maps channel c and in-channel element m to the flat tensor offset.
template <typename IndexFn>
Var bn_impl(const Var& x, const Var& gamma, const Var& beta, BnState& state, bool training,
            int channels, long long per_channel, IndexFn index, const char* opname) {
  const Tensor& xv = x->value;
  if (gamma->value.size() != channels || beta->value.size() != channels)
    throw std::invalid_argument("batch_norm: affine parameter size mismatch");
  if (state.running_mean.size() != channels)
    throw std::invalid_argument("batch_norm: state channel mismatch");

  Tensor mean({channels}), var({channels});
  if (training) {
    for (int c = 0; c < channels; ++c) {
      real s = 0;
      for (long long m = 0; m < per_channel; ++m) s += xv[index(c, m)];
      mean[c] = s / static_cast<real>(per_channel);
      real v = 0;
      for (long long m = 0; m < per_channel; ++m) {
        real d = xv[index(c, m)] - mean[c];
        v += d * d;
      }
      var[c] = v / static_cast<real>(per_channel);
    }
    const real unbias =
        per_channel > 1 ? static_cast<real>(per_channel) / static_cast<real>(per_channel - 1) : 1;
    for (int c = 0; c < channels; ++c) {
      state.running_mean[c] =
          (1 - state.momentum) * state.running_mean[c] + state.momentum * mean[c];
      state.running_var[c] =
          (1 - state.momentum) * state.running_var[c] + state.momentum * var[c] * unbias;
    }
  } else {
    mean = state.running_mean;
    var = state.running_var;
  }

  auto invstd = std::make_shared<Tensor>(std::vector<int>{channels});
  for (int c = 0; c < channels; ++c) (*invstd)[c] = real(1) / std::sqrt(var[c] + state.eps);

  auto xhat = std::make_shared<Tensor>(xv.shape());
  Tensor out(xv.shape());
  for (int c = 0; c < channels; ++c) {
    const real g = gamma->value[c], bta = beta->value[c], is = (*invstd)[c], mu = mean[c];
    for (long long m = 0; m < per_channel; ++m) {
      const long long i = index(c, m);
      const real xh = (xv[i] - mu) * is;
      (*xhat)[i] = xh;
      out[i] = g * xh + bta;
    }
  }

  auto bw = [xhat, invstd, training, channels, per_channel, index](Node& node) {
    const Var& x_in = node.inputs[0];
    const Var& g_in = node.inputs[1];
    const Var& b_in = node.inputs[2];
    const Tensor& dy = node.grad;

    for (int c = 0; c < channels; ++c) {
      real sum_dy = 0, sum_dy_xhat = 0;
      for (long long m = 0; m < per_channel; ++m) {
        const long long i = index(c, m);
        sum_dy += dy[i];
        sum_dy_xhat += dy[i] * (*xhat)[i];
      }
      if (g_in->requires_grad) g_in->ensure_grad()[c] += sum_dy_xhat;
      if (b_in->requires_grad) b_in->ensure_grad()[c] += sum_dy;
      if (!x_in->requires_grad) continue;

      Tensor& dx = x_in->ensure_grad();
      const real g = g_in->value[c], is = (*invstd)[c];
      if (training) {
        const real inv_m = real(1) / static_cast<real>(per_channel);
        for (long long m = 0; m < per_channel; ++m) {
          const long long i = index(c, m);
          dx[i] += g * is * (dy[i] - inv_m * sum_dy - (*xhat)[i] * inv_m * sum_dy_xhat);
        }
      } else {
        for (long long m = 0; m < per_channel; ++m) {
          const long long i = index(c, m);
          dx[i] += g * is * dy[i];
        }
      }
    }
  };
  return make_node(std::move(out), {x, gamma, beta}, std::move(bw), opname);
}

}  // namespace

Var batch_norm2d(const Var& x, const Var& gamma, const Var& beta, BnState& state, bool training) {
  const Tensor& xv = x->value;
  if (xv.rank() != 4) throw std::invalid_argument("batch_norm2d: rank-4 input required");
  const int n = xv.dim(0), c = xv.dim(1);
  const long long hw = static_cast<long long>(xv.dim(2)) * xv.dim(3);
  const long long per_channel = n * hw;
  auto index = [c, hw](int ch, long long m) {
    const long long img = m / hw, pix = m % hw;
    return (img * c + ch) * hw + pix;
  };
  return bn_impl(x, gamma, beta, state, training, c, per_channel, index, "batch_norm2d");
}

Var batch_norm1d(const Var& x, const Var& gamma, const Var& beta, BnState& state, bool training) {
  const Tensor& xv = x->value;
  if (xv.rank() != 2) throw std::invalid_argument("batch_norm1d: rank-2 input required");
  const int n = xv.dim(0), d = xv.dim(1);
  auto index = [d](int ch, long long m) { return m * d + ch; };
  return bn_impl(x, gamma, beta, state, training, d, n, index, "batch_norm1d");
}

// ---------------------------------------------------------------------------
// elementwise / dense
// ---------------------------------------------------------------------------

Var relu(const Var& x) {
  Tensor out = x->value;
  for (long long i = 0; i < out.size(); ++i)
    if (out[i] < 0) out[i] = 0;
  return make_node(std::move(out), {x},
                   [](Node& n) {
                     const Var& in = n.inputs[0];
                     if (!in->requires_grad) return;
                     Tensor& dx = in->ensure_grad();
                     for (long long i = 0; i < dx.size(); ++i)
                       if (n.value[i] > 0) dx[i] += n.grad[i];
                   },
                   "relu");
}

Var linear(const Var& x, const Var& w, const Var& b) {
  const Tensor& xv = x->value;
  const Tensor& wv = w->value;
  if (xv.rank() != 2 || wv.rank() != 2 || xv.dim(1) != wv.dim(1))
    throw std::invalid_argument("linear: shape mismatch");
  const int n = xv.dim(0), out_d = wv.dim(0);
  Tensor out({n, out_d});
  out.mat().noalias() = xv.mat() * wv.mat().transpose();
  out.mat().rowwise() += ConstVecMap(b->value.data(), out_d).transpose();
  return make_node(std::move(out), {x, w, b},
                   [](Node& node) {
                     const Var& x_in = node.inputs[0];
                     const Var& w_in = node.inputs[1];
                     const Var& b_in = node.inputs[2];
                     MatMap dy = node.grad.mat(node.value.dim(0), node.value.dim(1));
                     if (b_in->requires_grad)
                       b_in->ensure_grad().vec() += dy.colwise().sum().transpose();
                     if (w_in->requires_grad)
                       w_in->ensure_grad().mat().noalias() += dy.transpose() * x_in->value.mat();
                     if (x_in->requires_grad)
                       x_in->ensure_grad().mat().noalias() += dy * w_in->value.mat();
                   },
                   "linear");
}

// ---------------------------------------------------------------------------
// pooling / attention
// ---------------------------------------------------------------------------

Var global_avg_pool(const Var& x) {
  const Tensor& xv = x->value;
  if (xv.rank() != 4) throw std::invalid_argument("global_avg_pool: rank-4 input required");
  const int n = xv.dim(0), c = xv.dim(1);
  const long long hw = static_cast<long long>(xv.dim(2)) * xv.dim(3);
  Tensor out({n, c});
  for (int img = 0; img < n; ++img)
    for (int ch = 0; ch < c; ++ch) {
      const real* src = xv.data() + (static_cast<size_t>(img) * c + ch) * hw;
      real s = 0;
      for (long long i = 0; i < hw; ++i) s += src[i];
      out.at(img, ch) = s / static_cast<real>(hw);
    }
  return make_node(std::move(out), {x},
                   [n, c, hw](Node& node) {
                     const Var& in = node.inputs[0];
                     if (!in->requires_grad) return;
                     Tensor& dx = in->ensure_grad();
                     const real inv = real(1) / static_cast<real>(hw);
                     for (int img = 0; img < n; ++img)
                       for (int ch = 0; ch < c; ++ch) {
                         const real g = node.grad.at(img, ch) * inv;
                         real* dst = dx.data() + (static_cast<size_t>(img) * c + ch) * hw;
                         for (long long i = 0; i < hw; ++i) dst[i] += g;
                       }
                   },
                   "global_avg_pool");
}

Var stripe_avg_pool(const Var& x, int parts, int k) {
  const Tensor& xv = x->value;
  if (xv.rank() != 4) throw std::invalid_argument("stripe_avg_pool: rank-4 input required");
  const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  if (parts <= 0 || h % parts != 0)
    throw std::invalid_argument("stripe_avg_pool: feature height " + std::to_string(h) +
                                " not divisible by parts " + std::to_string(parts));
  if (k < 0 || k >= parts) throw std::out_of_range("stripe_avg_pool: part index");
  const int hs = h / parts, y0 = k * hs;
  const long long cnt = static_cast<long long>(hs) * w;
  Tensor out({n, c});
  for (int img = 0; img < n; ++img)
    for (int ch = 0; ch < c; ++ch) {
      real s = 0;
      for (int y = y0; y < y0 + hs; ++y)
        for (int xw = 0; xw < w; ++xw) s += xv.at(img, ch, y, xw);
      out.at(img, ch) = s / static_cast<real>(cnt);
    }
  return make_node(std::move(out), {x},
                   [n, c, w, hs, y0, cnt](Node& node) {
                     const Var& in = node.inputs[0];
                     if (!in->requires_grad) return;
                     Tensor& dx = in->ensure_grad();
                     const real inv = real(1) / static_cast<real>(cnt);
                     for (int img = 0; img < n; ++img)
                       for (int ch = 0; ch < c; ++ch) {
                         const real g = node.grad.at(img, ch) * inv;
                         for (int y = y0; y < y0 + hs; ++y)
                           for (int xw = 0; xw < w; ++xw) dx.at(img, ch, y, xw) += g;
                       }
                   },
                   "stripe_avg_pool");
}

Var part_gate(const Var& x, const Var& w1, const Var& b1, const Var& w2, const Var& b2,
              int parts) {
  const Tensor& xv = x->value;
  if (xv.rank() != 4) throw std::invalid_argument("part_gate: rank-4 input required");
  const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  if (parts <= 0 || h % parts != 0)
    throw std::invalid_argument("part_gate: feature height " + std::to_string(h) +
                                " not divisible by parts " + std::to_string(parts));
  const int r = w1->value.dim(0);
  if (w1->value.dim(1) != c || w2->value.dim(1) != r || w2->value.dim(0) != 1)
    throw std::invalid_argument("part_gate: mlp shape mismatch");
  const int hs = h / parts;
  const long long cnt = static_cast<long long>(hs) * w;

  // Saved intermediates: stripe descriptors, hidden activations, gates.
  auto desc = std::make_shared<Tensor>(std::vector<int>{n, parts, c});
  auto hidden = std::make_shared<Tensor>(std::vector<int>{n, parts, r});
  auto gates = std::make_shared<Tensor>(std::vector<int>{n, parts});

  Tensor out(xv.shape());
  for (int img = 0; img < n; ++img) {
    for (int s = 0; s < parts; ++s) {
      real* d = desc->data() + (static_cast<size_t>(img) * parts + s) * c;
      for (int ch = 0; ch < c; ++ch) {
        real acc = 0;
        for (int y = s * hs; y < (s + 1) * hs; ++y)
          for (int xw = 0; xw < w; ++xw) acc += xv.at(img, ch, y, xw);
        d[ch] = acc / static_cast<real>(cnt);
      }
      real* hid = hidden->data() + (static_cast<size_t>(img) * parts + s) * r;
      for (int j = 0; j < r; ++j) {
        real acc = b1->value[j];
        for (int ch = 0; ch < c; ++ch) acc += w1->value.at(j, ch) * d[ch];
        hid[j] = acc > 0 ? acc : 0;
      }
      real z = b2->value[0];
      for (int j = 0; j < r; ++j) z += w2->value.at(0, j) * hid[j];
      const real g = real(1) / (real(1) + std::exp(-z));
      gates->at(img, s) = g;
      for (int ch = 0; ch < c; ++ch)
        for (int y = s * hs; y < (s + 1) * hs; ++y)
          for (int xw = 0; xw < w; ++xw) out.at(img, ch, y, xw) = xv.at(img, ch, y, xw) * g;
    }
  }

  auto bw = [desc, hidden, gates, parts, hs, cnt, n, c, w, r](Node& node) {
    const Var& x_in = node.inputs[0];
    const Var& w1_in = node.inputs[1];
    const Var& b1_in = node.inputs[2];
    const Var& w2_in = node.inputs[3];
    const Var& b2_in = node.inputs[4];
    const Tensor& dy = node.grad;
    const Tensor& xv = x_in->value;

    for (int img = 0; img < n; ++img) {
      for (int s = 0; s < parts; ++s) {
        const real g = gates->at(img, s);
        // d(loss)/d(gate): inner product of dy and x over the stripe.
        real dgate = 0;
        for (int ch = 0; ch < c; ++ch)
          for (int y = s * hs; y < (s + 1) * hs; ++y)
            for (int xw = 0; xw < w; ++xw) dgate += dy.at(img, ch, y, xw) * xv.at(img, ch, y, xw);

        if (x_in->requires_grad) {
          Tensor& dx = x_in->ensure_grad();
          for (int ch = 0; ch < c; ++ch)
            for (int y = s * hs; y < (s + 1) * hs; ++y)
              for (int xw = 0; xw < w; ++xw) dx.at(img, ch, y, xw) += dy.at(img, ch, y, xw) * g;
        }

        const real dz = dgate * g * (1 - g);
        const real* hid = hidden->data() + (static_cast<size_t>(img) * parts + s) * r;
        const real* d = desc->data() + (static_cast<size_t>(img) * parts + s) * c;

        if (b2_in->requires_grad) b2_in->ensure_grad()[0] += dz;
        if (w2_in->requires_grad) {
          Tensor& dw2 = w2_in->ensure_grad();
          for (int j = 0; j < r; ++j) dw2.at(0, j) += dz * hid[j];
        }

        std::vector<real> dhid(static_cast<size_t>(r));
        for (int j = 0; j < r; ++j)
          dhid[static_cast<size_t>(j)] = hid[j] > 0 ? dz * w2_in->value.at(0, j) : 0;

        if (b1_in->requires_grad) {
          Tensor& db1 = b1_in->ensure_grad();
          for (int j = 0; j < r; ++j) db1[j] += dhid[static_cast<size_t>(j)];
        }
        if (w1_in->requires_grad) {
          Tensor& dw1 = w1_in->ensure_grad();
          for (int j = 0; j < r; ++j)
            for (int ch = 0; ch < c; ++ch) dw1.at(j, ch) += dhid[static_cast<size_t>(j)] * d[ch];
        }
        if (x_in->requires_grad) {
          Tensor& dx = x_in->ensure_grad();
          const real inv = real(1) / static_cast<real>(cnt);
          for (int ch = 0; ch < c; ++ch) {
            real dd = 0;
            for (int j = 0; j < r; ++j) dd += dhid[static_cast<size_t>(j)] * w1_in->value.at(j, ch);
            const real spread = dd * inv;
            for (int y = s * hs; y < (s + 1) * hs; ++y)
              for (int xw = 0; xw < w; ++xw) dx.at(img, ch, y, xw) += spread;
          }
        }
      }
    }
  };
  return make_node(std::move(out), {x, w1, b1, w2, b2}, std::move(bw), "part_gate");
}

// ---------------------------------------------------------------------------
// SGD
// ---------------------------------------------------------------------------

void Sgd::step(const std::vector<Var>& params, real lr) {
  for (const auto& p : params) {
    if (!p || p->grad.empty()) continue;
    auto [it, inserted] = velocity_.try_emplace(p.get(), Tensor(p->value.shape()));
    Tensor& v = it->second;
    for (long long i = 0; i < v.size(); ++i) {
      const real g = p->grad[i] + weight_decay_ * p->value[i];
      v[i] = momentum_ * v[i] + g;
      p->value[i] -= lr * v[i];
    }
  }
}

void Sgd::zero_grad(const std::vector<Var>& params) {
  for (const auto& p : params)
    if (p) p->zero_grad();
}

}  // namespace pmx::nn
