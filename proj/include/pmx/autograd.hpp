#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "pmx/tensor.hpp"

namespace pmx {

// Reverse-mode tape. Graphs are built per training step out of coarse ops
// (conv, batchnorm, fused losses, ...), each with a hand-written backward.
// Leaves (parameters) outlive the step; interior nodes die with the root.
struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<Var> inputs;
  std::function<void(Node&)> backward_fn;  // reads this->grad, pushes into inputs
  const char* op = "";

  Tensor& ensure_grad() {
    if (grad.empty() && value.size() > 0) grad = Tensor(value.shape());
    return grad;
  }
  void zero_grad() {
    if (!grad.empty()) grad.zero();
  }
  real item() const { return value.item(); }
};

inline Var make_constant(Tensor v) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  n->requires_grad = false;
  n->op = "const";
  return n;
}

inline Var make_leaf(Tensor v) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  n->requires_grad = true;
  n->op = "leaf";
  return n;
}

inline Var make_node(Tensor value, std::vector<Var> inputs,
                     std::function<void(Node&)> backward_fn, const char* op = "") {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->inputs = std::move(inputs);
  n->backward_fn = std::move(backward_fn);
  n->op = op;
  for (const auto& in : n->inputs)
    if (in && in->requires_grad) n->requires_grad = true;
  return n;
}

// Adds g into the gradient buffer of `in`, skipping non-differentiable inputs.
inline void accumulate(const Var& in, const Tensor& g) {
  if (!in || !in->requires_grad) return;
  Tensor& dst = in->ensure_grad();
  VecMap(dst.data(), dst.size()) += ConstVecMap(g.data(), g.size());
}

// Runs the tape backward from a scalar root. Seeds d(root)/d(root) = 1.
inline void backward(const Var& root) {
  if (!root) throw std::invalid_argument("backward: null root");
  if (root->value.size() != 1) throw std::invalid_argument("backward: root must be scalar");
  if (!root->requires_grad) return;

  // Iterative post-order topological sort over the requires_grad subgraph.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->inputs.size()) {
      Node* child = node->inputs[idx++].get();
      if (child && child->requires_grad && !visited.count(child)) {
        visited.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad.fill(real(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

// ---------------------------------------------------------------------------
// Generic arithmetic ops
// ---------------------------------------------------------------------------

inline Var add(const Var& a, const Var& b) {
  if (!a->value.same_shape(b->value)) throw std::invalid_argument("add: shape mismatch");
  Tensor out = a->value;
  out.vec() += b->value.vec();
  return make_node(std::move(out), {a, b},
                   [](Node& n) {
                     accumulate(n.inputs[0], n.grad);
                     accumulate(n.inputs[1], n.grad);
                   },
                   "add");
}

inline Var scale(const Var& a, real c) {
  Tensor out = a->value;
  out.vec() *= c;
  return make_node(std::move(out), {a},
                   [c](Node& n) {
                     Tensor g = n.grad;
                     g.vec() *= c;
                     accumulate(n.inputs[0], g);
                   },
                   "scale");
}

// c0*v0 + c1*v1 + ...  over scalar vars. Terms may be null (skipped).
inline Var weighted_sum(const std::vector<Var>& terms, const std::vector<real>& coeffs) {
  if (terms.size() != coeffs.size()) throw std::invalid_argument("weighted_sum: arity mismatch");
  real total = 0;
  std::vector<Var> ins;
  std::vector<real> cs;
  for (size_t i = 0; i < terms.size(); ++i) {
    if (!terms[i]) continue;
    total += coeffs[i] * terms[i]->value.item();
    ins.push_back(terms[i]);
    cs.push_back(coeffs[i]);
  }
  return make_node(Tensor::scalar(total), std::move(ins),
                   [cs](Node& n) {
                     for (size_t i = 0; i < n.inputs.size(); ++i) {
                       Tensor g = n.grad;
                       g.vec() *= cs[i];
                       accumulate(n.inputs[i], g);
                     }
                   },
                   "weighted_sum");
}

// Joins rank-2 vars along rows. Used to assemble the multi-modality batch.
inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
  int cols = parts[0]->value.dim(1);
  int rows = 0;
  for (const auto& p : parts) {
    if (p->value.rank() != 2 || p->value.dim(1) != cols)
      throw std::invalid_argument("concat_rows: incompatible shapes");
    rows += p->value.dim(0);
  }
  Tensor out({rows, cols});
  int r = 0;
  for (const auto& p : parts) {
    out.mat().middleRows(r, p->value.dim(0)) = p->value.mat();
    r += p->value.dim(0);
  }
  return make_node(std::move(out), parts,
                   [cols](Node& n) {
                     int r = 0;
                     for (auto& in : n.inputs) {
                       int nr = in->value.dim(0);
                       if (in->requires_grad) {
                         Tensor g({nr, cols});
                         g.mat() = n.grad.mat(n.value.dim(0), cols).middleRows(r, nr);
                         accumulate(in, g);
                       }
                       r += nr;
                     }
                   },
                   "concat_rows");
}

// Concatenates along dim 0; trailing dims must match. Works for any rank.
inline Var concat_dim0(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_dim0: empty");
  std::vector<int> tail(parts[0]->value.shape().begin() + 1, parts[0]->value.shape().end());
  long long stride = 1;
  for (int d : tail) stride *= d;
  int rows = 0;
  for (const auto& p : parts) {
    std::vector<int> t(p->value.shape().begin() + 1, p->value.shape().end());
    if (t != tail) throw std::invalid_argument("concat_dim0: trailing shape mismatch");
    rows += p->value.dim(0);
  }
  std::vector<int> out_shape = {rows};
  out_shape.insert(out_shape.end(), tail.begin(), tail.end());
  Tensor out(out_shape);
  long long off = 0;
  for (const auto& p : parts) {
    std::copy(p->value.data(), p->value.data() + p->value.size(), out.data() + off);
    off += p->value.size();
  }
  return make_node(std::move(out), parts,
                   [stride](Node& n) {
                     long long off = 0;
                     for (auto& in : n.inputs) {
                       const long long cnt = in->value.size();
                       if (in->requires_grad) {
                         Tensor& g = in->ensure_grad();
                         for (long long i = 0; i < cnt; ++i) g[i] += n.grad[off + i];
                       }
                       off += cnt;
                       (void)stride;
                     }
                   },
                   "concat_dim0");
}

// out row i = x row perm[i]; perm must be a permutation of the rows.
inline Var permute_rows(const Var& x, const std::vector<int>& perm) {
  if (x->value.rank() != 2) throw std::invalid_argument("permute_rows: rank-2 input required");
  const int n = x->value.dim(0), d = x->value.dim(1);
  if (static_cast<int>(perm.size()) != n)
    throw std::invalid_argument("permute_rows: permutation size mismatch");
  Tensor out({n, d});
  for (int i = 0; i < n; ++i) out.mat().row(i) = x->value.mat().row(perm[i]);
  return make_node(std::move(out), {x},
                   [perm, n, d](Node& node) {
                     const Var& in = node.inputs[0];
                     if (!in->requires_grad) return;
                     Tensor& g = in->ensure_grad();
                     for (int i = 0; i < n; ++i)
                       g.mat().row(perm[i]) += node.grad.mat(n, d).row(i);
                   },
                   "permute_rows");
}

inline Var slice_rows(const Var& x, int begin, int count) {
  if (x->value.rank() != 2) throw std::invalid_argument("slice_rows: rank-2 input required");
  int cols = x->value.dim(1);
  if (begin < 0 || begin + count > x->value.dim(0))
    throw std::out_of_range("slice_rows: range out of bounds");
  Tensor out({count, cols});
  out.mat() = x->value.mat().middleRows(begin, count);
  return make_node(std::move(out), {x},
                   [begin, count, cols](Node& n) {
                     const Var& in = n.inputs[0];
                     if (!in->requires_grad) return;
                     Tensor& g = in->ensure_grad();
                     g.mat().middleRows(begin, count) += n.grad.mat(count, cols);
                   },
                   "slice_rows");
}

}  // namespace pmx
