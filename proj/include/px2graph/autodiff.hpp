// Copyright 2026 The px2graph Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Reverse-mode automatic differentiation over dense tensors. A Tape records
// every executed operation; backward() replays the chain rule in reverse
// execution order. Dense kernels (matmul, im2col convolution) are evaluated
// through Eigen maps over the raw buffers. A Tape is confined to a single
// training step on a single thread.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "px2graph/common.hpp"
#include "px2graph/tensor.hpp"

namespace px2graph::ad {

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// C = (or +=) op(A) * op(B), row-major buffers.
/// A is M x K after optional transpose, B is K x N after optional transpose.
template <typename T>
void gemm(bool ta, bool tb, int m, int n, int k, const T* a, const T* b, T* c, bool accumulate) {
  Eigen::Map<const RowMat<T>> A(a, ta ? k : m, ta ? m : k);
  Eigen::Map<const RowMat<T>> B(b, tb ? n : k, tb ? k : n);
  Eigen::Map<RowMat<T>> C(c, m, n);
  if (!ta && !tb) {
    if (accumulate) C.noalias() += A * B; else C.noalias() = A * B;
  } else if (ta && !tb) {
    if (accumulate) C.noalias() += A.transpose() * B; else C.noalias() = A.transpose() * B;
  } else if (!ta && tb) {
    if (accumulate) C.noalias() += A * B.transpose(); else C.noalias() = A * B.transpose();
  } else {
    if (accumulate) C.noalias() += A.transpose() * B.transpose();
    else C.noalias() = A.transpose() * B.transpose();
  }
}

}  // namespace detail

/// Named trainable tensor with an accumulated gradient of identical shape.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> gradient;

  Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)) {
    value.requires_grad = true;
    gradient = Tensor<T>::zeros(value.shape);
  }
};

/// Insertion-ordered parameter set with unique names.
template <typename T>
class ParamStore {
 public:
  Parameter<T>& add(const std::string& name, Tensor<T> value) {
    if (index_.count(name)) fail("ParamStore: duplicate parameter name '" + name + "'");
    index_[name] = items_.size();
    items_.push_back(std::make_unique<Parameter<T>>(name, std::move(value)));
    return *items_.back();
  }

  Parameter<T>& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) fail("ParamStore: no parameter named '" + name + "'");
    return *items_[it->second];
  }
  const Parameter<T>& get(const std::string& name) const {
    return const_cast<ParamStore*>(this)->get(name);
  }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  size_t size() const { return items_.size(); }
  Parameter<T>& at(size_t i) { return *items_[i]; }
  const Parameter<T>& at(size_t i) const { return *items_[i]; }

  size_t total_values() const {
    size_t n = 0;
    for (const auto& p : items_) n += p->value.numel();
    return n;
  }

  void zero_gradients() {
    for (auto& p : items_) std::fill(p->gradient.data->begin(), p->gradient.data->end(), T(0));
  }

 private:
  std::vector<std::unique_ptr<Parameter<T>>> items_;
  std::unordered_map<std::string, size_t> index_;
};

template <typename T>
class Tape;

/// Handle to a value recorded on a Tape.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  int id = -1;
  bool valid() const { return tape != nullptr && id >= 0; }
};

template <typename T>
class Tape {
 public:
  Var<T> leaf(Tensor<T> v) {
    const bool rg = v.requires_grad;
    return Var<T>{this, push(std::move(v), {}, nullptr, rg)};
  }

  Var<T> constant(Tensor<T> v) {
    v.requires_grad = false;
    return Var<T>{this, push(std::move(v), {}, nullptr, false)};
  }

  /// Leaf bound to a Parameter: backward() accumulates into p.gradient.
  Var<T> param(Parameter<T>& p) {
    Var<T> v{this, push(p.value, {}, nullptr, true)};
    bindings_.push_back({&p, v.id});
    return v;
  }

  const Tensor<T>& val(Var<T> v) const { return nodes_[v.id].value; }

  /// Gradient of the last backward() pass; zeros if the node was not reached.
  Tensor<T> grad(Var<T> v) const {
    const Node& n = nodes_[v.id];
    return n.grad.data ? n.grad : Tensor<T>::zeros(n.value.shape);
  }

  /// Reverse pass from a scalar loss. Each recorded operation is visited
  /// exactly once, in reverse execution order. Bound parameters accumulate
  /// into their gradient fields; repeated calls keep accumulating.
  void backward(Var<T> loss) {
    if (!loss.valid() || loss.tape != this) fail("backward: loss is not on this tape");
    if (nodes_[loss.id].value.numel() != 1) {
      fail("backward: loss must be scalar, got shape " + shape_str(nodes_[loss.id].value.shape));
    }
    for (auto& n : nodes_) n.grad = Tensor<T>();
    grad_buf(loss.id)[0] = T(1);
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[id];
      if (!n.needs_grad || !n.grad.data || !n.backward) continue;
      n.backward(*this, n.grad);
    }
    for (const auto& [p, id] : bindings_) {
      const Node& n = nodes_[id];
      if (!n.grad.data) continue;
      for (size_t i = 0; i < n.grad.numel(); ++i) p->gradient[i] += n.grad[i];
    }
  }

  size_t size() const { return nodes_.size(); }

  void clear() {
    nodes_.clear();
    bindings_.clear();
  }

  // -- internals shared with the op definitions --

  using BackFn = std::function<void(Tape&, const Tensor<T>&)>;

  int push(Tensor<T> value, std::vector<int> inputs, BackFn backward, bool needs_grad) {
    nodes_.push_back(Node{std::move(value), std::move(inputs), std::move(backward),
                          Tensor<T>(), needs_grad});
    return static_cast<int>(nodes_.size()) - 1;
  }

  bool needs(int id) const { return nodes_[id].needs_grad; }

  Tensor<T>& grad_buf(int id) {
    Node& n = nodes_[id];
    if (!n.grad.data) n.grad = Tensor<T>::zeros(n.value.shape);
    return n.grad;
  }

  bool any_needs(std::initializer_list<int> ids) const {
    for (int id : ids) {
      if (nodes_[id].needs_grad) return true;
    }
    return false;
  }

 private:
  struct Node {
    Tensor<T> value;
    std::vector<int> inputs;
    BackFn backward;
    Tensor<T> grad;
    bool needs_grad = false;
  };

  std::vector<Node> nodes_;
  std::vector<std::pair<Parameter<T>*, int>> bindings_;
};

namespace detail {

template <typename T>
Tape<T>& tape_of(Var<T> a) {
  if (!a.valid()) fail("op: invalid Var");
  return *a.tape;
}

template <typename T>
void check_same_tape(Var<T> a, Var<T> b) {
  if (a.tape != b.tape) fail("op: operands live on different tapes");
}

template <typename T>
void check_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) {
    fail(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and scalar ops
// ---------------------------------------------------------------------------

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  auto& t = detail::tape_of(a);
  detail::check_same_tape(a, b);
  const auto &va = t.val(a), &vb = t.val(b);
  detail::check_same_shape("add", va, vb);
  Tensor<T> out = Tensor<T>::zeros(va.shape);
  for (size_t i = 0; i < out.numel(); ++i) out[i] = va[i] + vb[i];
  const bool ng = t.any_needs({a.id, b.id});
  int id = t.push(std::move(out), {a.id, b.id},
                  [ai = a.id, bi = b.id](Tape<T>& tp, const Tensor<T>& g) {
                    for (int in : {ai, bi}) {
                      if (!tp.needs(in)) continue;
                      auto& gb = tp.grad_buf(in);
                      for (size_t i = 0; i < g.numel(); ++i) gb[i] += g[i];
                    }
                  },
                  ng);
  return Var<T>{&t, id};
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  auto& t = detail::tape_of(a);
  detail::check_same_tape(a, b);
  const auto &va = t.val(a), &vb = t.val(b);
  detail::check_same_shape("sub", va, vb);
  Tensor<T> out = Tensor<T>::zeros(va.shape);
  for (size_t i = 0; i < out.numel(); ++i) out[i] = va[i] - vb[i];
  const bool ng = t.any_needs({a.id, b.id});
  int id = t.push(std::move(out), {a.id, b.id},
                  [ai = a.id, bi = b.id](Tape<T>& tp, const Tensor<T>& g) {
                    if (tp.needs(ai)) {
                      auto& ga = tp.grad_buf(ai);
                      for (size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
                    }
                    if (tp.needs(bi)) {
                      auto& gb = tp.grad_buf(bi);
                      for (size_t i = 0; i < g.numel(); ++i) gb[i] -= g[i];
                    }
                  },
                  ng);
  return Var<T>{&t, id};
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  auto& t = detail::tape_of(a);
  detail::check_same_tape(a, b);
  const auto &va = t.val(a), &vb = t.val(b);
  detail::check_same_shape("mul", va, vb);
  Tensor<T> out = Tensor<T>::zeros(va.shape);
  for (size_t i = 0; i < out.numel(); ++i) out[i] = va[i] * vb[i];
  const bool ng = t.any_needs({a.id, b.id});
  int id = t.push(std::move(out), {a.id, b.id},
                  [ai = a.id, bi = b.id, va, vb](Tape<T>& tp, const Tensor<T>& g) {
                    if (tp.needs(ai)) {
                      auto& ga = tp.grad_buf(ai);
                      for (size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * vb[i];
                    }
                    if (tp.needs(bi)) {
                      auto& gb = tp.grad_buf(bi);
                      for (size_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * va[i];
                    }
                  },
                  ng);
  return Var<T>{&t, id};
}

template <typename T>
Var<T> mul_scalar(Var<T> a, double c) {
  auto& t = detail::tape_of(a);
  const auto& va = t.val(a);
  Tensor<T> out = Tensor<T>::zeros(va.shape);
  for (size_t i = 0; i < out.numel(); ++i) out[i] = va[i] * static_cast<T>(c);
  int id = t.push(std::move(out), {a.id},
                  [ai = a.id, c](Tape<T>& tp, const Tensor<T>& g) {
                    if (!tp.needs(ai)) return;
                    auto& ga = tp.grad_buf(ai);
                    for (size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * static_cast<T>(c);
                  },
                  t.needs(a.id));
  return Var<T>{&t, id};
}

template <typename T>
Var<T> add_scalar(Var<T> a, double c) {
  auto& t = detail::tape_of(a);
  const auto& va = t.val(a);
  Tensor<T> out = Tensor<T>::zeros(va.shape);
  for (size_t i = 0; i < out.numel(); ++i) out[i] = va[i] + static_cast<T>(c);
  int id = t.push(std::move(out), {a.id},
                  [ai = a.id](Tape<T>& tp, const Tensor<T>& g) {
                    if (!tp.needs(ai)) return;
                    auto& ga = tp.grad_buf(ai);
                    for (size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
                  },
                  t.needs(a.id));
  return Var<T>{&t, id};
}

template <typename T>
Var<T> relu(Var<T> a) {
  auto& t = detail::tape_of(a);
  const auto& va = t.val(a);
  Tensor<T> out = Tensor<T>::zeros(va.shape);
  for (size_t i = 0; i < out.numel(); ++i) out[i] = va[i] > T(0) ? va[i] : T(0);
  int id = t.push(std::move(out), {a.id},
                  [ai = a.id, va](Tape<T>& tp, const Tensor<T>& g) {
                    if (!tp.needs(ai)) return;
                    auto& ga = tp.grad_buf(ai);
                    for (size_t i = 0; i < g.numel(); ++i) {
                      if (va[i] > T(0)) ga[i] += g[i];
                    }
                  },
                  t.needs(a.id));
  return Var<T>{&t, id};
}

template <typename T>
Var<T> sigmoid(Var<T> a) {
  auto& t = detail::tape_of(a);
  const auto& va = t.val(a);
  Tensor<T> out = Tensor<T>::zeros(va.shape);
  for (size_t i = 0; i < out.numel(); ++i) {
    const T x = va[i];
    out[i] = x >= T(0) ? T(1) / (T(1) + std::exp(-x))
                       : std::exp(x) / (T(1) + std::exp(x));
  }
  Tensor<T> y = out;
  int id = t.push(std::move(out), {a.id},
                  [ai = a.id, y](Tape<T>& tp, const Tensor<T>& g) {
                    if (!tp.needs(ai)) return;
                    auto& ga = tp.grad_buf(ai);
                    for (size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * y[i] * (T(1) - y[i]);
                  },
                  t.needs(a.id));
  return Var<T>{&t, id};
}

template <typename T>
Var<T> log_op(Var<T> a) {
  auto& t = detail::tape_of(a);
  const auto& va = t.val(a);
  Tensor<T> out = Tensor<T>::zeros(va.shape);
  for (size_t i = 0; i < out.numel(); ++i) {
    if (!(va[i] > T(0))) fail("log: non-positive input");
    out[i] = std::log(va[i]);
  }
  int id = t.push(std::move(out), {a.id},
                  [ai = a.id, va](Tape<T>& tp, const Tensor<T>& g) {
                    if (!tp.needs(ai)) return;
                    auto& ga = tp.grad_buf(ai);
                    for (size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] / va[i];
                  },
                  t.needs(a.id));
  return Var<T>{&t, id};
}

/// Elementwise square root. The subgradient at 0 is defined as 0 so that
/// hinge terms on Euclidean distances stay finite at coincident points.
template <typename T>
Var<T> sqrt_op(Var<T> a) {
  auto& t = detail::tape_of(a);
  const auto& va = t.val(a);
  Tensor<T> out = Tensor<T>::zeros(va.shape);
  for (size_t i = 0; i < out.numel(); ++i) {
    if (va[i] < T(0)) fail("sqrt: negative input");
    out[i] = std::sqrt(va[i]);
  }
  Tensor<T> y = out;
  int id = t.push(std::move(out), {a.id},
                  [ai = a.id, y](Tape<T>& tp, const Tensor<T>& g) {
                    if (!tp.needs(ai)) return;
                    auto& ga = tp.grad_buf(ai);
                    for (size_t i = 0; i < g.numel(); ++i) {
                      if (y[i] > T(0)) ga[i] += g[i] * T(0.5) / y[i];
                    }
                  },
                  t.needs(a.id));
  return Var<T>{&t, id};
}

/// Smooth-L1: 0.5 x^2 for |x| < 1, |x| - 0.5 otherwise.
template <typename T>
Var<T> smooth_l1(Var<T> a) {
  auto& t = detail::tape_of(a);
  const auto& va = t.val(a);
  Tensor<T> out = Tensor<T>::zeros(va.shape);
  for (size_t i = 0; i < out.numel(); ++i) {
    const T x = std::abs(va[i]);
    out[i] = x < T(1) ? T(0.5) * x * x : x - T(0.5);
  }
  int id = t.push(std::move(out), {a.id},
                  [ai = a.id, va](Tape<T>& tp, const Tensor<T>& g) {
                    if (!tp.needs(ai)) return;
                    auto& ga = tp.grad_buf(ai);
                    for (size_t i = 0; i < g.numel(); ++i) {
                      ga[i] += g[i] * std::clamp(va[i], T(-1), T(1));
                    }
                  },
                  t.needs(a.id));
  return Var<T>{&t, id};
}

/// Numerically stable binary cross-entropy on logits against constant targets:
/// max(z,0) - z*y + log(1 + exp(-|z|)). Gradient is sigmoid(z) - y.
template <typename T>
Var<T> bce_logits(Var<T> z, const Tensor<T>& targets) {
  auto& t = detail::tape_of(z);
  const auto& vz = t.val(z);
  detail::check_same_shape("bce_logits", vz, targets);
  Tensor<T> out = Tensor<T>::zeros(vz.shape);
  for (size_t i = 0; i < out.numel(); ++i) {
    const T x = vz[i], y = targets[i];
    out[i] = std::max(x, T(0)) - x * y + std::log1p(std::exp(-std::abs(x)));
  }
  int id = t.push(std::move(out), {z.id},
                  [zi = z.id, vz, targets](Tape<T>& tp, const Tensor<T>& g) {
                    if (!tp.needs(zi)) return;
                    auto& gz = tp.grad_buf(zi);
                    for (size_t i = 0; i < g.numel(); ++i) {
                      const T x = vz[i];
                      const T s = x >= T(0) ? T(1) / (T(1) + std::exp(-x))
                                            : std::exp(x) / (T(1) + std::exp(x));
                      gz[i] += g[i] * (s - targets[i]);
                    }
                  },
                  t.needs(z.id));
  return Var<T>{&t, id};
}

// ---------------------------------------------------------------------------
// Reductions and softmax
// ---------------------------------------------------------------------------

template <typename T>
Var<T> sum_all(Var<T> a) {
  auto& t = detail::tape_of(a);
  const auto& va = t.val(a);
  T s = T(0);
  for (size_t i = 0; i < va.numel(); ++i) s += va[i];
  int id = t.push(Tensor<T>::scalar(s), {a.id},
                  [ai = a.id](Tape<T>& tp, const Tensor<T>& g) {
                    if (!tp.needs(ai)) return;
                    auto& ga = tp.grad_buf(ai);
                    for (size_t i = 0; i < ga.numel(); ++i) ga[i] += g[0];
                  },
                  t.needs(a.id));
  return Var<T>{&t, id};
}

template <typename T>
Var<T> mean_all(Var<T> a) {
  auto& t = detail::tape_of(a);
  const size_t n = t.val(a).numel();
  return mul_scalar(sum_all(a), 1.0 / static_cast<double>(n));
}

/// Softmax over the last axis; rows are all leading dimensions flattened.
template <typename T>
Var<T> softmax_last(Var<T> a) {
  auto& t = detail::tape_of(a);
  const auto& va = t.val(a);
  if (va.rank() < 1) fail("softmax: rank-0 input");
  const int c = va.shape.back();
  const size_t rows = va.numel() / static_cast<size_t>(c);
  Tensor<T> out = Tensor<T>::zeros(va.shape);
  for (size_t r = 0; r < rows; ++r) {
    const T* zr = va.ptr() + r * c;
    T* yr = out.ptr() + r * c;
    T zmax = zr[0];
    for (int j = 1; j < c; ++j) zmax = std::max(zmax, zr[j]);
    T denom = T(0);
    for (int j = 0; j < c; ++j) {
      yr[j] = std::exp(zr[j] - zmax);
      denom += yr[j];
    }
    for (int j = 0; j < c; ++j) yr[j] /= denom;
  }
  Tensor<T> y = out;
  int id = t.push(std::move(out), {a.id},
                  [ai = a.id, y, c, rows](Tape<T>& tp, const Tensor<T>& g) {
                    if (!tp.needs(ai)) return;
                    auto& ga = tp.grad_buf(ai);
                    for (size_t r = 0; r < rows; ++r) {
                      const T* yr = y.ptr() + r * c;
                      const T* gr = g.ptr() + r * c;
                      T dot = T(0);
                      for (int j = 0; j < c; ++j) dot += gr[j] * yr[j];
                      T* gar = ga.ptr() + r * c;
                      for (int j = 0; j < c; ++j) gar[j] += (gr[j] - dot) * yr[j];
                    }
                  },
                  t.needs(a.id));
  return Var<T>{&t, id};
}

/// Per-row softmax cross-entropy against integer labels: [N,C] -> [N].
template <typename T>
Var<T> cross_entropy_rows(Var<T> logits, const std::vector<int>& labels) {
  auto& t = detail::tape_of(logits);
  const auto& vz = t.val(logits);
  if (vz.rank() != 2) fail("cross_entropy_rows: expected [N,C], got " + shape_str(vz.shape));
  const int n = vz.dim(0), c = vz.dim(1);
  if (static_cast<int>(labels.size()) != n) fail("cross_entropy_rows: label count mismatch");
  Tensor<T> probs = Tensor<T>::zeros(vz.shape);
  Tensor<T> out = Tensor<T>::zeros({n});
  for (int r = 0; r < n; ++r) {
    if (labels[r] < 0 || labels[r] >= c) fail("cross_entropy_rows: label out of range");
    const T* zr = vz.ptr() + static_cast<size_t>(r) * c;
    T* pr = probs.ptr() + static_cast<size_t>(r) * c;
    T zmax = zr[0];
    for (int j = 1; j < c; ++j) zmax = std::max(zmax, zr[j]);
    T denom = T(0);
    for (int j = 0; j < c; ++j) {
      pr[j] = std::exp(zr[j] - zmax);
      denom += pr[j];
    }
    for (int j = 0; j < c; ++j) pr[j] /= denom;
    out[r] = std::log(denom) + zmax - zr[labels[r]];
  }
  int id = t.push(std::move(out), {logits.id},
                  [zi = logits.id, probs, labels, n, c](Tape<T>& tp, const Tensor<T>& g) {
                    if (!tp.needs(zi)) return;
                    auto& gz = tp.grad_buf(zi);
                    for (int r = 0; r < n; ++r) {
                      const T* pr = probs.ptr() + static_cast<size_t>(r) * c;
                      T* gr = gz.ptr() + static_cast<size_t>(r) * c;
                      for (int j = 0; j < c; ++j) gr[j] += g[r] * pr[j];
                      gr[labels[r]] -= g[r];
                    }
                  },
                  t.needs(logits.id));
  return Var<T>{&t, id};
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <typename T>
Var<T> reshape(Var<T> a, std::vector<int> new_shape) {
  auto& t = detail::tape_of(a);
  Tensor<T> out = t.val(a).clone().reshaped(std::move(new_shape));
  int id = t.push(std::move(out), {a.id},
                  [ai = a.id](Tape<T>& tp, const Tensor<T>& g) {
                    if (!tp.needs(ai)) return;
                    auto& ga = tp.grad_buf(ai);
                    for (size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
                  },
                  t.needs(a.id));
  return Var<T>{&t, id};
}

/// Concatenate over the last axis; all leading dimensions must agree.
template <typename T>
Var<T> concat_last(const std::vector<Var<T>>& parts) {
  if (parts.empty()) fail("concat: no inputs");
  auto& t = detail::tape_of(parts[0]);
  std::vector<int> lead = t.val(parts[0]).shape;
  lead.pop_back();
  int total = 0;
  std::vector<int> widths;
  std::vector<int> input_ids;
  for (const auto& p : parts) {
    detail::check_same_tape(parts[0], p);
    const auto& v = t.val(p);
    std::vector<int> l = v.shape;
    const int w = l.back();
    l.pop_back();
    if (l != lead) fail("concat: leading dims differ: " + shape_str(v.shape));
    widths.push_back(w);
    total += w;
    input_ids.push_back(p.id);
  }
  size_t rows = 1;
  for (int d : lead) rows *= static_cast<size_t>(d);
  std::vector<int> out_shape = lead;
  out_shape.push_back(total);
  Tensor<T> out = Tensor<T>::zeros(out_shape);
  int off = 0;
  for (size_t k = 0; k < parts.size(); ++k) {
    const auto& v = t.val(parts[k]);
    for (size_t r = 0; r < rows; ++r) {
      std::copy_n(v.ptr() + r * widths[k], widths[k], out.ptr() + r * total + off);
    }
    off += widths[k];
  }
  bool ng = false;
  for (int id : input_ids) ng = ng || t.needs(id);
  int id = t.push(std::move(out), input_ids,
                  [input_ids, widths, rows, total](Tape<T>& tp, const Tensor<T>& g) {
                    int off2 = 0;
                    for (size_t k = 0; k < input_ids.size(); ++k) {
                      if (tp.needs(input_ids[k])) {
                        auto& gi = tp.grad_buf(input_ids[k]);
                        for (size_t r = 0; r < rows; ++r) {
                          const T* src = g.ptr() + r * total + off2;
                          T* dst = gi.ptr() + r * widths[k];
                          for (int j = 0; j < widths[k]; ++j) dst[j] += src[j];
                        }
                      }
                      off2 += widths[k];
                    }
                  },
                  ng);
  return Var<T>{&t, id};
}

/// Extract the length-C feature vector at pixel (x, y) of an [H,W,C] tensor.
template <typename T>
Var<T> gather_pixel(Var<T> a, int x, int y) {
  auto& t = detail::tape_of(a);
  const auto& va = t.val(a);
  if (va.rank() != 3) fail("gather_pixel: expected [H,W,C], got " + shape_str(va.shape));
  const int h = va.dim(0), w = va.dim(1), c = va.dim(2);
  if (x < 0 || x >= w || y < 0 || y >= h) {
    fail("gather_pixel: (" + std::to_string(x) + "," + std::to_string(y) + ") outside " +
         shape_str(va.shape));
  }
  const size_t base = (static_cast<size_t>(y) * w + x) * c;
  Tensor<T> out = Tensor<T>::zeros({c});
  std::copy_n(va.ptr() + base, c, out.ptr());
  int id = t.push(std::move(out), {a.id},
                  [ai = a.id, base, c](Tape<T>& tp, const Tensor<T>& g) {
                    if (!tp.needs(ai)) return;
                    auto& ga = tp.grad_buf(ai);
                    for (int j = 0; j < c; ++j) ga[base + j] += g[j];
                  },
                  t.needs(a.id));
  return Var<T>{&t, id};
}

/// Gather feature vectors at several pixels into an [n, C] matrix.
template <typename T>
Var<T> gather_pixels(Var<T> a, const std::vector<Pixel>& pix) {
  auto& t = detail::tape_of(a);
  const auto& va = t.val(a);
  if (va.rank() != 3) fail("gather_pixels: expected [H,W,C], got " + shape_str(va.shape));
  const int h = va.dim(0), w = va.dim(1), c = va.dim(2);
  const int n = static_cast<int>(pix.size());
  std::vector<size_t> bases(pix.size());
  for (size_t k = 0; k < pix.size(); ++k) {
    const auto [x, y] = pix[k];
    if (x < 0 || x >= w || y < 0 || y >= h) fail("gather_pixels: pixel outside map");
    bases[k] = (static_cast<size_t>(y) * w + x) * c;
  }
  Tensor<T> out = Tensor<T>::zeros({n, c});
  for (size_t k = 0; k < bases.size(); ++k) std::copy_n(va.ptr() + bases[k], c, out.ptr() + k * c);
  int id = t.push(std::move(out), {a.id},
                  [ai = a.id, bases, c](Tape<T>& tp, const Tensor<T>& g) {
                    if (!tp.needs(ai)) return;
                    auto& ga = tp.grad_buf(ai);
                    for (size_t k = 0; k < bases.size(); ++k) {
                      for (int j = 0; j < c; ++j) ga[bases[k] + j] += g[k * c + j];
                    }
                  },
                  t.needs(a.id));
  return Var<T>{&t, id};
}

/// Row i of an [N,C] matrix as a [C] vector.
template <typename T>
Var<T> select_row(Var<T> a, int row) {
  auto& t = detail::tape_of(a);
  const auto& va = t.val(a);
  if (va.rank() != 2) fail("select_row: expected [N,C], got " + shape_str(va.shape));
  const int n = va.dim(0), c = va.dim(1);
  if (row < 0 || row >= n) fail("select_row: row out of range");
  Tensor<T> out = Tensor<T>::zeros({c});
  std::copy_n(va.ptr() + static_cast<size_t>(row) * c, c, out.ptr());
  int id = t.push(std::move(out), {a.id},
                  [ai = a.id, row, c](Tape<T>& tp, const Tensor<T>& g) {
                    if (!tp.needs(ai)) return;
                    auto& ga = tp.grad_buf(ai);
                    for (int j = 0; j < c; ++j) ga[static_cast<size_t>(row) * c + j] += g[j];
                  },
                  t.needs(a.id));
  return Var<T>{&t, id};
}

// ---------------------------------------------------------------------------
// Dense linear algebra
// ---------------------------------------------------------------------------

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  auto& t = detail::tape_of(a);
  detail::check_same_tape(a, b);
  const auto &va = t.val(a), &vb = t.val(b);
  if (va.rank() != 2 || vb.rank() != 2 || va.dim(1) != vb.dim(0)) {
    fail("matmul: incompatible shapes " + shape_str(va.shape) + " x " + shape_str(vb.shape));
  }
  const int m = va.dim(0), k = va.dim(1), n = vb.dim(1);
  Tensor<T> out = Tensor<T>::zeros({m, n});
  detail::gemm<T>(false, false, m, n, k, va.ptr(), vb.ptr(), out.ptr(), false);
  const bool ng = t.any_needs({a.id, b.id});
  int id = t.push(std::move(out), {a.id, b.id},
                  [ai = a.id, bi = b.id, va, vb, m, n, k](Tape<T>& tp, const Tensor<T>& g) {
                    if (tp.needs(ai)) {
                      detail::gemm<T>(false, true, m, k, n, g.ptr(), vb.ptr(),
                                      tp.grad_buf(ai).ptr(), true);
                    }
                    if (tp.needs(bi)) {
                      detail::gemm<T>(true, false, k, n, m, va.ptr(), g.ptr(),
                                      tp.grad_buf(bi).ptr(), true);
                    }
                  },
                  ng);
  return Var<T>{&t, id};
}

/// x [N,K] * W [K,M] + b [M] broadcast over rows.
template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
  auto& t = detail::tape_of(x);
  detail::check_same_tape(x, w);
  detail::check_same_tape(x, b);
  const auto &vx = t.val(x), &vw = t.val(w), &vb = t.val(b);
  if (vx.rank() != 2 || vw.rank() != 2 || vx.dim(1) != vw.dim(0) || vb.rank() != 1 ||
      vb.dim(0) != vw.dim(1)) {
    fail("linear: incompatible shapes x" + shape_str(vx.shape) + " W" + shape_str(vw.shape) +
         " b" + shape_str(vb.shape));
  }
  const int n = vx.dim(0), k = vx.dim(1), m = vw.dim(1);
  Tensor<T> out = Tensor<T>::zeros({n, m});
  detail::gemm<T>(false, false, n, m, k, vx.ptr(), vw.ptr(), out.ptr(), false);
  for (int r = 0; r < n; ++r) {
    T* row = out.ptr() + static_cast<size_t>(r) * m;
    for (int j = 0; j < m; ++j) row[j] += vb[j];
  }
  const bool ng = t.any_needs({x.id, w.id, b.id});
  int id = t.push(std::move(out), {x.id, w.id, b.id},
                  [xi = x.id, wi = w.id, bi = b.id, vx, vw, n, k, m](Tape<T>& tp,
                                                                     const Tensor<T>& g) {
                    if (tp.needs(xi)) {
                      detail::gemm<T>(false, true, n, k, m, g.ptr(), vw.ptr(),
                                      tp.grad_buf(xi).ptr(), true);
                    }
                    if (tp.needs(wi)) {
                      detail::gemm<T>(true, false, k, m, n, vx.ptr(), g.ptr(),
                                      tp.grad_buf(wi).ptr(), true);
                    }
                    if (tp.needs(bi)) {
                      auto& gb = tp.grad_buf(bi);
                      for (int r = 0; r < n; ++r) {
                        const T* row = g.ptr() + static_cast<size_t>(r) * m;
                        for (int j = 0; j < m; ++j) gb[j] += row[j];
                      }
                    }
                  },
                  ng);
  return Var<T>{&t, id};
}

// ---------------------------------------------------------------------------
// Spatial ops ([H,W,C] layout)
// ---------------------------------------------------------------------------

/// 2-D convolution via im2col. x [H,W,Cin], w [kh,kw,Cin,Cout], b [Cout],
/// zero padding `pad`, square stride. (H + 2 pad - kh) must divide by stride.
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, int stride, int pad) {
  auto& t = detail::tape_of(x);
  detail::check_same_tape(x, w);
  detail::check_same_tape(x, b);
  const auto &vx = t.val(x), &vw = t.val(w), &vb = t.val(b);
  if (vx.rank() != 3 || vw.rank() != 4) {
    fail("conv2d: expected x[H,W,C] and w[kh,kw,Cin,Cout]");
  }
  const int h = vx.dim(0), wd = vx.dim(1), cin = vx.dim(2);
  const int kh = vw.dim(0), kw = vw.dim(1), cout = vw.dim(3);
  if (vw.dim(2) != cin) {
    fail("conv2d: input channels " + std::to_string(cin) + " do not match kernel " +
         shape_str(vw.shape));
  }
  if (vb.rank() != 1 || vb.dim(0) != cout) fail("conv2d: bias shape mismatch");
  if ((h + 2 * pad - kh) % stride != 0 || (wd + 2 * pad - kw) % stride != 0) {
    fail("conv2d: geometry not divisible by stride");
  }
  const int ho = (h + 2 * pad - kh) / stride + 1;
  const int wo = (wd + 2 * pad - kw) / stride + 1;
  const int patch = kh * kw * cin;
  const size_t rows = static_cast<size_t>(ho) * wo;

  auto cols = std::make_shared<std::vector<T>>(rows * patch, T(0));
  for (int oy = 0; oy < ho; ++oy) {
    for (int ox = 0; ox < wo; ++ox) {
      T* dst = cols->data() + (static_cast<size_t>(oy) * wo + ox) * patch;
      for (int ky = 0; ky < kh; ++ky) {
        const int iy = oy * stride - pad + ky;
        if (iy < 0 || iy >= h) continue;
        for (int kx = 0; kx < kw; ++kx) {
          const int ix = ox * stride - pad + kx;
          if (ix < 0 || ix >= wd) continue;
          std::copy_n(vx.ptr() + (static_cast<size_t>(iy) * wd + ix) * cin, cin,
                      dst + (ky * kw + kx) * cin);
        }
      }
    }
  }

  Tensor<T> out = Tensor<T>::zeros({ho, wo, cout});
  detail::gemm<T>(false, false, static_cast<int>(rows), cout, patch, cols->data(), vw.ptr(),
                  out.ptr(), false);
  for (size_t r = 0; r < rows; ++r) {
    T* row = out.ptr() + r * cout;
    for (int j = 0; j < cout; ++j) row[j] += vb[j];
  }

  const bool ng = t.any_needs({x.id, w.id, b.id});
  int id = t.push(
      std::move(out), {x.id, w.id, b.id},
      [xi = x.id, wi = w.id, bi = b.id, vw, cols, h, wd, cin, kh, kw, cout, ho, wo, stride, pad,
       patch, rows](Tape<T>& tp, const Tensor<T>& g) {
        if (tp.needs(bi)) {
          auto& gb = tp.grad_buf(bi);
          for (size_t r = 0; r < rows; ++r) {
            const T* row = g.ptr() + r * cout;
            for (int j = 0; j < cout; ++j) gb[j] += row[j];
          }
        }
        if (tp.needs(wi)) {
          detail::gemm<T>(true, false, patch, cout, static_cast<int>(rows), cols->data(), g.ptr(),
                          tp.grad_buf(wi).ptr(), true);
        }
        if (tp.needs(xi)) {
          std::vector<T> gcols(rows * patch);
          detail::gemm<T>(false, true, static_cast<int>(rows), patch, cout, g.ptr(), vw.ptr(),
                          gcols.data(), false);
          auto& gx = tp.grad_buf(xi);
          for (int oy = 0; oy < ho; ++oy) {
            for (int ox = 0; ox < wo; ++ox) {
              const T* src = gcols.data() + (static_cast<size_t>(oy) * wo + ox) * patch;
              for (int ky = 0; ky < kh; ++ky) {
                const int iy = oy * stride - pad + ky;
                if (iy < 0 || iy >= h) continue;
                for (int kx = 0; kx < kw; ++kx) {
                  const int ix = ox * stride - pad + kx;
                  if (ix < 0 || ix >= wd) continue;
                  T* dst = gx.ptr() + (static_cast<size_t>(iy) * wd + ix) * cin;
                  const T* s = src + (ky * kw + kx) * cin;
                  for (int c = 0; c < cin; ++c) dst[c] += s[c];
                }
              }
            }
          }
        }
      },
      ng);
  return Var<T>{&t, id};
}

/// 2x2 max pooling, stride 2. H and W must be even.
template <typename T>
Var<T> maxpool2(Var<T> x) {
  auto& t = detail::tape_of(x);
  const auto& vx = t.val(x);
  if (vx.rank() != 3) fail("maxpool2: expected [H,W,C]");
  const int h = vx.dim(0), w = vx.dim(1), c = vx.dim(2);
  if (h % 2 != 0 || w % 2 != 0) fail("maxpool2: odd spatial dims " + shape_str(vx.shape));
  const int ho = h / 2, wo = w / 2;
  Tensor<T> out = Tensor<T>::zeros({ho, wo, c});
  auto argmax = std::make_shared<std::vector<size_t>>(out.numel());
  for (int oy = 0; oy < ho; ++oy) {
    for (int ox = 0; ox < wo; ++ox) {
      for (int ch = 0; ch < c; ++ch) {
        T best = -std::numeric_limits<T>::infinity();
        size_t best_idx = 0;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const size_t idx =
                (static_cast<size_t>(oy * 2 + dy) * w + (ox * 2 + dx)) * c + ch;
            if (vx[idx] > best) {
              best = vx[idx];
              best_idx = idx;
            }
          }
        }
        const size_t o = (static_cast<size_t>(oy) * wo + ox) * c + ch;
        out[o] = best;
        (*argmax)[o] = best_idx;
      }
    }
  }
  int id = t.push(std::move(out), {x.id},
                  [xi = x.id, argmax](Tape<T>& tp, const Tensor<T>& g) {
                    if (!tp.needs(xi)) return;
                    auto& gx = tp.grad_buf(xi);
                    for (size_t i = 0; i < g.numel(); ++i) gx[(*argmax)[i]] += g[i];
                  },
                  t.needs(x.id));
  return Var<T>{&t, id};
}

/// Nearest-neighbor upsampling by 2.
template <typename T>
Var<T> upsample2(Var<T> x) {
  auto& t = detail::tape_of(x);
  const auto& vx = t.val(x);
  if (vx.rank() != 3) fail("upsample2: expected [H,W,C]");
  const int h = vx.dim(0), w = vx.dim(1), c = vx.dim(2);
  Tensor<T> out = Tensor<T>::zeros({h * 2, w * 2, c});
  for (int y = 0; y < h * 2; ++y) {
    for (int xx = 0; xx < w * 2; ++xx) {
      const T* src = vx.ptr() + (static_cast<size_t>(y / 2) * w + xx / 2) * c;
      std::copy_n(src, c, out.ptr() + (static_cast<size_t>(y) * 2 * w + xx) * c);
    }
  }
  int id = t.push(std::move(out), {x.id},
                  [xi = x.id, h, w, c](Tape<T>& tp, const Tensor<T>& g) {
                    if (!tp.needs(xi)) return;
                    auto& gx = tp.grad_buf(xi);
                    for (int y = 0; y < h * 2; ++y) {
                      for (int xx = 0; xx < w * 2; ++xx) {
                        const T* src = g.ptr() + (static_cast<size_t>(y) * 2 * w + xx) * c;
                        T* dst = gx.ptr() + (static_cast<size_t>(y / 2) * w + xx / 2) * c;
                        for (int ch = 0; ch < c; ++ch) dst[ch] += src[ch];
                      }
                    }
                  },
                  t.needs(x.id));
  return Var<T>{&t, id};
}

}  // namespace px2graph::ad
