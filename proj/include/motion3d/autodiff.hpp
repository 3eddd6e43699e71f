#pragma once

// Define-by-run reverse-mode differentiation. A Tape records every operation
// of one forward pass in execution order (which is a topological order);
// backward() replays it in reverse, summing gradients where a value feeds
// several consumers.

#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "motion3d/detail/gemm.hpp"
#include "motion3d/kernel_stats.hpp"
#include "motion3d/tensor.hpp"

namespace motion3d {

/// Trainable tensor owned by a model. `grad` is written by Tape::backward.
template <class T>
struct Parameter {
  Parameter() = default;
  Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { grad.fill(T(0)); }

  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
};

template <class T>
class Tape;

/// Handle to a value recorded on a Tape.
template <class T>
class Var {
 public:
  Var() = default;

  Tape<T>& tape() const { return *tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  const Tensor<T>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }

 private:
  friend class Tape<T>;
  Var(Tape<T>* tape, int id) : tape_(tape), id_(id) {}

  Tape<T>* tape_ = nullptr;
  int id_ = -1;
};

template <class T>
class Tape {
 public:
  /// Rule called during backward with the node's own id; it reads the
  /// upstream gradient via grad(self) and accumulates into grad_sink(input).
  using BackwardFn = std::function<void(Tape&, int self)>;

  explicit Tape(bool record = true) : recording_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }

  /// Value that never receives a gradient (input clips, targets).
  Var<T> constant(Tensor<T> value) { return push(std::move(value), {}, nullptr, false, nullptr); }

  /// Free leaf that receives a gradient (used when differentiating w.r.t. inputs).
  Var<T> leaf(Tensor<T> value) { return push(std::move(value), {}, nullptr, recording_, nullptr); }

  /// Binds a parameter. Binding the same parameter twice yields the same node,
  /// so a shared parameter accumulates gradient from all its consumers.
  Var<T> param(Parameter<T>& p) {
    if (auto it = params_.find(&p); it != params_.end()) return Var<T>(this, it->second);
    Var<T> v = push(p.value, {}, nullptr, recording_, &p);
    params_.emplace(&p, v.id());
    return v;
  }

  /// Appends an operation result. The node requires a gradient iff the tape
  /// is recording and at least one input does.
  Var<T> record(Tensor<T> value, std::vector<int> inputs, BackwardFn fn) {
    bool needs = false;
    if (recording_) {
      for (int i : inputs) needs = needs || nodes_[static_cast<std::size_t>(i)].requires_grad;
    }
    if (!needs) return push(std::move(value), {}, nullptr, false, nullptr);
    return push(std::move(value), std::move(inputs), std::move(fn), true, nullptr);
  }

  const Tensor<T>& value(int id) const { return node(id).value; }
  bool requires_grad(int id) const { return node(id).requires_grad; }

  /// Gradient of the final loss w.r.t. node `id`; zeros if nothing flowed into it.
  const Tensor<T>& grad(int id) {
    Node& n = node(id);
    if (!n.grad) n.grad.emplace(n.value.shape());
    return *n.grad;
  }
  const Tensor<T>& grad(const Var<T>& v) { return grad(v.id()); }

  /// Accumulation buffer for an input gradient, or nullptr when the node
  /// does not require one (the caller skips that computation).
  Tensor<T>* grad_sink(int id) {
    Node& n = node(id);
    if (!n.requires_grad) return nullptr;
    if (!n.grad) n.grad.emplace(n.value.shape());
    return &*n.grad;
  }

  /// Populates gradients of every node reachable backward from `loss`, with
  /// seed d(loss)/d(loss) = seed. Bound parameters receive their gradient in
  /// Parameter::grad (overwritten; unreachable parameters get zeros).
  void backward(const Var<T>& loss, T seed = T(1)) {
    if (!recording_) throw ContractError("backward on a non-recording tape");
    if (loss.value().numel() != 1) {
      throw ContractError("backward requires a scalar loss, got shape " + loss.shape().str());
    }
    for (auto& n : nodes_) n.grad.reset();
    Node& root = node(loss.id());
    root.grad.emplace(root.value.shape(), seed);
    for (int i = loss.id(); i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.grad && n.backward) n.backward(*this, i);
    }
    for (auto& [p, id] : params_) {
      Node& n = node(id);
      if (n.grad) {
        p->grad = *n.grad;
      } else {
        p->grad = Tensor<T>(p->value.shape());
      }
    }
  }

 private:
  struct Node {
    Tensor<T> value;
    std::optional<Tensor<T>> grad;
    std::vector<int> inputs;
    BackwardFn backward;
    Parameter<T>* param = nullptr;
    bool requires_grad = false;
  };

  Node& node(int id) { return nodes_.at(static_cast<std::size_t>(id)); }
  const Node& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }

  Var<T> push(Tensor<T> value, std::vector<int> inputs, BackwardFn fn, bool needs, Parameter<T>* p) {
    nodes_.push_back(Node{std::move(value), std::nullopt, std::move(inputs), std::move(fn), p, needs});
    return Var<T>(this, static_cast<int>(nodes_.size() - 1));
  }

  // deque keeps references to earlier nodes valid while new ones are pushed
  std::deque<Node> nodes_;
  std::unordered_map<Parameter<T>*, int> params_;
  bool recording_;
};

// ---------------------------------------------------------------------------
// Elementwise and linear-algebra primitives.

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  if (!(a.shape() == b.shape())) {
    throw ShapeError("add: " + a.shape().str() + " vs " + b.shape().str());
  }
  Tensor<T> out = a.value();
  const Tensor<T>& bv = b.value();
  for (Index i = 0; i < out.numel(); ++i) out[i] += bv[i];
  const int ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {ia, ib}, [ia, ib](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad(self);
    for (int in : {ia, ib}) {
      if (Tensor<T>* s = t.grad_sink(in)) {
        for (Index i = 0; i < g.numel(); ++i) (*s)[i] += g[i];
      }
    }
  });
}

/// a + c elementwise.
template <class T>
Var<T> shift(const Var<T>& a, T c) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v += c;
  const int ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad(self);
    if (Tensor<T>* s = t.grad_sink(ia)) {
      for (Index i = 0; i < g.numel(); ++i) (*s)[i] += g[i];
    }
  });
}

template <class T>
Var<T> scale(const Var<T>& a, T alpha) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v *= alpha;
  const int ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia, alpha](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad(self);
    if (Tensor<T>* s = t.grad_sink(ia)) {
      for (Index i = 0; i < g.numel(); ++i) (*s)[i] += alpha * g[i];
    }
  });
}

template <class T>
Var<T> sum(const Var<T>& a) {
  T acc = 0;
  for (T v : a.value().data()) acc += v;
  const int ia = a.id();
  return a.tape().record(Tensor<T>(Shape{}, acc), {ia}, [ia](Tape<T>& t, int self) {
    const T g = t.grad(self)[0];
    if (Tensor<T>* s = t.grad_sink(ia)) {
      for (auto& v : s->data()) v += g;
    }
  });
}

/// 0.5 * ||a||^2.
template <class T>
Var<T> half_squared_norm(const Var<T>& a) {
  T acc = 0;
  for (T v : a.value().data()) acc += v * v;
  const int ia = a.id();
  return a.tape().record(Tensor<T>(Shape{}, T(0.5) * acc), {ia}, [ia](Tape<T>& t, int self) {
    const T g = t.grad(self)[0];
    if (Tensor<T>* s = t.grad_sink(ia)) {
      const Tensor<T>& x = t.value(ia);
      for (Index i = 0; i < x.numel(); ++i) (*s)[i] += g * x[i];
    }
  });
}

/// max(0, x); the subgradient at exactly 0 is 0.
template <class T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v = v > T(0) ? v : T(0);
  const int ix = x.id();
  return x.tape().record(std::move(out), {ix}, [ix](Tape<T>& t, int self) {
    Tensor<T>* s = t.grad_sink(ix);
    if (!s) return;
    const Tensor<T>& g = t.grad(self);
    const Tensor<T>& in = t.value(ix);
    for (Index i = 0; i < g.numel(); ++i) {
      if (in[i] > T(0)) (*s)[i] += g[i];
    }
  });
}

template <class T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Tensor<T> out = x.value().reshaped(shape);
  const int ix = x.id();
  return x.tape().record(std::move(out), {ix}, [ix](Tape<T>& t, int self) {
    if (Tensor<T>* s = t.grad_sink(ix)) {
      const Tensor<T>& g = t.grad(self);
      for (Index i = 0; i < g.numel(); ++i) (*s)[i] += g[i];
    }
  });
}

/// Collapses all axes after the first: (N, ...) -> (N, D).
template <class T>
Var<T> flatten(const Var<T>& x) {
  const Shape& s = x.shape();
  return reshape(x, Shape{s[0], s.numel() / s[0]});
}

/// Copy of the value with no gradient path back to `x`.
template <class T>
Var<T> detach(const Var<T>& x) {
  return x.tape().constant(x.value());
}

/// out = x * W^T + b, with x (N, D_in), W (D_out, D_in), b (D_out).
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  const Shape& bs = b.shape();
  if (xs.rank() != 2 || ws.rank() != 2 || bs.rank() != 1 || xs[1] != ws[1] || bs[0] != ws[0]) {
    throw ShapeError("linear: x " + xs.str() + ", W " + ws.str() + ", b " + bs.str());
  }
  count_kernel(Kernel::Linear);
  const Index n = xs[0], din = xs[1], dout = ws[0];
  Tensor<T> out(Shape{n, dout});
  auto y = detail::view(out.ptr(), n, dout);
  y.noalias() = detail::view(x.value().ptr(), n, din) * detail::view(w.value().ptr(), dout, din).transpose();
  y.rowwise() += detail::view(b.value().ptr(), 1, dout).row(0);

  const int ix = x.id(), iw = w.id(), ib = b.id();
  return x.tape().record(std::move(out), {ix, iw, ib}, [=](Tape<T>& t, int self) {
    auto g = detail::view(t.grad(self).ptr(), n, dout);
    if (Tensor<T>* s = t.grad_sink(ix)) {
      detail::view(s->ptr(), n, din).noalias() += g * detail::view(t.value(iw).ptr(), dout, din);
    }
    if (Tensor<T>* s = t.grad_sink(iw)) {
      detail::view(s->ptr(), dout, din).noalias() += g.transpose() * detail::view(t.value(ix).ptr(), n, din);
    }
    if (Tensor<T>* s = t.grad_sink(ib)) {
      detail::view(s->ptr(), 1, dout).row(0) += g.colwise().sum();
    }
  });
}

/// Concatenation along axis 1 (channel / feature axis); a's channels first.
template <class T>
Var<T> channel_concat(const Var<T>& a, const Var<T>& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  bool ok = as.rank() >= 2 && as.rank() == bs.rank();
  for (std::size_t i = 0; ok && i < as.rank(); ++i) ok = (i == 1) || as[i] == bs[i];
  if (!ok) throw ShapeError("channel_concat: " + as.str() + " vs " + bs.str());

  const Index outer = as[0];
  const Index inner = as.stride(1);
  const Index ca = as[1] * inner, cb = bs[1] * inner;
  Tensor<T> out(as.with(1, as[1] + bs[1]));
  const T* pa = a.value().ptr();
  const T* pb = b.value().ptr();
  T* po = out.ptr();
  for (Index o = 0; o < outer; ++o) {
    std::copy(pa + o * ca, pa + (o + 1) * ca, po + o * (ca + cb));
    std::copy(pb + o * cb, pb + (o + 1) * cb, po + o * (ca + cb) + ca);
  }
  const int ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {ia, ib}, [=](Tape<T>& t, int self) {
    const T* g = t.grad(self).ptr();
    if (Tensor<T>* s = t.grad_sink(ia)) {
      for (Index o = 0; o < outer; ++o)
        for (Index i = 0; i < ca; ++i) (*s)[o * ca + i] += g[o * (ca + cb) + i];
    }
    if (Tensor<T>* s = t.grad_sink(ib)) {
      for (Index o = 0; o < outer; ++o)
        for (Index i = 0; i < cb; ++i) (*s)[o * cb + i] += g[o * (ca + cb) + ca + i];
    }
  });
}

}  // namespace motion3d
