#pragma once

// Tape-based reverse-mode differentiation over dense tensors.
//
// A Tape owns every node created during a forward computation. Nodes are
// appended in evaluation order, so the tape index order is already a
// topological order and the backward sweep is a single reverse scan. A node
// whose parents all lack gradients is stored as a constant and never visited.
//
//   ad::Tape tape;
//   auto x = tape.leaf(Tensor::vector({1, 2, 3}));
//   auto loss = ad::sum(ad::mul(x, x));
//   auto grads = tape.backward(loss);   // grads.at(x) == [2, 4, 6]

#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "duo/tensor.hpp"

namespace duo::ad {

class Tape;

struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  bool requires_grad() const;
};

struct Diagnostics {
  static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  bool non_finite = false;
  std::size_t first_bad_node = kNone;
  std::string op;
};

// Gradients of the root w.r.t. every reachable leaf that requires grad.
class GradientMap {
 public:
  bool contains(Var v) const { return grads_.count(v.id) != 0; }
  const Tensor& at(Var v) const;
  std::size_t size() const { return grads_.size(); }
  bool empty() const { return grads_.empty(); }
  const Diagnostics& diagnostics() const { return diag_; }

 private:
  friend class Tape;
  std::map<std::size_t, Tensor> grads_;
  Diagnostics diag_;
};

// Backward closure: receives the tape, this node's forward value and the
// gradient flowing into it, and accumulates into parents via Tape::accumulate.
using BackwardFn = std::function<void(Tape&, const Tensor& out_value, const Tensor& out_grad)>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value);
  Var constant(Tensor value);
  Var constant(double v) { return constant(Tensor::scalar(v)); }

  // Records an op result. If no parent requires grad the node is a constant
  // and `fn` is dropped.
  Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn fn, const char* op);
  Var record(Tensor value, const std::vector<Var>& parents, BackwardFn fn, const char* op);

  GradientMap backward(Var root);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Adds g into the gradient accumulator of `id` (no-op for constants).
  void accumulate(std::size_t id, const Tensor& g);
  // Mutable accumulator, allocated with zeros on first touch.
  Tensor& grad_slot(std::size_t id);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    BackwardFn backward;
    bool requires_grad = false;
    bool is_leaf = false;
    const char* op = "";
  };
  std::vector<Node> nodes_;
};

// ---- elementwise ----------------------------------------------------------
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var add(Var a, double c);
Var scale(Var a, double c);
Var neg(Var a);
Var exp(Var a);
Var log(Var a);
Var sqrt(Var a);
Var square(Var a);
Var abs(Var a);  // subgradient 0 at 0
Var pow(Var a, double exponent);  // a > 0 unless exponent is a non-negative integer
Var sigmoid(Var a);
Var relu(Var a);
Var clamp_min(Var a, double lo);  // zero gradient where clamped
// x * s for a single-element s.
Var scale_by(Var x, Var s);
// Single-element s broadcast to `shape`.
Var expand(Var s, const Shape& shape);
Var stop_gradient(Var a);

// ---- reductions -----------------------------------------------------------
Var sum(Var a);
Var mean(Var a);
Var dot(Var a, Var b);

// ---- shape ----------------------------------------------------------------
Var reshape(Var a, Shape shape);
// Flat gather: out[i] = a.flat[indices[i]], out shape = {indices.size()}.
Var gather(Var a, std::vector<std::size_t> indices);
// Flat concatenation of rank-1 (or any) tensors into a rank-1 result.
Var concat(const std::vector<Var>& parts);
// Channels [c0, c1) of an NCHW tensor.
Var slice_channels(Var x, std::size_t c0, std::size_t c1);
Var concat_channels(const std::vector<Var>& parts);

// ---- linear algebra -------------------------------------------------------
Var matmul(Var a, Var b);
Var matvec(Var a, Var x);
Var outer(Var a, Var b);
Var diag(Var v);
// diag(v) * m
Var scale_rows(Var m, Var v);
// Solves a x = b with partial pivoting; differentiable in both a and b.
Var solve(Var a, Var b);

// ---- probability ----------------------------------------------------------
Var softmax(Var h);      // rank-1
Var log_softmax(Var h);  // rank-1
Var log_softmax_channels(Var x);  // NCHW, over C

}  // namespace duo::ad
