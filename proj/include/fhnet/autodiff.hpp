#pragma once

// Reverse-mode differentiation over Tensor values.
//
// Every op returns a Var wrapping a Node that owns its value, references its
// parents, and carries a backward rule. A graph is built by ordinary calls and
// is confined to one thread of control; backward() walks it once in reverse
// topological order.

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fhnet/tensor.hpp"

namespace fhnet::ad {

struct Node {
  Tensor value;
  Tensor grad;  // allocated by backward()
  std::vector<std::shared_ptr<Node>> parents;
  std::string op;
  // Reads this->grad and accumulates into parents' grads.
  std::function<void(Node&)> backward_rule;
  bool requires_grad = false;
  bool consumed = false;  // set on the loss node once backward() ran
};

using NodePtr = std::shared_ptr<Node>;

class Var {
 public:
  Var() = default;
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t dim(int axis) const { return node_->value.dim(axis); }
  bool requires_grad() const { return node_->requires_grad; }
  const std::string& op() const { return node_->op; }
  const NodePtr& node() const { return node_; }
  bool defined() const { return node_ != nullptr; }

 private:
  NodePtr node_;
};

Var constant(Tensor value);
// A leaf; gradients accumulate into it across backward() calls until reset.
Var leaf(Tensor value, bool requires_grad = true);

// [..., m, k] x [..., k, n] with numpy-style broadcasting of the leading extents.
Var matmul(const Var& a, const Var& b);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& x, double factor);
Var tanh(const Var& x);
Var sigmoid(const Var& x);
Var relu(const Var& x);
Var square(const Var& x);

enum class ElementwiseOp { kTanh, kSigmoid, kRelu, kAdd, kMul, kScale };
// Dispatch form of the pointwise ops; `factor` is only read by kScale.
Var elementwise(ElementwiseOp op, std::span<const Var> operands, double factor = 1.0);

// Softmax along the final extent, max-subtracted. With `causal`, a
// [..., Tq, Tk] input lets query i see keys j <= i + (Tk - Tq); masked
// entries come out as exact zeros.
Var softmax_last(const Var& x, bool causal = false);

// Normalizes over the final extent: (x - mean) / sqrt(var + eps) * gain + bias.
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);

enum class Padding { kSame, kCausal };
// x: [c_in, T] or [batch, c_in, T]; w: [c_out, c_in, k]; bias: [c_out] or undefined.
// Cross-correlation (no kernel flip). Same padding requires odd k.
Var conv1d(const Var& x, const Var& w, const Var& bias, Padding padding = Padding::kSame);
inline Var conv1d_same(const Var& x, const Var& w, const Var& bias) { return conv1d(x, w, bias, Padding::kSame); }

Var reshape(const Var& x, Shape shape);
Var permute(const Var& x, const std::vector<std::size_t>& order);
Var transpose_last(const Var& x);
Var concat(const std::vector<Var>& parts, int axis);
Var slice(const Var& x, int axis, std::size_t begin, std::size_t end);

Var sum(const Var& x);  // rank-0 result
Var mean(const Var& x);
Var sum_axis(const Var& x, int axis, bool keepdim = false);
Var mean_axis(const Var& x, int axis, bool keepdim = false);

Var mse(const Var& prediction, const Var& target);
// x @ w (+ b)
Var linear(const Var& x, const Var& w, const Var& b = Var());

// Populates grads for every requires-grad node reachable from `loss`.
// Throws if the loss is not a scalar, was already back-propagated, or the
// record contains a cycle.
void backward(const Var& loss);
// Zeroes all grads in the record behind `loss` and re-arms it for backward().
void reset(const Var& loss);

Shape broadcast_shapes(const Shape& a, const Shape& b);

}  // namespace fhnet::ad
