#pragma once

// Define-by-run reverse-mode differentiation. A Tape is built fresh for every
// forward pass; nodes are appended in evaluation order, so reverse append
// order is a valid topological order for the backward sweep.

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "acn/tensor.hpp"

namespace acn {

// A trainable array that outlives any single tape. Gradients accumulate
// additively across backward calls until zero_grad(). grad stays empty until
// the parameter appears on a tape that is swept backward.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool requires_grad = true;
  // Optional prune mask: 1 = keep, 0 = held at zero. Empty means unmasked.
  std::vector<std::uint8_t> mask;

  Parameter() = default;
  Parameter(std::string n, Tensor v);

  void zero_grad();
  bool has_grad() const { return !grad.empty(); }
  bool masked() const { return !mask.empty(); }
  void apply_mask();
};

class Tape;

// Lightweight handle to a node on a tape.
class Var {
 public:
  Var() = default;

  Tape& tape() const { return *tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  // Receives the gradient of the node's output; pushes contributions into
  // parents through Tape::grad().
  using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

  Tape() = default;
  // With track_grads false parameters enter as constants and no backward
  // closures are kept; used for evaluation passes.
  explicit Tape(bool track_grads) : track_grads_(track_grads) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var param(Parameter& p);
  // Value-identical node with no parents.
  Var detach(Var x);

  // Appends an op result. Throws NumericError when value has NaN/Inf.
  Var record(std::string_view op, Tensor value, std::vector<int> parents,
             BackwardFn backward);

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse. Parameter
  // gradients accumulate; the tape's own node gradients are reset first.
  void backward(Var loss);

  const Tensor& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  const std::vector<int>& parents(int id) const { return nodes_[id].parents; }
  std::string_view op(int id) const { return nodes_[id].op; }
  // Lazily zero-initialized gradient slot for node id.
  Tensor& grad(int id);
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    std::string_view op;
    Tensor value;
    Tensor grad;
    std::vector<int> parents;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  Var push(Node node);

  // deque: references to earlier values stay valid while appending.
  std::deque<Node> nodes_;
  bool track_grads_ = true;
};

// ---- differentiable ops -------------------------------------------------

// [m x k] . [k x n]
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var x, double s);
// [n x d] + [d], broadcast over rows.
Var add_bias(Var x, Var bias);
Var sum(Var x);
Var reshape(Var x, Shape shape);

// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
Var gelu(Var x);
double gelu_value(double x);

// Normalizes over the last axis, then gamma * xhat + beta.
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);

// [groups*rows x cols] -> [groups*cols x rows], transposing each group.
Var transpose_groups(Var x, std::size_t groups);
// [groups*rows x cols] -> [groups x cols], mean over each group's rows.
Var mean_rows(Var x, std::size_t groups);

// Mean negative log-likelihood over the batch with stable log-sum-exp.
Var softmax_cross_entropy(Var logits, std::span<const int> labels);
// Mean over all elements of (a - b)^2.
Var mse(Var a, Var b);

// Non-differentiable helper: argmax over each row of [b x C].
std::vector<int> argmax_rows(const Tensor& logits);

}  // namespace acn
