#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dres/tensor.hpp"

namespace dres::ag {

/// Handle to a node on a Tape.
struct Var {
  int id = -1;
};

/// Reverse-mode tape over dense matrices. Nodes are appended in evaluation order, so
/// replaying them backwards is a valid topological order. With recording disabled the
/// tape only evaluates values.
class Tape {
public:
  explicit Tape(bool record = true) : record_(record) {}

  Var constant(Matrix value);
  /// Leaf whose gradient is wanted.
  Var leaf(Matrix value);

  const Matrix& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }
  /// Gradient accumulated into `v` by backward(); zeros if v was not reached.
  Matrix grad(Var v) const;

  /// Seeds d(out)/d(out) = 1 for a 1x1 output and propagates.
  void backward(Var out);

  bool recording() const noexcept { return record_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Linear algebra.
  Var matmul(Var a, Var b);
  Var matmul_nt(Var a, Var b);  // a * b^T
  Var add(Var a, Var b);
  Var add_row(Var a, Var row);  // broadcast a 1xn row over every row of a
  Var scale(Var a, double s);
  Var cols(Var a, int begin, int count);
  Var hcat(const std::vector<Var>& parts);
  Var rows(Var a, const std::vector<int>& index);

  // Pointwise and row-wise.
  Var layer_norm(Var x, Var gamma, Var beta, double eps);
  Var softmax_rows(Var x);
  Var gelu(Var x);
  Var sigmoid(Var x);

  // Scalar-valued reductions (1x1 results).
  Var bce_with_logits(Var logits, const Matrix& targets);
  Var dice(Var logits, const Matrix& targets, double eps);
  Var mse(Var pred, const Matrix& targets);
  Var weighted_sum(const std::vector<Var>& scalars, const std::vector<double>& weights);

private:
  using Backward = std::function<void(Tape&, const Matrix& out_grad)>;

  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    Backward backward;
  };

  Var push(Matrix value, std::initializer_list<Var> inputs, Backward backward);
  Var push(Matrix value, const std::vector<Var>& inputs, Backward backward);
  bool needs(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].needs_grad; }
  void accumulate(Var v, const Matrix& g);

  bool record_;
  std::vector<Node> nodes_;
};

// Scalar helpers shared with the plain-value loss implementations.
double sigmoid(double z);
double gelu(double x);
double gelu_grad(double x);
/// Numerically stable -[t log s(z) + (1-t) log(1 - s(z))].
double bce_with_logits(double z, double t);

}  // namespace dres::ag
