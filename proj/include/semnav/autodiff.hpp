#pragma once

#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace semnav {

// Handle into a Tape; cheap to copy, invalid when default-constructed.
struct TensorRef {
  int index = -1;
  bool valid() const { return index >= 0; }
};

// Reverse-mode differentiation tape over dense matrices.  Every operation
// appends a node holding its value and a closure that routes the node's
// gradient to its inputs; backward() runs the closures in reverse creation
// order.  Leaves created with leaf() accumulate their gradients into caller
// owned buffers.
//
// The design trades generality for auditability: all shapes are 2-D, there
// is no broadcasting beyond the row-vector cases the model needs, and every
// op spells out its adjoint next to its forward rule.
class Tape {
 public:
  struct Node {
    Eigen::MatrixXd value;
    Eigen::MatrixXd grad;  // empty until some consumer writes into it
    std::function<void(Tape&, int)> backprop;  // may be empty for leaves
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // A value that takes no gradient.
  TensorRef constant(Eigen::MatrixXd value);

  // A differentiable leaf: after backward(), its gradient is added into
  // *grad_sink (which must outlive the tape and match the value's shape).
  TensorRef leaf(const Eigen::MatrixXd& value, Eigen::MatrixXd* grad_sink);

  const Eigen::MatrixXd& value(TensorRef t) const;
  double scalar(TensorRef t) const;  // value of a 1x1 tensor

  // Reverse sweep from a 1x1 loss node.  Runs at most once per tape.
  void backward(TensorRef loss);
  bool backward_ran() const { return backward_ran_; }
  int size() const { return static_cast<int>(nodes_.size()); }

  // Debug hook for the gradient-checker's self-test: deliberately mis-scales
  // the GELU adjoint so a correct checker must flag it.
  void corrupt_gelu_backward(bool enabled) { corrupt_gelu_ = enabled; }
  bool gelu_corrupted() const { return corrupt_gelu_; }

  // --- These are for op builders; not part of the public surface. ---
  TensorRef emplace(Eigen::MatrixXd value,
                    std::function<void(Tape&, int)> backprop);
  Node& node(int index) { return nodes_[static_cast<std::size_t>(index)]; }
  const Node& node(int index) const {
    return nodes_[static_cast<std::size_t>(index)];
  }
  // Gradient buffer of a node, allocated as zeros on first touch.
  Eigen::MatrixXd& grad(int index);
  bool has_grad(int index) const;

 private:
  std::vector<Node> nodes_;
  std::vector<std::pair<int, Eigen::MatrixXd*>> sinks_;
  bool backward_ran_ = false;
  bool corrupt_gelu_ = false;
};

// --- Elementwise and linear ops --------------------------------------------

TensorRef add(Tape& t, TensorRef a, TensorRef b);
TensorRef sub(Tape& t, TensorRef a, TensorRef b);
TensorRef hadamard(Tape& t, TensorRef a, TensorRef b);
TensorRef scale(Tape& t, TensorRef a, double c);
TensorRef add_scalar(Tape& t, TensorRef a, double c);
TensorRef matmul(Tape& t, TensorRef a, TensorRef b);          // A * B
TensorRef matmul_nt(Tape& t, TensorRef a, TensorRef b);       // A * B^T
TensorRef add_rowvec(Tape& t, TensorRef a, TensorRef row);    // + broadcast row

// --- Structural ops --------------------------------------------------------

TensorRef gather_rows(Tape& t, TensorRef a, std::vector<int> rows);
TensorRef replace_rows(Tape& t, TensorRef a, std::vector<int> rows,
                       TensorRef row_value);  // row_value is 1 x cols
TensorRef slice_rows(Tape& t, TensorRef a, int start, int count);
TensorRef slice_cols(Tape& t, TensorRef a, int start, int count);
TensorRef concat_rows(Tape& t, std::span<const TensorRef> parts);
TensorRef concat_cols(Tape& t, std::span<const TensorRef> parts);
TensorRef stop_gradient(Tape& t, TensorRef a);

// --- Nonlinearities and reductions -----------------------------------------

TensorRef layer_norm_rows(Tape& t, TensorRef x, TensorRef gain, TensorRef bias,
                          double eps);
TensorRef gelu(Tape& t, TensorRef a);
TensorRef softmax_rows(Tape& t, TensorRef a);
TensorRef log_softmax_rows(Tape& t, TensorRef a);
TensorRef sum_all(Tape& t, TensorRef a);
TensorRef mean_all(Tape& t, TensorRef a);

// Divergence of softmax(logits) from a fixed target distribution, computed
// as cross-entropy minus the target's entropy: non-negative, zero only when
// the two distributions agree.  `predicted` (optional) receives the softmax
// values.  Row shapes: 1 x n logits, length-n target.
TensorRef kl_divergence_loss(Tape& t, TensorRef logits,
                             const Eigen::VectorXd& target,
                             Eigen::VectorXd* predicted = nullptr);

// Negative log softmax probability of one class.
TensorRef cross_entropy_loss(Tape& t, TensorRef logits_row, int index);
// sum(A .* W) for a constant weighting W (gradient flows to A only).
TensorRef weighted_sum(Tape& t, TensorRef a, const Eigen::MatrixXd& w);

}  // namespace semnav
