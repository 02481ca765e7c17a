#pragma once

#include <Eigen/Core>

#include <functional>
#include <vector>

namespace risloc::ad {

using Matrix = Eigen::MatrixXd;

/// Epsilon inside the unit-modulus projection's square root. Keeps the map
/// differentiable at the origin while staying far below the 1e-9 modulus
/// tolerance for any raw magnitude above ~1e-5.
constexpr double kUnitModulusEps = 1e-20;

/// Handle to a node on a Tape.
struct Tensor {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Dynamic reverse-mode tape over real-valued matrices. Operations append
/// nodes in topological order; backward() walks the tape once in reverse.
/// A tape is single-threaded; build one per training thread.
class Tape {
 public:
  /// Tracked leaf (gradient accumulated on backward).
  Tensor input(Matrix value);
  /// Untracked leaf (no gradient).
  Tensor constant(Matrix value);

  const Matrix& value(Tensor t) const { return nodes_[t.id].value; }
  /// Gradient of the last backward() target w.r.t. t; zero matrix when the
  /// node was not reached.
  Matrix grad(Tensor t) const;

  Eigen::Index rows(Tensor t) const { return nodes_[t.id].value.rows(); }
  Eigen::Index cols(Tensor t) const { return nodes_[t.id].value.cols(); }

  /// Accumulates d(loss)/d(leaf) for every tracked leaf reachable from
  /// `loss`, which must be 1x1.
  void backward(Tensor loss);

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  friend struct OpAccess;
  struct Node {
    Matrix value;
    Matrix grad;  // empty until touched
    bool requires_grad = false;
    // Pulls this node's accumulated gradient into its parents.
    std::function<void(Tape&, const Matrix&)> pull;
  };

  Tensor emplace(Matrix value, bool requires_grad,
                 std::function<void(Tape&, const Matrix&)> pull);
  void accumulate(int id, const Matrix& g);
  bool tracked(Tensor t) const { return nodes_[t.id].requires_grad; }

  std::vector<Node> nodes_;
};

// ---- primitive operations ------------------------------------------------

/// Elementwise sum of same-shape tensors.
Tensor add(Tape& tp, Tensor a, Tensor b);
/// a + bias broadcast across columns (bias is n x 1).
Tensor add_bias(Tape& tp, Tensor a, Tensor bias);
Tensor sub(Tape& tp, Tensor a, Tensor b);
/// Elementwise product.
Tensor mul(Tape& tp, Tensor a, Tensor b);
Tensor matmul(Tape& tp, Tensor a, Tensor b);
Tensor tanh(Tape& tp, Tensor x);
Tensor sigmoid(Tape& tp, Tensor x);
Tensor relu(Tape& tp, Tensor x);
Tensor square(Tape& tp, Tensor x);
/// Multiplication by a compile-time-constant scalar.
Tensor scale(Tape& tp, Tensor x, double c);
/// Sum of every entry, 1x1.
Tensor sum(Tape& tp, Tensor x);
/// Per-column sums, 1 x cols.
Tensor colwise_sum(Tape& tp, Tensor x);
/// Vertical concatenation (equal column counts).
Tensor concat_rows(Tape& tp, const std::vector<Tensor>& parts);
/// Row block [row0, row0 + nrows).
Tensor slice_rows(Tape& tp, Tensor x, Eigen::Index row0, Eigen::Index nrows);

/// Unit-modulus projection of stacked (Re, Im) pairs: x has 2m rows, rows
/// [0, m) real parts and [m, 2m) imaginary parts; each pair is divided by
/// sqrt(re^2 + im^2 + kUnitModulusEps).
Tensor normalize_pairs(Tape& tp, Tensor x);

/// W * x + b with b broadcast across columns.
inline Tensor linear(Tape& tp, Tensor w, Tensor x, Tensor b) {
  return add_bias(tp, matmul(tp, w, x), b);
}

// ---- optimizer -----------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction over an ordered parameter list. Moment buffers
/// are keyed by position, so the list must be presented in the same order
/// on every step.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads,
            double lr_override = -1.0);

  long step_count() const { return step_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  long step_ = 0;
  std::vector<Matrix> m_, v_;
};

}  // namespace risloc::ad
