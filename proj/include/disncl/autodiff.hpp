#pragma once

#include <Eigen/Dense>
#include <functional>
#include <utility>
#include <vector>

namespace disncl::ad {

using Mat = Eigen::MatrixXd;

class Tape;

// Handle to a node on a Tape. Cheap to copy; invalid until assigned.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  const Mat& value() const;
  const Mat& grad() const;
  double scalar() const;  // value of a 1x1 node
  long rows() const { return value().rows(); }
  long cols() const { return value().cols(); }

  Tape* tape() const { return tape_; }
  int id() const { return id_; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

// Dynamic computation graph with reverse-mode differentiation. Nodes are
// appended in topological order, so one reverse sweep is a valid backward
// pass. Values are computed eagerly; gradients are dense and accumulate
// across backward() calls until zero_grad().
class Tape {
 public:
  Var input(Mat value, bool requires_grad = false);
  Var constant(Mat value) { return input(std::move(value), false); }
  Var scalar_constant(double v);

  // Seeds d(root) = 1 and sweeps the graph. root must be 1x1.
  void backward(Var root);
  void zero_grad();

  const Mat& value(int id) const { return nodes_[id].val; }
  const Mat& grad(int id) const { return nodes_[id].grad; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Used by op implementations; not part of the public modelling API.
  Var emit(Mat value, bool requires_grad, std::function<void(Tape&)> back);
  Mat& grad_ref(int id) { return nodes_[id].grad; }

 private:
  struct Node {
    Mat val;
    Mat grad;
    std::function<void(Tape&)> back;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
};

// ---- elementwise arithmetic (shapes must match exactly) ----
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);

// ---- scalar broadcast ----
Var add_scalar(Var a, double s);
Var mul_scalar(Var a, double s);

// ---- linear algebra ----
Var matmul(Var a, Var b);
Var transpose(Var a);
Var add_row_broadcast(Var m, Var row);  // m: BxC, row: 1xC

// ---- nonlinearities ----
Var tanh_op(Var a);
Var relu(Var a);
Var leaky_relu(Var a, double slope);
Var sigmoid(Var a);
Var log_op(Var a);
Var exp_op(Var a);
Var clamp(Var a, double lo, double hi);  // zero gradient outside [lo, hi]

// ---- reductions ----
Var sum(Var a);   // -> 1x1
Var mean(Var a);  // -> 1x1 over all entries

// ---- structure ----
Var rows(Var a, const std::vector<int>& idx);  // gather rows
Var gather(Var a, const std::vector<std::pair<int, int>>& entries);  // -> kx1
Var concat_cols(Var a, Var b);
Var softmax_rows(Var a);       // numerically stable row softmax
Var l2_normalize_rows(Var a);  // zero rows pass through as zeros

// ---- operators for readability ----
inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(double s, Var a) { return mul_scalar(a, s); }
inline Var operator*(Var a, double s) { return mul_scalar(a, s); }
inline Var operator+(Var a, double s) { return add_scalar(a, s); }
inline Var operator+(double s, Var a) { return add_scalar(a, s); }
inline Var operator-(Var a, double s) { return add_scalar(a, -s); }
inline Var operator-(double s, Var a) { return add_scalar(mul_scalar(a, -1.0), s); }
inline Var operator-(Var a) { return mul_scalar(a, -1.0); }

}  // namespace disncl::ad
