#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

namespace icd::learn {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Mat& value() const;
  const Mat& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

// Reverse-mode autodiff over dense float matrices. Nodes are created in
// topological order, so backward() is a single reverse sweep.
class Tape {
 public:
  struct Node {
    Mat value;
    Mat grad;
    std::function<void()> backward;  // accumulates into parent grads
    bool needs_grad = false;
  };

  Var leaf(Mat value, bool needs_grad);
  Var make(Mat value, bool needs_grad, std::function<void()> backward);

  Node& node(int id) { return nodes_[id]; }
  const Node& node(int id) const { return nodes_[id]; }
  size_t size() const { return nodes_.size(); }

  // grad accumulator, zero-initialized on first touch
  Mat& grad_of(int id);

  // seeds d(loss)/d(loss) = 1 (loss must be 1x1) and sweeps backward
  void backward(Var loss);

 private:
  std::vector<Node> nodes_;
};

// --- op library ---------------------------------------------------------

Var constant(Tape& t, Mat value);

Var matmul(Var a, Var b);
Var add(Var a, Var b);            // same shape
Var sub(Var a, Var b);
Var cmul(Var a, Var b);           // elementwise
Var add_bias(Var x, Var bias);    // bias is 1 x cols, broadcast over rows
Var scale(Var x, double s);
Var add_const(Var x, const Mat& c);
Var cmul_const(Var x, const Mat& c);

Var relu(Var x);
Var tanh_op(Var x);
Var sigmoid(Var x);
Var exp_op(Var x);
Var square(Var x);
Var row_normalize(Var x, double eps = 1e-3);  // unit rows, smooth near zero

Var concat_cols(Var a, Var b);
Var slice_cols(Var x, int start, int count);
Var gather_rows(Var x, const std::vector<int>& idx);

// groups of k consecutive rows pooled with fixed weights:
// out(i,:) = sum_j w(i*k+j) * x(i*k+j,:)
Var pool_rows(Var x, int k, const Vec& weights);

// repeat each row of x k times (adjoint of a uniform pool)
Var repeat_rows(Var x, int k);

Var sum_all(Var x);               // 1x1
Var mean_all(Var x);              // 1x1

Var mse(Var pred, const Mat& target);                     // mean over entries, 1x1
Var bce_logits(Var logits, const Mat& targets01);         // mean, 1x1
Var cross_entropy_rows(Var logits, const std::vector<int>& labels);  // mean, 1x1
Var row_softmax(Var logits);

// standard MLP layer helpers
Var linear(Var x, Var w, Var b);  // x*w + bias row

}  // namespace icd::learn
