#include "icd/learn/tape.hpp"

#include <cassert>
#include <cmath>
#include <stdexcept>

namespace icd::learn {

const Mat& Var::value() const { return tape->node(id).value; }
const Mat& Var::grad() const { return tape->node(id).grad; }

Var Tape::leaf(Mat value, bool needs_grad) {
  nodes_.push_back(Node{std::move(value), Mat(), {}, needs_grad});
  return Var{this, int(nodes_.size()) - 1};
}

Var Tape::make(Mat value, bool needs_grad, std::function<void()> backward) {
  nodes_.push_back(Node{std::move(value), Mat(), std::move(backward), needs_grad});
  return Var{this, int(nodes_.size()) - 1};
}

Mat& Tape::grad_of(int id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.value().rows() != 1 || loss.value().cols() != 1)
    throw std::invalid_argument("backward: loss must be 1x1");
  grad_of(loss.id)(0, 0) = 1.0f;
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.backward && n.grad.size() != 0 && n.needs_grad) n.backward();
  }
}

Var constant(Tape& t, Mat value) { return t.leaf(std::move(value), false); }

namespace {
bool ng(Var a) { return a.tape->node(a.id).needs_grad; }
}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = *a.tape;
  Mat v = a.value() * b.value();
  bool g = ng(a) || ng(b);
  Var out = t.make(std::move(v), g, {});
  if (g) {
    int oid = out.id, aid = a.id, bid = b.id;
    t.node(oid).backward = [&t, oid, aid, bid]() {
      const Mat& go = t.node(oid).grad;
      if (t.node(aid).needs_grad) t.grad_of(aid).noalias() += go * t.node(bid).value.transpose();
      if (t.node(bid).needs_grad) t.grad_of(bid).noalias() += t.node(aid).value.transpose() * go;
    };
  }
  return out;
}

Var add(Var a, Var b) {
  Tape& t = *a.tape;
  bool g = ng(a) || ng(b);
  Var out = t.make(a.value() + b.value(), g, {});
  if (g) {
    int oid = out.id, aid = a.id, bid = b.id;
    t.node(oid).backward = [&t, oid, aid, bid]() {
      const Mat& go = t.node(oid).grad;
      if (t.node(aid).needs_grad) t.grad_of(aid) += go;
      if (t.node(bid).needs_grad) t.grad_of(bid) += go;
    };
  }
  return out;
}

Var sub(Var a, Var b) {
  Tape& t = *a.tape;
  bool g = ng(a) || ng(b);
  Var out = t.make(a.value() - b.value(), g, {});
  if (g) {
    int oid = out.id, aid = a.id, bid = b.id;
    t.node(oid).backward = [&t, oid, aid, bid]() {
      const Mat& go = t.node(oid).grad;
      if (t.node(aid).needs_grad) t.grad_of(aid) += go;
      if (t.node(bid).needs_grad) t.grad_of(bid) -= go;
    };
  }
  return out;
}

Var cmul(Var a, Var b) {
  Tape& t = *a.tape;
  bool g = ng(a) || ng(b);
  Var out = t.make(a.value().cwiseProduct(b.value()), g, {});
  if (g) {
    int oid = out.id, aid = a.id, bid = b.id;
    t.node(oid).backward = [&t, oid, aid, bid]() {
      const Mat& go = t.node(oid).grad;
      if (t.node(aid).needs_grad) t.grad_of(aid) += go.cwiseProduct(t.node(bid).value);
      if (t.node(bid).needs_grad) t.grad_of(bid) += go.cwiseProduct(t.node(aid).value);
    };
  }
  return out;
}

Var add_bias(Var x, Var bias) {
  Tape& t = *x.tape;
  Mat v = x.value();
  v.rowwise() += bias.value().row(0);
  bool g = ng(x) || ng(bias);
  Var out = t.make(std::move(v), g, {});
  if (g) {
    int oid = out.id, xid = x.id, bid = bias.id;
    t.node(oid).backward = [&t, oid, xid, bid]() {
      const Mat& go = t.node(oid).grad;
      if (t.node(xid).needs_grad) t.grad_of(xid) += go;
      if (t.node(bid).needs_grad) t.grad_of(bid).row(0) += go.colwise().sum();
    };
  }
  return out;
}

Var scale(Var x, double s) {
  Tape& t = *x.tape;
  bool g = ng(x);
  Var out = t.make(x.value() * s, g, {});
  if (g) {
    int oid = out.id, xid = x.id;
    t.node(oid).backward = [&t, oid, xid, s]() { t.grad_of(xid) += t.node(oid).grad * s; };
  }
  return out;
}

Var add_const(Var x, const Mat& c) {
  Tape& t = *x.tape;
  bool g = ng(x);
  Var out = t.make(x.value() + c, g, {});
  if (g) {
    int oid = out.id, xid = x.id;
    t.node(oid).backward = [&t, oid, xid]() { t.grad_of(xid) += t.node(oid).grad; };
  }
  return out;
}

Var cmul_const(Var x, const Mat& c) {
  Tape& t = *x.tape;
  bool g = ng(x);
  Var out = t.make(x.value().cwiseProduct(c), g, {});
  if (g) {
    int oid = out.id, xid = x.id;
    Mat cc = c;
    t.node(oid).backward = [&t, oid, xid, cc]() {
      t.grad_of(xid) += t.node(oid).grad.cwiseProduct(cc);
    };
  }
  return out;
}

Var relu(Var x) {
  Tape& t = *x.tape;
  bool g = ng(x);
  Var out = t.make(x.value().cwiseMax(0.0f), g, {});
  if (g) {
    int oid = out.id, xid = x.id;
    t.node(oid).backward = [&t, oid, xid]() {
      const Mat& xv = t.node(xid).value;
      t.grad_of(xid) += t.node(oid).grad.cwiseProduct(
          (xv.array() > 0.0f).cast<double>().matrix());
    };
  }
  return out;
}

Var tanh_op(Var x) {
  Tape& t = *x.tape;
  bool g = ng(x);
  Var out = t.make(x.value().array().tanh().matrix(), g, {});
  if (g) {
    int oid = out.id, xid = x.id;
    t.node(oid).backward = [&t, oid, xid]() {
      const Mat& y = t.node(oid).value;
      t.grad_of(xid) +=
          t.node(oid).grad.cwiseProduct((1.0f - y.array().square()).matrix());
    };
  }
  return out;
}

Var sigmoid(Var x) {
  Tape& t = *x.tape;
  Mat v = (1.0f / (1.0f + (-x.value().array()).exp())).matrix();
  bool g = ng(x);
  Var out = t.make(std::move(v), g, {});
  if (g) {
    int oid = out.id, xid = x.id;
    t.node(oid).backward = [&t, oid, xid]() {
      const Mat& y = t.node(oid).value;
      t.grad_of(xid) +=
          t.node(oid).grad.cwiseProduct((y.array() * (1.0f - y.array())).matrix());
    };
  }
  return out;
}

Var exp_op(Var x) {
  Tape& t = *x.tape;
  bool g = ng(x);
  Var out = t.make(x.value().array().exp().matrix(), g, {});
  if (g) {
    int oid = out.id, xid = x.id;
    t.node(oid).backward = [&t, oid, xid]() {
      t.grad_of(xid) += t.node(oid).grad.cwiseProduct(t.node(oid).value);
    };
  }
  return out;
}

Var square(Var x) {
  Tape& t = *x.tape;
  bool g = ng(x);
  Var out = t.make(x.value().array().square().matrix(), g, {});
  if (g) {
    int oid = out.id, xid = x.id;
    t.node(oid).backward = [&t, oid, xid]() {
      t.grad_of(xid) += 2.0f * t.node(oid).grad.cwiseProduct(t.node(xid).value);
    };
  }
  return out;
}

Var row_normalize(Var x, double eps) {
  Tape& t = *x.tape;
  bool g = ng(x);
  const Mat& xv = x.value();
  Mat out_v(xv.rows(), xv.cols());
  Vec inv(xv.rows());
  for (Eigen::Index i = 0; i < xv.rows(); ++i) {
    inv(i) = 1.0 / std::sqrt(xv.row(i).squaredNorm() + eps * eps);
    out_v.row(i) = xv.row(i) * inv(i);
  }
  Var out = t.make(std::move(out_v), g, {});
  if (g) {
    int oid = out.id, xid = x.id;
    t.node(oid).backward = [&t, oid, xid, inv]() {
      const Mat& y = t.node(oid).value;
      const Mat& go = t.node(oid).grad;
      Mat& gx = t.grad_of(xid);
      for (Eigen::Index i = 0; i < y.rows(); ++i)
        gx.row(i) += inv(i) * (go.row(i) - y.row(i).dot(go.row(i)) * y.row(i));
    };
  }
  return out;
}

Var concat_cols(Var a, Var b) {
  Tape& t = *a.tape;
  assert(a.rows() == b.rows());
  Mat v(a.rows(), a.cols() + b.cols());
  v.leftCols(a.cols()) = a.value();
  v.rightCols(b.cols()) = b.value();
  bool g = ng(a) || ng(b);
  Var out = t.make(std::move(v), g, {});
  if (g) {
    int oid = out.id, aid = a.id, bid = b.id;
    int ac = int(a.cols()), bc = int(b.cols());
    t.node(oid).backward = [&t, oid, aid, bid, ac, bc]() {
      const Mat& go = t.node(oid).grad;
      if (t.node(aid).needs_grad) t.grad_of(aid) += go.leftCols(ac);
      if (t.node(bid).needs_grad) t.grad_of(bid) += go.rightCols(bc);
    };
  }
  return out;
}

Var slice_cols(Var x, int start, int count) {
  Tape& t = *x.tape;
  bool g = ng(x);
  Var out = t.make(x.value().middleCols(start, count), g, {});
  if (g) {
    int oid = out.id, xid = x.id;
    t.node(oid).backward = [&t, oid, xid, start, count]() {
      t.grad_of(xid).middleCols(start, count) += t.node(oid).grad;
    };
  }
  return out;
}

Var gather_rows(Var x, const std::vector<int>& idx) {
  Tape& t = *x.tape;
  Mat v(Eigen::Index(idx.size()), x.cols());
  for (size_t i = 0; i < idx.size(); ++i) v.row(Eigen::Index(i)) = x.value().row(idx[i]);
  bool g = ng(x);
  Var out = t.make(std::move(v), g, {});
  if (g) {
    int oid = out.id, xid = x.id;
    std::vector<int> ix = idx;
    t.node(oid).backward = [&t, oid, xid, ix]() {
      const Mat& go = t.node(oid).grad;
      Mat& gx = t.grad_of(xid);
      for (size_t i = 0; i < ix.size(); ++i) gx.row(ix[i]) += go.row(Eigen::Index(i));
    };
  }
  return out;
}

Var pool_rows(Var x, int k, const Vec& weights) {
  Tape& t = *x.tape;
  const Mat& xv = x.value();
  assert(xv.rows() % k == 0);
  assert(weights.size() == xv.rows());
  Eigen::Index groups = xv.rows() / k;
  Mat v = Mat::Zero(groups, xv.cols());
  for (Eigen::Index i = 0; i < groups; ++i)
    for (int j = 0; j < k; ++j) v.row(i) += weights(i * k + j) * xv.row(i * k + j);
  bool g = ng(x);
  Var out = t.make(std::move(v), g, {});
  if (g) {
    int oid = out.id, xid = x.id;
    Vec w = weights;
    t.node(oid).backward = [&t, oid, xid, k, w]() {
      const Mat& go = t.node(oid).grad;
      Mat& gx = t.grad_of(xid);
      for (Eigen::Index i = 0; i < go.rows(); ++i)
        for (int j = 0; j < k; ++j) gx.row(i * k + j) += w(i * k + j) * go.row(i);
    };
  }
  return out;
}

Var repeat_rows(Var x, int k) {
  Tape& t = *x.tape;
  const Mat& xv = x.value();
  Mat v(xv.rows() * k, xv.cols());
  for (Eigen::Index i = 0; i < xv.rows(); ++i)
    for (int j = 0; j < k; ++j) v.row(i * k + j) = xv.row(i);
  bool g = ng(x);
  Var out = t.make(std::move(v), g, {});
  if (g) {
    int oid = out.id, xid = x.id;
    t.node(oid).backward = [&t, oid, xid, k]() {
      const Mat& go = t.node(oid).grad;
      Mat& gx = t.grad_of(xid);
      for (Eigen::Index i = 0; i < gx.rows(); ++i)
        for (int j = 0; j < k; ++j) gx.row(i) += go.row(i * k + j);
    };
  }
  return out;
}

Var sum_all(Var x) {
  Tape& t = *x.tape;
  Mat v(1, 1);
  v(0, 0) = x.value().sum();
  bool g = ng(x);
  Var out = t.make(std::move(v), g, {});
  if (g) {
    int oid = out.id, xid = x.id;
    t.node(oid).backward = [&t, oid, xid]() {
      t.grad_of(xid).array() += t.node(oid).grad(0, 0);
    };
  }
  return out;
}

Var mean_all(Var x) { return scale(sum_all(x), 1.0 / double(x.value().size())); }

Var mse(Var pred, const Mat& target) {
  Tape& t = *pred.tape;
  Mat diff = pred.value() - target;
  Mat v(1, 1);
  v(0, 0) = diff.array().square().mean();
  bool g = ng(pred);
  Var out = t.make(std::move(v), g, {});
  if (g) {
    int oid = out.id, pid = pred.id;
    Mat d = diff;
    t.node(oid).backward = [&t, oid, pid, d]() {
      t.grad_of(pid) += (2.0f / double(d.size())) * t.node(oid).grad(0, 0) * d;
    };
  }
  return out;
}

Var bce_logits(Var logits, const Mat& targets01) {
  Tape& t = *logits.tape;
  const Mat& z = logits.value();
  // stable: max(z,0) - z*y + log(1+exp(-|z|))
  Mat loss = (z.array().max(0.0f) - z.array() * targets01.array() +
              ((-z.array().abs()).exp() + 1.0f).log())
                 .matrix();
  Mat v(1, 1);
  v(0, 0) = loss.mean();
  bool g = ng(logits);
  Var out = t.make(std::move(v), g, {});
  if (g) {
    int oid = out.id, lid = logits.id;
    Mat p = (1.0f / (1.0f + (-z.array()).exp())).matrix();
    Mat dz = (p - targets01) / double(z.size());
    t.node(oid).backward = [&t, oid, lid, dz]() {
      t.grad_of(lid) += t.node(oid).grad(0, 0) * dz;
    };
  }
  return out;
}

Var row_softmax(Var logits) {
  Tape& t = *logits.tape;
  const Mat& z = logits.value();
  Mat p(z.rows(), z.cols());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    Eigen::ArrayXd e = (z.row(i).array() - z.row(i).maxCoeff()).exp();
    p.row(i) = (e / e.sum()).matrix();
  }
  bool g = ng(logits);
  Var out = t.make(p, g, {});
  if (g) {
    int oid = out.id, lid = logits.id;
    t.node(oid).backward = [&t, oid, lid]() {
      const Mat& y = t.node(oid).value;
      const Mat& go = t.node(oid).grad;
      Mat& gx = t.grad_of(lid);
      for (Eigen::Index i = 0; i < y.rows(); ++i) {
        double dot = go.row(i).dot(y.row(i));
        gx.row(i) += (y.row(i).array() * (go.row(i).array() - dot)).matrix();
      }
    };
  }
  return out;
}

Var cross_entropy_rows(Var logits, const std::vector<int>& labels) {
  Tape& t = *logits.tape;
  const Mat& z = logits.value();
  assert(Eigen::Index(labels.size()) == z.rows());
  Mat p(z.rows(), z.cols());
  double total = 0.0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    double m = z.row(i).maxCoeff();
    Eigen::ArrayXd e = (z.row(i).array() - m).exp();
    double s = e.sum();
    p.row(i) = (e / s).matrix();
    total -= double(z(i, labels[size_t(i)]) - m - std::log(s));
  }
  Mat v(1, 1);
  v(0, 0) = total / double(z.rows());
  bool g = ng(logits);
  Var out = t.make(std::move(v), g, {});
  if (g) {
    int oid = out.id, lid = logits.id;
    Mat dz = p;
    for (Eigen::Index i = 0; i < dz.rows(); ++i) dz(i, labels[size_t(i)]) -= 1.0f;
    dz /= double(z.rows());
    t.node(oid).backward = [&t, oid, lid, dz]() {
      t.grad_of(lid) += t.node(oid).grad(0, 0) * dz;
    };
  }
  return out;
}

Var linear(Var x, Var w, Var b) { return add_bias(matmul(x, w), b); }

}  // namespace icd::learn
