#include "disncl/autodiff.hpp"

#include <cassert>
#include <cmath>
#include <stdexcept>

namespace disncl::ad {

const Mat& Var::value() const { return tape_->value(id_); }
const Mat& Var::grad() const { return tape_->grad(id_); }

double Var::scalar() const {
  const Mat& v = value();
  assert(v.rows() == 1 && v.cols() == 1);
  return v(0, 0);
}

Var Tape::input(Mat value, bool requires_grad) {
  Node n;
  n.val = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::scalar_constant(double v) {
  Mat m(1, 1);
  m(0, 0) = v;
  return input(std::move(m), false);
}

Var Tape::emit(Mat value, bool requires_grad, std::function<void(Tape&)> back) {
  Node n;
  n.val = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::backward(Var root) {
  if (root.tape() != this) throw std::logic_error("backward: var from another tape");
  const Mat& rv = nodes_[root.id()].val;
  if (rv.rows() != 1 || rv.cols() != 1) {
    throw std::logic_error("backward: root must be a 1x1 scalar node");
  }
  // Lazily allocate gradients for the sweep.
  for (auto& n : nodes_) {
    if (n.requires_grad && n.grad.size() == 0) {
      n.grad = Mat::Zero(n.val.rows(), n.val.cols());
    }
  }
  // A constant root (e.g. every loss component skipped) is a legal no-op.
  Node& root_node = nodes_[root.id()];
  if (root_node.grad.size() == 0) root_node.grad = Mat::Zero(1, 1);
  root_node.grad(0, 0) += 1.0;
  for (int id = root.id(); id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.requires_grad && n.back) n.back(*this);
  }
}

void Tape::zero_grad() {
  for (auto& n : nodes_) {
    if (n.grad.size() != 0) n.grad.setZero();
  }
}

namespace {

// Accumulates into a parent gradient only when that parent participates.
inline void accum(Tape& t, int id, const Mat& g) {
  if (t.requires_grad(id)) t.grad_ref(id) += g;
}

inline bool rg(Var a) { return a.tape()->requires_grad(a.id()); }

inline void check_same_tape(Var a, Var b) {
  if (a.tape() != b.tape()) throw std::logic_error("op: vars from different tapes");
}

}  // namespace

Var add(Var a, Var b) {
  check_same_tape(a, b);
  Tape& t = *a.tape();
  const int ia = a.id(), ib = b.id();
  Mat v = t.value(ia) + t.value(ib);
  const int out = static_cast<int>(t.size());
  return t.emit(std::move(v), rg(a) || rg(b), [ia, ib, out](Tape& tp) {
    const Mat& g = tp.grad(out);
    accum(tp, ia, g);
    accum(tp, ib, g);
  });
}

Var sub(Var a, Var b) {
  check_same_tape(a, b);
  Tape& t = *a.tape();
  const int ia = a.id(), ib = b.id();
  Mat v = t.value(ia) - t.value(ib);
  const int out = static_cast<int>(t.size());
  return t.emit(std::move(v), rg(a) || rg(b), [ia, ib, out](Tape& tp) {
    const Mat& g = tp.grad(out);
    accum(tp, ia, g);
    if (tp.requires_grad(ib)) tp.grad_ref(ib) -= g;
  });
}

Var mul(Var a, Var b) {
  check_same_tape(a, b);
  Tape& t = *a.tape();
  const int ia = a.id(), ib = b.id();
  Mat v = t.value(ia).cwiseProduct(t.value(ib));
  const int out = static_cast<int>(t.size());
  return t.emit(std::move(v), rg(a) || rg(b), [ia, ib, out](Tape& tp) {
    const Mat& g = tp.grad(out);
    if (tp.requires_grad(ia)) tp.grad_ref(ia) += g.cwiseProduct(tp.value(ib));
    if (tp.requires_grad(ib)) tp.grad_ref(ib) += g.cwiseProduct(tp.value(ia));
  });
}

Var add_scalar(Var a, double s) {
  Tape& t = *a.tape();
  const int ia = a.id();
  Mat v = t.value(ia).array() + s;
  const int out = static_cast<int>(t.size());
  return t.emit(std::move(v), rg(a), [ia, out](Tape& tp) {
    accum(tp, ia, tp.grad(out));
  });
}

Var mul_scalar(Var a, double s) {
  Tape& t = *a.tape();
  const int ia = a.id();
  Mat v = t.value(ia) * s;
  const int out = static_cast<int>(t.size());
  return t.emit(std::move(v), rg(a), [ia, out, s](Tape& tp) {
    if (tp.requires_grad(ia)) tp.grad_ref(ia) += tp.grad(out) * s;
  });
}

Var matmul(Var a, Var b) {
  check_same_tape(a, b);
  Tape& t = *a.tape();
  const int ia = a.id(), ib = b.id();
  if (t.value(ia).cols() != t.value(ib).rows()) {
    throw std::logic_error("matmul: inner dimensions disagree");
  }
  // Row-by-row product: the kernel is identical for every row, so equal
  // input rows produce bitwise-equal output rows (blocked GEMM does not
  // guarantee that).
  const Mat& va = t.value(ia);
  const Mat& vb = t.value(ib);
  Mat v(va.rows(), vb.cols());
  for (long r = 0; r < va.rows(); ++r) v.row(r).noalias() = va.row(r) * vb;
  const int out = static_cast<int>(t.size());
  return t.emit(std::move(v), rg(a) || rg(b), [ia, ib, out](Tape& tp) {
    const Mat& g = tp.grad(out);
    if (tp.requires_grad(ia)) tp.grad_ref(ia) += g * tp.value(ib).transpose();
    if (tp.requires_grad(ib)) tp.grad_ref(ib) += tp.value(ia).transpose() * g;
  });
}

Var transpose(Var a) {
  Tape& t = *a.tape();
  const int ia = a.id();
  Mat v = t.value(ia).transpose();
  const int out = static_cast<int>(t.size());
  return t.emit(std::move(v), rg(a), [ia, out](Tape& tp) {
    if (tp.requires_grad(ia)) tp.grad_ref(ia) += tp.grad(out).transpose();
  });
}

Var add_row_broadcast(Var m, Var row) {
  check_same_tape(m, row);
  Tape& t = *m.tape();
  const int im = m.id(), ir = row.id();
  if (t.value(ir).rows() != 1 || t.value(ir).cols() != t.value(im).cols()) {
    throw std::logic_error("add_row_broadcast: row must be 1 x cols(m)");
  }
  Mat v = t.value(im).rowwise() + t.value(ir).row(0);
  const int out = static_cast<int>(t.size());
  return t.emit(std::move(v), rg(m) || rg(row), [im, ir, out](Tape& tp) {
    const Mat& g = tp.grad(out);
    accum(tp, im, g);
    if (tp.requires_grad(ir)) tp.grad_ref(ir) += g.colwise().sum();
  });
}

Var tanh_op(Var a) {
  Tape& t = *a.tape();
  const int ia = a.id();
  Mat v = t.value(ia).array().tanh();
  const int out = static_cast<int>(t.size());
  return t.emit(std::move(v), rg(a), [ia, out](Tape& tp) {
    if (tp.requires_grad(ia)) {
      const auto y = tp.value(out).array();
      tp.grad_ref(ia).array() += tp.grad(out).array() * (1.0 - y * y);
    }
  });
}

Var relu(Var a) {
  Tape& t = *a.tape();
  const int ia = a.id();
  Mat v = t.value(ia).cwiseMax(0.0);
  const int out = static_cast<int>(t.size());
  return t.emit(std::move(v), rg(a), [ia, out](Tape& tp) {
    if (tp.requires_grad(ia)) {
      const auto mask = (tp.value(ia).array() > 0.0).cast<double>();
      tp.grad_ref(ia).array() += tp.grad(out).array() * mask;
    }
  });
}

Var leaky_relu(Var a, double slope) {
  Tape& t = *a.tape();
  const int ia = a.id();
  const auto x = t.value(ia).array();
  Mat v = (x > 0.0).select(t.value(ia), t.value(ia) * slope);
  const int out = static_cast<int>(t.size());
  return t.emit(std::move(v), rg(a), [ia, out, slope](Tape& tp) {
    if (tp.requires_grad(ia)) {
      const auto mask = (tp.value(ia).array() > 0.0)
                            .select(Mat::Ones(tp.value(ia).rows(), tp.value(ia).cols()),
                                    Mat::Constant(tp.value(ia).rows(), tp.value(ia).cols(), slope));
      tp.grad_ref(ia).array() += tp.grad(out).array() * mask.array();
    }
  });
}

Var sigmoid(Var a) {
  Tape& t = *a.tape();
  const int ia = a.id();
  // Stable logistic: never exponentiates a large positive argument.
  Mat v = t.value(ia).unaryExpr([](double x) {
    if (x >= 0.0) {
      return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
  const int out = static_cast<int>(t.size());
  return t.emit(std::move(v), rg(a), [ia, out](Tape& tp) {
    if (tp.requires_grad(ia)) {
      const auto y = tp.value(out).array();
      tp.grad_ref(ia).array() += tp.grad(out).array() * y * (1.0 - y);
    }
  });
}

Var log_op(Var a) {
  Tape& t = *a.tape();
  const int ia = a.id();
  Mat v = t.value(ia).array().log();
  const int out = static_cast<int>(t.size());
  return t.emit(std::move(v), rg(a), [ia, out](Tape& tp) {
    if (tp.requires_grad(ia)) {
      tp.grad_ref(ia).array() += tp.grad(out).array() / tp.value(ia).array();
    }
  });
}

Var exp_op(Var a) {
  Tape& t = *a.tape();
  const int ia = a.id();
  Mat v = t.value(ia).array().exp();
  const int out = static_cast<int>(t.size());
  return t.emit(std::move(v), rg(a), [ia, out](Tape& tp) {
    if (tp.requires_grad(ia)) {
      tp.grad_ref(ia).array() += tp.grad(out).array() * tp.value(out).array();
    }
  });
}

Var clamp(Var a, double lo, double hi) {
  Tape& t = *a.tape();
  const int ia = a.id();
  Mat v = t.value(ia).cwiseMax(lo).cwiseMin(hi);
  const int out = static_cast<int>(t.size());
  return t.emit(std::move(v), rg(a), [ia, out, lo, hi](Tape& tp) {
    if (tp.requires_grad(ia)) {
      const auto x = tp.value(ia).array();
      const auto inside = (x > lo && x < hi).cast<double>();
      tp.grad_ref(ia).array() += tp.grad(out).array() * inside;
    }
  });
}

Var sum(Var a) {
  Tape& t = *a.tape();
  const int ia = a.id();
  Mat v(1, 1);
  v(0, 0) = t.value(ia).sum();
  const int out = static_cast<int>(t.size());
  return t.emit(std::move(v), rg(a), [ia, out](Tape& tp) {
    if (tp.requires_grad(ia)) {
      tp.grad_ref(ia).array() += tp.grad(out)(0, 0);
    }
  });
}

Var mean(Var a) {
  Tape& t = *a.tape();
  const double n = static_cast<double>(t.value(a.id()).size());
  return mul_scalar(sum(a), 1.0 / n);
}

Var rows(Var a, const std::vector<int>& idx) {
  Tape& t = *a.tape();
  const int ia = a.id();
  const Mat& src = t.value(ia);
  Mat v(static_cast<long>(idx.size()), src.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) v.row(static_cast<long>(i)) = src.row(idx[i]);
  const int out = static_cast<int>(t.size());
  return t.emit(std::move(v), rg(a), [ia, out, idx](Tape& tp) {
    if (tp.requires_grad(ia)) {
      const Mat& g = tp.grad(out);
      Mat& dst = tp.grad_ref(ia);
      for (std::size_t i = 0; i < idx.size(); ++i) dst.row(idx[i]) += g.row(static_cast<long>(i));
    }
  });
}

Var gather(Var a, const std::vector<std::pair<int, int>>& entries) {
  Tape& t = *a.tape();
  const int ia = a.id();
  const Mat& src = t.value(ia);
  Mat v(static_cast<long>(entries.size()), 1);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    v(static_cast<long>(i), 0) = src(entries[i].first, entries[i].second);
  }
  const int out = static_cast<int>(t.size());
  return t.emit(std::move(v), rg(a), [ia, out, entries](Tape& tp) {
    if (tp.requires_grad(ia)) {
      const Mat& g = tp.grad(out);
      Mat& dst = tp.grad_ref(ia);
      for (std::size_t i = 0; i < entries.size(); ++i) {
        dst(entries[i].first, entries[i].second) += g(static_cast<long>(i), 0);
      }
    }
  });
}

Var concat_cols(Var a, Var b) {
  check_same_tape(a, b);
  Tape& t = *a.tape();
  const int ia = a.id(), ib = b.id();
  const Mat& va = t.value(ia);
  const Mat& vb = t.value(ib);
  if (va.rows() != vb.rows()) throw std::logic_error("concat_cols: row counts disagree");
  Mat v(va.rows(), va.cols() + vb.cols());
  v << va, vb;
  const int out = static_cast<int>(t.size());
  const long ca = va.cols();
  return t.emit(std::move(v), rg(a) || rg(b), [ia, ib, out, ca](Tape& tp) {
    const Mat& g = tp.grad(out);
    if (tp.requires_grad(ia)) tp.grad_ref(ia) += g.leftCols(ca);
    if (tp.requires_grad(ib)) tp.grad_ref(ib) += g.rightCols(g.cols() - ca);
  });
}

Var softmax_rows(Var a) {
  Tape& t = *a.tape();
  const int ia = a.id();
  const Mat& x = t.value(ia);
  Mat v(x.rows(), x.cols());
  for (long r = 0; r < x.rows(); ++r) {
    const double mx = x.row(r).maxCoeff();
    Eigen::ArrayXd e = (x.row(r).array() - mx).exp();
    v.row(r) = (e / e.sum()).matrix();
  }
  const int out = static_cast<int>(t.size());
  return t.emit(std::move(v), rg(a), [ia, out](Tape& tp) {
    if (tp.requires_grad(ia)) {
      const Mat& y = tp.value(out);
      const Mat& g = tp.grad(out);
      Mat& dst = tp.grad_ref(ia);
      for (long r = 0; r < y.rows(); ++r) {
        const double dot = y.row(r).dot(g.row(r));
        dst.row(r).array() += y.row(r).array() * (g.row(r).array() - dot);
      }
    }
  });
}

Var l2_normalize_rows(Var a) {
  Tape& t = *a.tape();
  const int ia = a.id();
  const Mat& x = t.value(ia);
  Mat v(x.rows(), x.cols());
  Eigen::VectorXd norms(x.rows());
  for (long r = 0; r < x.rows(); ++r) {
    const double n = x.row(r).norm();
    norms(r) = n;
    if (n == 0.0) {
      v.row(r).setZero();
    } else {
      v.row(r) = x.row(r) / n;
    }
  }
  const int out = static_cast<int>(t.size());
  return t.emit(std::move(v), rg(a), [ia, out, norms](Tape& tp) {
    if (tp.requires_grad(ia)) {
      const Mat& y = tp.value(out);
      const Mat& g = tp.grad(out);
      Mat& dst = tp.grad_ref(ia);
      for (long r = 0; r < y.rows(); ++r) {
        const double n = norms(r);
        if (n == 0.0) continue;
        const double dot = y.row(r).dot(g.row(r));
        dst.row(r) += (g.row(r) - dot * y.row(r)) / n;
      }
    }
  });
}

}  // namespace disncl::ad
