#pragma once

// Minimal reverse-mode automatic differentiation over dense double matrices.
//
// A Var is a handle to a node in a dynamically built graph. Leaves created
// with requires_grad=true act as trainable parameters; every op records a
// backward closure only when at least one input needs a gradient, so
// inference on frozen inputs builds no graph at all.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace mmtal::ad {

using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void accumulate(const Matrix& g) {
    if (!requires_grad) return;
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(Matrix value, bool requires_grad = false)
      : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  bool defined() const { return node_ != nullptr; }
  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  // Gradient accumulated by backward(); zeros when nothing flowed here.
  Matrix grad() const {
    if (node_->grad.size() == 0) return Matrix::Zero(rows(), cols());
    return node_->grad;
  }
  bool has_grad() const { return node_->grad.size() != 0; }
  void zero_grad() { node_->grad.resize(0, 0); }

  double item() const {
    if (rows() != 1 || cols() != 1) {
      throw std::logic_error("item() on a " + std::to_string(rows()) + "x" +
                             std::to_string(cols()) + " value");
    }
    return node_->value(0, 0);
  }

  const std::shared_ptr<Node>& node() const { return node_; }

  // Back-propagates from a scalar root.
  void backward() const;

 private:
  std::shared_ptr<Node> node_;
};

inline Var constant(Matrix m) { return Var(std::move(m), false); }
inline Var parameter(Matrix m) { return Var(std::move(m), true); }
inline Var scalar(double v) { return constant(Matrix::Constant(1, 1, v)); }

namespace detail {

inline thread_local bool grad_disabled = false;

inline Var make(Matrix value, std::vector<Var> inputs,
                std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (!grad_disabled) {
    for (const auto& in : inputs) {
      if (in.requires_grad()) node->requires_grad = true;
    }
  }
  if (node->requires_grad) {
    node->parents.reserve(inputs.size());
    for (auto& in : inputs) node->parents.push_back(in.node());
    node->backward = std::move(backward);
  }
  return Var(std::move(node));
}

inline void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                                " vs " + std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()));
  }
}

}  // namespace detail

// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_disabled) { detail::grad_disabled = true; }
  ~NoGradGuard() { detail::grad_disabled = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline void Var::backward() const {
  if (rows() != 1 || cols() != 1) throw std::logic_error("backward() needs a scalar root");
  if (!requires_grad()) return;

  // Iterative post-order DFS for a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  node_->accumulate(Matrix::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->grad.size() != 0) n->backward(*n);
  }
}

// ---------------------------------------------------------------- algebra

inline Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: inner dims " + std::to_string(a.cols()) + " vs " +
                                std::to_string(b.rows()));
  }
  return detail::make(a.value() * b.value(), {a, b}, [a, b](Node& self) {
    a.node()->accumulate(self.grad * b.value().transpose());
    b.node()->accumulate(a.value().transpose() * self.grad);
  });
}

inline Var transpose(const Var& a) {
  return detail::make(a.value().transpose(), {a},
                      [a](Node& self) { a.node()->accumulate(self.grad.transpose()); });
}

inline Var add(const Var& a, const Var& b) {
  detail::check_same_shape(a, b, "add");
  return detail::make(a.value() + b.value(), {a, b}, [a, b](Node& self) {
    a.node()->accumulate(self.grad);
    b.node()->accumulate(self.grad);
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::check_same_shape(a, b, "sub");
  return detail::make(a.value() - b.value(), {a, b}, [a, b](Node& self) {
    a.node()->accumulate(self.grad);
    b.node()->accumulate(-self.grad);
  });
}

inline Var mul(const Var& a, const Var& b) {
  detail::check_same_shape(a, b, "mul");
  return detail::make(a.value().cwiseProduct(b.value()), {a, b}, [a, b](Node& self) {
    a.node()->accumulate(self.grad.cwiseProduct(b.value()));
    b.node()->accumulate(self.grad.cwiseProduct(a.value()));
  });
}

inline Var scale(const Var& a, double s) {
  return detail::make(a.value() * s, {a}, [a, s](Node& self) { a.node()->accumulate(self.grad * s); });
}

inline Var add_const(const Var& a, const Matrix& c) {
  return detail::make(a.value() + c, {a}, [a](Node& self) { a.node()->accumulate(self.grad); });
}

inline Var mul_const(const Var& a, const Matrix& c) {
  return detail::make(a.value().cwiseProduct(c), {a},
                      [a, c](Node& self) { a.node()->accumulate(self.grad.cwiseProduct(c)); });
}

// a (n x d) + row (1 x d) broadcast over rows.
inline Var add_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw std::invalid_argument("add_row: bad bias shape");
  Matrix v = a.value().rowwise() + row.value().row(0);
  return detail::make(std::move(v), {a, row}, [a, row](Node& self) {
    a.node()->accumulate(self.grad);
    row.node()->accumulate(self.grad.colwise().sum());
  });
}

// a (n x d) * row (1 x d) broadcast over rows.
inline Var mul_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw std::invalid_argument("mul_row: bad shape");
  Matrix v = a.value().array().rowwise() * row.value().row(0).array();
  return detail::make(std::move(v), {a, row}, [a, row](Node& self) {
    Matrix ga = self.grad.array().rowwise() * row.value().row(0).array();
    a.node()->accumulate(ga);
    row.node()->accumulate(self.grad.cwiseProduct(a.value()).colwise().sum());
  });
}

// ------------------------------------------------------------- pointwise

inline Var sigmoid(const Var& a) {
  Matrix y = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
  return detail::make(y, {a}, [a, y](Node& self) {
    a.node()->accumulate((self.grad.array() * y.array() * (1.0 - y.array())).matrix());
  });
}

inline Var softplus(const Var& a) {
  Matrix y = a.value().unaryExpr([](double x) {
    return x > 30.0 ? x : std::log1p(std::exp(x));
  });
  return detail::make(y, {a}, [a](Node& self) {
    Matrix s = a.value().unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
    a.node()->accumulate(self.grad.cwiseProduct(s));
  });
}

// tanh approximation of GELU; smooth everywhere so finite differences agree.
inline Var gelu(const Var& a) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  auto f = [](double x) {
    double u = k * (x + 0.044715 * x * x * x);
    return 0.5 * x * (1.0 + std::tanh(u));
  };
  return detail::make(a.value().unaryExpr(f), {a}, [a](Node& self) {
    Matrix d = a.value().unaryExpr([](double x) {
      double u = k * (x + 0.044715 * x * x * x);
      double t = std::tanh(u);
      double du = k * (1.0 + 3.0 * 0.044715 * x * x);
      return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
    });
    a.node()->accumulate(self.grad.cwiseProduct(d));
  });
}

inline Var log(const Var& a) {
  return detail::make(a.value().array().log().matrix(), {a}, [a](Node& self) {
    a.node()->accumulate((self.grad.array() / a.value().array()).matrix());
  });
}

inline Var exp(const Var& a) {
  Matrix y = a.value().array().exp().matrix();
  return detail::make(y, {a}, [a, y](Node& self) { a.node()->accumulate(self.grad.cwiseProduct(y)); });
}

inline Var square(const Var& a) {
  return detail::make(a.value().array().square().matrix(), {a}, [a](Node& self) {
    a.node()->accumulate(2.0 * self.grad.cwiseProduct(a.value()));
  });
}

// ------------------------------------------------------------ reductions

inline Var sum(const Var& a) {
  return detail::make(Matrix::Constant(1, 1, a.value().sum()), {a}, [a](Node& self) {
    a.node()->accumulate(Matrix::Constant(a.rows(), a.cols(), self.grad(0, 0)));
  });
}

// Mean over rows: (n x d) -> (1 x d).
inline Var mean_rows(const Var& a) {
  if (a.rows() == 0) throw std::invalid_argument("mean_rows of empty matrix");
  const double inv = 1.0 / static_cast<double>(a.rows());
  Matrix v = a.value().colwise().sum() * inv;
  return detail::make(std::move(v), {a}, [a, inv](Node& self) {
    a.node()->accumulate(self.grad.replicate(a.rows(), 1) * inv);
  });
}

// Weighted sum over rows with constant weights: (n x d) -> (1 x d).
inline Var weighted_rows(const Var& a, const Eigen::VectorXd& w) {
  if (w.size() != a.rows()) throw std::invalid_argument("weighted_rows: weight count");
  Matrix v = w.transpose() * a.value();
  return detail::make(std::move(v), {a}, [a, w](Node& self) {
    a.node()->accumulate(w * self.grad);
  });
}

// ------------------------------------------------------------- structure

inline Var slice_rows(const Var& a, Index begin, Index count) {
  if (begin < 0 || count < 0 || begin + count > a.rows()) throw std::out_of_range("slice_rows");
  return detail::make(a.value().middleRows(begin, count), {a}, [a, begin, count](Node& self) {
    Matrix g = Matrix::Zero(a.rows(), a.cols());
    g.middleRows(begin, count) = self.grad;
    a.node()->accumulate(g);
  });
}

inline Var slice_cols(const Var& a, Index begin, Index count) {
  if (begin < 0 || count < 0 || begin + count > a.cols()) throw std::out_of_range("slice_cols");
  return detail::make(a.value().middleCols(begin, count), {a}, [a, begin, count](Node& self) {
    Matrix g = Matrix::Zero(a.rows(), a.cols());
    g.middleCols(begin, count) = self.grad;
    a.node()->accumulate(g);
  });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows of nothing");
  Index cols = -1, rows = 0;
  for (const auto& p : parts) {
    if (p.rows() == 0) continue;
    if (cols >= 0 && p.cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
    cols = p.cols();
    rows += p.rows();
  }
  if (cols < 0) cols = parts.front().cols();
  Matrix v(rows, cols);
  Index at = 0;
  for (const auto& p : parts) {
    if (p.rows() == 0) continue;
    v.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return detail::make(std::move(v), parts, [parts](Node& self) {
    Index at = 0;
    for (const auto& p : parts) {
      if (p.rows() == 0) continue;
      p.node()->accumulate(self.grad.middleRows(at, p.rows()));
      at += p.rows();
    }
  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols of nothing");
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
    cols += p.cols();
  }
  Matrix v(rows, cols);
  Index at = 0;
  for (const auto& p : parts) {
    v.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return detail::make(std::move(v), parts, [parts](Node& self) {
    Index at = 0;
    for (const auto& p : parts) {
      p.node()->accumulate(self.grad.middleCols(at, p.cols()));
      at += p.cols();
    }
  });
}

// out[t] = a[t - k], zero outside the valid range.
inline Var shift_rows(const Var& a, Index k) {
  const Index n = a.rows();
  Matrix v = Matrix::Zero(n, a.cols());
  for (Index t = 0; t < n; ++t) {
    Index src = t - k;
    if (src >= 0 && src < n) v.row(t) = a.value().row(src);
  }
  return detail::make(std::move(v), {a}, [a, k](Node& self) {
    const Index n = a.rows();
    Matrix g = Matrix::Zero(n, a.cols());
    for (Index t = 0; t < n; ++t) {
      Index src = t - k;
      if (src >= 0 && src < n) g.row(src) += self.grad.row(t);
    }
    a.node()->accumulate(g);
  });
}

// Non-overlapping window-2 average pooling along rows; an odd trailing row is dropped.
inline Var avg_pool2_rows(const Var& a) {
  const Index out = a.rows() / 2;
  Matrix v(out, a.cols());
  for (Index i = 0; i < out; ++i) v.row(i) = 0.5 * (a.value().row(2 * i) + a.value().row(2 * i + 1));
  return detail::make(std::move(v), {a}, [a, out](Node& self) {
    Matrix g = Matrix::Zero(a.rows(), a.cols());
    for (Index i = 0; i < out; ++i) {
      g.row(2 * i) = 0.5 * self.grad.row(i);
      g.row(2 * i + 1) = 0.5 * self.grad.row(i);
    }
    a.node()->accumulate(g);
  });
}

inline Var gather_rows(const Var& a, const std::vector<Index>& idx) {
  Matrix v(static_cast<Index>(idx.size()), a.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) v.row(static_cast<Index>(i)) = a.value().row(idx[i]);
  return detail::make(std::move(v), {a}, [a, idx](Node& self) {
    Matrix g = Matrix::Zero(a.rows(), a.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) g.row(idx[i]) += self.grad.row(static_cast<Index>(i));
    a.node()->accumulate(g);
  });
}

// Reinterprets a matrix in row-major element order.
inline Var reshape(const Var& a, Index rows, Index cols) {
  if (rows * cols != a.rows() * a.cols()) throw std::invalid_argument("reshape: element count");
  const Index ac = a.cols();
  Matrix v(rows, cols);
  for (Index k = 0; k < rows * cols; ++k) v(k / cols, k % cols) = a.value()(k / ac, k % ac);
  return detail::make(std::move(v), {a}, [a, cols, ac](Node& self) {
    Matrix g(a.rows(), a.cols());
    for (Index k = 0; k < g.size(); ++k) g(k / ac, k % ac) = self.grad(k / cols, k % cols);
    a.node()->accumulate(g);
  });
}

// ------------------------------------------------------- normalizations

inline Var softmax_rows(const Var& a) {
  Matrix y(a.rows(), a.cols());
  for (Index i = 0; i < a.rows(); ++i) {
    Eigen::RowVectorXd r = a.value().row(i);
    r.array() -= r.maxCoeff();
    r = r.array().exp().matrix();
    y.row(i) = r / r.sum();
  }
  return detail::make(y, {a}, [a, y](Node& self) {
    Matrix g(y.rows(), y.cols());
    for (Index i = 0; i < y.rows(); ++i) {
      double dot = self.grad.row(i).dot(y.row(i));
      g.row(i) = y.row(i).array() * (self.grad.row(i).array() - dot);
    }
    a.node()->accumulate(g);
  });
}

// Row-wise layer norm without affine parameters.
inline Var layer_norm_rows(const Var& a, double eps = 1e-5) {
  const Index n = a.rows(), d = a.cols();
  Matrix xhat(n, d);
  Eigen::VectorXd inv_std(n);
  for (Index i = 0; i < n; ++i) {
    double mu = a.value().row(i).mean();
    Eigen::RowVectorXd c = a.value().row(i).array() - mu;
    double var = c.squaredNorm() / static_cast<double>(d);
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = c * inv_std(i);
  }
  return detail::make(xhat, {a}, [a, xhat, inv_std, d](Node& self) {
    Matrix g(xhat.rows(), d);
    for (Index i = 0; i < xhat.rows(); ++i) {
      const auto go = self.grad.row(i);
      double mg = go.mean();
      double mgx = go.dot(xhat.row(i)) / static_cast<double>(d);
      g.row(i) = inv_std(i) * (go.array() - mg - xhat.row(i).array() * mgx);
    }
    a.node()->accumulate(g);
  });
}

inline Var l2_normalize_rows(const Var& a, double eps = 1e-12) {
  const Index n = a.rows();
  Matrix y(n, a.cols());
  Eigen::VectorXd norms(n);
  for (Index i = 0; i < n; ++i) {
    norms(i) = std::max(a.value().row(i).norm(), eps);
    y.row(i) = a.value().row(i) / norms(i);
  }
  return detail::make(y, {a}, [a, y, norms](Node& self) {
    Matrix g(y.rows(), y.cols());
    for (Index i = 0; i < y.rows(); ++i) {
      double dot = self.grad.row(i).dot(y.row(i));
      g.row(i) = (self.grad.row(i) - dot * y.row(i)) / norms(i);
    }
    a.node()->accumulate(g);
  });
}

// --------------------------------------------------------- fused losses

// Sum over rows of -log softmax(logits)[label].
inline Var cross_entropy_rows(const Var& logits, const std::vector<int>& labels) {
  if (static_cast<Index>(labels.size()) != logits.rows()) {
    throw std::invalid_argument("cross_entropy_rows: label count");
  }
  Matrix p(logits.rows(), logits.cols());
  double total = 0.0;
  for (Index i = 0; i < logits.rows(); ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= logits.cols()) throw std::out_of_range("cross_entropy_rows: label");
    Eigen::RowVectorXd r = logits.value().row(i);
    double m = r.maxCoeff();
    r = (r.array() - m).exp().matrix();
    double z = r.sum();
    p.row(i) = r / z;
    total += -(logits.value()(i, y) - m - std::log(z));
  }
  return detail::make(Matrix::Constant(1, 1, total), {logits}, [logits, labels, p](Node& self) {
    Matrix g = p;
    for (Index i = 0; i < g.rows(); ++i) g(i, labels[static_cast<std::size_t>(i)]) -= 1.0;
    logits.node()->accumulate(g * self.grad(0, 0));
  });
}

// Sum of w_i * H(y_i, p_i) for probabilities p (n x 1) clamped to [clip, 1 - clip].
inline Var weighted_bce(const Var& p, const std::vector<int>& labels, const std::vector<double>& weights,
                        double clip = 1e-7) {
  const Index n = p.rows();
  if (p.cols() != 1 || static_cast<Index>(labels.size()) != n || static_cast<Index>(weights.size()) != n) {
    throw std::invalid_argument("weighted_bce: shape");
  }
  double total = 0.0;
  for (Index i = 0; i < n; ++i) {
    double q = std::clamp(p.value()(i, 0), clip, 1.0 - clip);
    const auto k = static_cast<std::size_t>(i);
    total += weights[k] * (labels[k] ? -std::log(q) : -std::log(1.0 - q));
  }
  return detail::make(Matrix::Constant(1, 1, total), {p}, [p, labels, weights, clip](Node& self) {
    Matrix g = Matrix::Zero(p.rows(), 1);
    for (Index i = 0; i < p.rows(); ++i) {
      double raw = p.value()(i, 0);
      if (raw < clip || raw > 1.0 - clip) continue;  // clamped: zero gradient
      const auto k = static_cast<std::size_t>(i);
      g(i, 0) = weights[k] * (labels[k] ? -1.0 / raw : 1.0 / (1.0 - raw));
    }
    p.node()->accumulate(g * self.grad(0, 0));
  });
}

// Sum over rows of the 1-D DIoU loss 1 - IoU + ((c_p - c_g) / enclosure)^2.
// pred and gt are (n x 2) with columns (start, end).
inline Var diou_loss_sum(const Var& pred, const Matrix& gt) {
  if (pred.cols() != 2 || gt.cols() != 2 || pred.rows() != gt.rows()) {
    throw std::invalid_argument("diou_loss_sum: shape");
  }
  const Index n = pred.rows();
  Matrix g = Matrix::Zero(n, 2);
  double total = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double ps = pred.value()(i, 0), pe = pred.value()(i, 1);
    const double gs = gt(i, 0), ge = gt(i, 1);
    const double lo = std::max(ps, gs), hi = std::min(pe, ge);
    const double inter = std::max(0.0, hi - lo);
    const double uni = (pe - ps) + (ge - gs) - inter;
    const double enc_lo = std::min(ps, gs), enc_hi = std::max(pe, ge);
    const double enc = enc_hi - enc_lo;
    const double iou = uni > 0.0 ? inter / uni : 0.0;
    const double dc = 0.5 * (ps + pe) - 0.5 * (gs + ge);
    const double dist = enc > 0.0 ? (dc / enc) * (dc / enc) : 0.0;
    total += 1.0 - iou + dist;

    // d(inter)/d(ps), d(inter)/d(pe)
    double di_s = 0.0, di_e = 0.0;
    if (inter > 0.0) {
      if (ps > gs) di_s = -1.0;
      if (pe < ge) di_e = 1.0;
    }
    double du_s = -1.0 - di_s, du_e = 1.0 - di_e;
    double diou_s = 0.0, diou_e = 0.0;
    if (uni > 0.0) {
      diou_s = (di_s * uni - inter * du_s) / (uni * uni);
      diou_e = (di_e * uni - inter * du_e) / (uni * uni);
    }
    double denc_s = ps < gs ? -1.0 : 0.0;
    double denc_e = pe > ge ? 1.0 : 0.0;
    double dd_s = 0.0, dd_e = 0.0;
    if (enc > 0.0) {
      // dist = dc^2 / enc^2 ; d dc / d ps = d dc / d pe = 0.5
      dd_s = (dc / (enc * enc)) - 2.0 * dc * dc * denc_s / (enc * enc * enc);
      dd_e = (dc / (enc * enc)) - 2.0 * dc * dc * denc_e / (enc * enc * enc);
    }
    g(i, 0) = -diou_s + dd_s;
    g(i, 1) = -diou_e + dd_e;
  }
  return detail::make(Matrix::Constant(1, 1, total), {pred}, [pred, g](Node& self) {
    pred.node()->accumulate(g * self.grad(0, 0));
  });
}

// Value-only DIoU for one pair of segments.
inline double diou_loss(double ps, double pe, double gs, double ge) {
  Matrix gt(1, 2);
  gt << gs, ge;
  Matrix p(1, 2);
  p << ps, pe;
  return diou_loss_sum(constant(p), gt).item();
}

}  // namespace mmtal::ad
