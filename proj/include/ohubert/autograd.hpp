#pragma once

// Reverse-mode autodiff over dense matrices. A Graph is a tape of nodes built
// per training step; backward() walks it in reverse creation order, so
// gradient accumulation order is fixed and runs are reproducible.

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <numbers>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace ohubert {

template <typename Real>
using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// A named parameter tensor with its gradient and Adam moments.
template <typename Real>
struct Param {
  std::string name;
  Mat<Real> value;
  Mat<Real> grad;
  Mat<Real> adam_m;
  Mat<Real> adam_v;

  void init_zero(Eigen::Index rows, Eigen::Index cols) {
    value = Mat<Real>::Zero(rows, cols);
    reset_state();
  }
  void reset_state() {
    grad = Mat<Real>::Zero(value.rows(), value.cols());
    adam_m = Mat<Real>::Zero(value.rows(), value.cols());
    adam_v = Mat<Real>::Zero(value.rows(), value.cols());
  }
  void zero_grad() { grad.setZero(); }
};

template <typename Real>
class Graph;

template <typename Real>
struct Var {
  Graph<Real>* g = nullptr;
  int idx = -1;

  const Mat<Real>& value() const { return g->node(idx).value; }
  const Mat<Real>& grad() const { return g->node(idx).grad; }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  Real scalar() const { return value()(0, 0); }
};

template <typename Real>
class Graph {
 public:
  struct Node {
    Mat<Real> value;
    Mat<Real> grad;  // empty until first accumulation
    std::function<void(Graph&, int)> backward;
    bool needs_grad = false;
  };

  Graph() { nodes_.reserve(1024); }

  Node& node(int i) { return nodes_[i]; }
  const Node& node(int i) const { return nodes_[i]; }
  size_t size() const { return nodes_.size(); }

  Var<Real> input(Mat<Real> v) {
    return make(std::move(v), false, nullptr);
  }

  // Leaf backed by an external parameter; one node per parameter per graph.
  Var<Real> param(Param<Real>& p) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return {this, it->second};
    Param<Real>* pp = &p;
    Var<Real> v = make(p.value, true, [pp](Graph& g, int self) {
      pp->grad += g.node(self).grad;
    });
    param_nodes_[&p] = v.idx;
    return v;
  }

  Var<Real> make(Mat<Real> value, bool needs_grad,
                 std::function<void(Graph&, int)> backward) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
  }

  // Accumulate into a node's gradient buffer, allocating it on first touch.
  template <typename Expr>
  void accum(int idx, const Expr& e) {
    Node& n = nodes_[idx];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0) n.grad = Mat<Real>::Zero(n.value.rows(), n.value.cols());
    n.grad += e;
  }

  void backward(Var<Real> out) {
    if (out.rows() != 1 || out.cols() != 1) {
      throw std::invalid_argument("backward: output must be a scalar");
    }
    Node& o = nodes_[out.idx];
    if (o.grad.size() == 0) o.grad = Mat<Real>::Zero(1, 1);
    o.grad(0, 0) += Real(1);
    for (int i = out.idx; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.needs_grad && n.grad.size() != 0 && n.backward) n.backward(*this, i);
    }
  }

 private:
  std::vector<Node> nodes_;
  std::unordered_map<const void*, int> param_nodes_;
};

// ---------------------------------------------------------------------------
// Ops. Each returns a new node; backward closures capture only indices and
// whatever constants the derivative needs.

namespace ag {

template <typename Real>
bool either_grad(const Var<Real>& a, const Var<Real>& b) {
  return a.g->node(a.idx).needs_grad || b.g->node(b.idx).needs_grad;
}

template <typename Real>
Var<Real> matmul(Var<Real> a, Var<Real> b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: shape mismatch");
  Graph<Real>& g = *a.g;
  Mat<Real> v = a.value() * b.value();
  const int ai = a.idx, bi = b.idx;
  return g.make(std::move(v), either_grad(a, b), [ai, bi](Graph<Real>& g, int self) {
    const Mat<Real>& go = g.node(self).grad;
    g.accum(ai, go * g.node(bi).value.transpose());
    g.accum(bi, g.node(ai).value.transpose() * go);
  });
}

// a * b^T
template <typename Real>
Var<Real> matmul_nt(Var<Real> a, Var<Real> b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("matmul_nt: shape mismatch");
  Graph<Real>& g = *a.g;
  Mat<Real> v = a.value() * b.value().transpose();
  const int ai = a.idx, bi = b.idx;
  return g.make(std::move(v), either_grad(a, b), [ai, bi](Graph<Real>& g, int self) {
    const Mat<Real>& go = g.node(self).grad;
    g.accum(ai, go * g.node(bi).value);
    g.accum(bi, go.transpose() * g.node(ai).value);
  });
}

template <typename Real>
Var<Real> add(Var<Real> a, Var<Real> b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument("add: shape mismatch");
  }
  Graph<Real>& g = *a.g;
  const int ai = a.idx, bi = b.idx;
  return g.make(a.value() + b.value(), either_grad(a, b),
                [ai, bi](Graph<Real>& g, int self) {
                  g.accum(ai, g.node(self).grad);
                  g.accum(bi, g.node(self).grad);
                });
}

template <typename Real>
Var<Real> sub(Var<Real> a, Var<Real> b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument("sub: shape mismatch");
  }
  Graph<Real>& g = *a.g;
  const int ai = a.idx, bi = b.idx;
  return g.make(a.value() - b.value(), either_grad(a, b),
                [ai, bi](Graph<Real>& g, int self) {
                  g.accum(ai, g.node(self).grad);
                  g.accum(bi, -g.node(self).grad);
                });
}

template <typename Real>
Var<Real> mul(Var<Real> a, Var<Real> b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument("mul: shape mismatch");
  }
  Graph<Real>& g = *a.g;
  const int ai = a.idx, bi = b.idx;
  return g.make(a.value().cwiseProduct(b.value()), either_grad(a, b),
                [ai, bi](Graph<Real>& g, int self) {
                  const Mat<Real>& go = g.node(self).grad;
                  g.accum(ai, go.cwiseProduct(g.node(bi).value));
                  g.accum(bi, go.cwiseProduct(g.node(ai).value));
                });
}

template <typename Real>
Var<Real> scale(Var<Real> a, Real c) {
  Graph<Real>& g = *a.g;
  const int ai = a.idx;
  return g.make(a.value() * c, g.node(a.idx).needs_grad,
                [ai, c](Graph<Real>& g, int self) {
                  g.accum(ai, g.node(self).grad * c);
                });
}

template <typename Real>
Var<Real> add_const(Var<Real> a, const Mat<Real>& c) {
  if (a.rows() != c.rows() || a.cols() != c.cols()) {
    throw std::invalid_argument("add_const: shape mismatch");
  }
  Graph<Real>& g = *a.g;
  const int ai = a.idx;
  return g.make(a.value() + c, g.node(a.idx).needs_grad,
                [ai](Graph<Real>& g, int self) { g.accum(ai, g.node(self).grad); });
}

// Broadcast a 1 x cols row vector over every row of a.
template <typename Real>
Var<Real> add_rowvec(Var<Real> a, Var<Real> v) {
  if (v.rows() != 1 || v.cols() != a.cols()) {
    throw std::invalid_argument("add_rowvec: shape mismatch");
  }
  Graph<Real>& g = *a.g;
  Mat<Real> out = a.value();
  out.rowwise() += v.value().row(0);
  const int ai = a.idx, vi = v.idx;
  return g.make(std::move(out), either_grad(a, v), [ai, vi](Graph<Real>& g, int self) {
    const Mat<Real>& go = g.node(self).grad;
    g.accum(ai, go);
    g.accum(vi, go.colwise().sum());
  });
}

template <typename Real>
Var<Real> gelu(Var<Real> a) {
  Graph<Real>& g = *a.g;
  const Mat<Real>& x = a.value();
  Mat<Real> out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double xv = static_cast<double>(x.data()[i]);
    out.data()[i] = static_cast<Real>(xv * 0.5 * (1.0 + std::erf(xv / std::numbers::sqrt2)));
  }
  const int ai = a.idx;
  return g.make(std::move(out), g.node(a.idx).needs_grad,
                [ai](Graph<Real>& g, int self) {
                  const Mat<Real>& x = g.node(ai).value;
                  const Mat<Real>& go = g.node(self).grad;
                  Mat<Real> dx(x.rows(), x.cols());
                  for (Eigen::Index i = 0; i < x.size(); ++i) {
                    const double xv = static_cast<double>(x.data()[i]);
                    const double cdf = 0.5 * (1.0 + std::erf(xv / std::numbers::sqrt2));
                    const double pdf =
                        std::exp(-0.5 * xv * xv) / std::sqrt(2.0 * std::numbers::pi);
                    dx.data()[i] = static_cast<Real>(cdf + xv * pdf);
                  }
                  g.accum(ai, go.cwiseProduct(dx));
                });
}

// Row-wise layer normalization with learnable gain and bias (1 x d each).
template <typename Real>
Var<Real> layer_norm(Var<Real> a, Var<Real> gamma, Var<Real> beta,
                     Real eps = Real(1e-5)) {
  Graph<Real>& g = *a.g;
  const Mat<Real>& x = a.value();
  const Eigen::Index R = x.rows(), D = x.cols();
  Mat<Real> xhat(R, D), out(R, D);
  Mat<Real> inv_sigma(R, 1);
  for (Eigen::Index r = 0; r < R; ++r) {
    const Real mu = x.row(r).mean();
    const Real var = (x.row(r).array() - mu).square().sum() / Real(D);
    const Real is = Real(1) / std::sqrt(var + eps);
    inv_sigma(r, 0) = is;
    xhat.row(r) = (x.row(r).array() - mu) * is;
    out.row(r) = xhat.row(r).cwiseProduct(gamma.value().row(0)) + beta.value().row(0);
  }
  const int ai = a.idx, gi = gamma.idx, bi = beta.idx;
  const bool ng = g.node(a.idx).needs_grad || g.node(gamma.idx).needs_grad ||
                  g.node(beta.idx).needs_grad;
  return g.make(std::move(out), ng,
                [ai, gi, bi, xhat, inv_sigma](Graph<Real>& g, int self) {
                  const Mat<Real>& go = g.node(self).grad;
                  const Mat<Real>& gam = g.node(gi).value;
                  const Eigen::Index R = go.rows(), D = go.cols();
                  g.accum(gi, (go.cwiseProduct(xhat)).colwise().sum());
                  g.accum(bi, go.colwise().sum());
                  if (!g.node(ai).needs_grad) return;
                  Mat<Real> gx(R, D);
                  for (Eigen::Index r = 0; r < R; ++r) {
                    const auto gy = go.row(r).cwiseProduct(gam.row(0));
                    const Real m1 = gy.mean();
                    const Real m2 = gy.cwiseProduct(xhat.row(r)).mean();
                    gx.row(r) =
                        (gy.array() - m1 - xhat.row(r).array() * m2) * inv_sigma(r, 0);
                  }
                  g.accum(ai, gx);
                });
}

template <typename Real>
Var<Real> softmax_rows(Var<Real> a) {
  Graph<Real>& g = *a.g;
  const Mat<Real>& x = a.value();
  Mat<Real> y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const Real mx = x.row(r).maxCoeff();
    y.row(r) = (x.row(r).array() - mx).exp();
    y.row(r) /= y.row(r).sum();
  }
  const int ai = a.idx;
  return g.make(std::move(y), g.node(a.idx).needs_grad,
                [ai](Graph<Real>& g, int self) {
                  const Mat<Real>& y = g.node(self).value;
                  const Mat<Real>& go = g.node(self).grad;
                  Mat<Real> gx(y.rows(), y.cols());
                  for (Eigen::Index r = 0; r < y.rows(); ++r) {
                    const Real dot = go.row(r).dot(y.row(r));
                    gx.row(r) = y.row(r).cwiseProduct(go.row(r).array() - dot);
                  }
                  g.accum(ai, gx);
                });
}

template <typename Real>
Var<Real> log_softmax_rows(Var<Real> a) {
  Graph<Real>& g = *a.g;
  const Mat<Real>& x = a.value();
  Mat<Real> y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const Real mx = x.row(r).maxCoeff();
    const Real lse = std::log((x.row(r).array() - mx).exp().sum()) + mx;
    y.row(r) = x.row(r).array() - lse;
  }
  const int ai = a.idx;
  return g.make(std::move(y), g.node(a.idx).needs_grad,
                [ai](Graph<Real>& g, int self) {
                  const Mat<Real>& y = g.node(self).value;
                  const Mat<Real>& go = g.node(self).grad;
                  Mat<Real> gx(y.rows(), y.cols());
                  for (Eigen::Index r = 0; r < y.rows(); ++r) {
                    const Real gsum = go.row(r).sum();
                    gx.row(r) = go.row(r) - (y.row(r).array().exp() * gsum).matrix();
                  }
                  g.accum(ai, gx);
                });
}

// Mean negative log-likelihood: -(1/R) sum_r logp(r, labels[r]).
template <typename Real>
Var<Real> nll_rows(Var<Real> logp, std::vector<int> labels) {
  if (static_cast<Eigen::Index>(labels.size()) != logp.rows()) {
    throw std::invalid_argument("nll_rows: label count mismatch");
  }
  Graph<Real>& g = *logp.g;
  Real acc = 0;
  for (Eigen::Index r = 0; r < logp.rows(); ++r) {
    if (labels[r] < 0 || labels[r] >= logp.cols()) {
      throw std::invalid_argument("nll_rows: label out of range");
    }
    acc -= logp.value()(r, labels[r]);
  }
  Mat<Real> v(1, 1);
  v(0, 0) = acc / static_cast<Real>(logp.rows());
  const int ai = logp.idx;
  return g.make(std::move(v), g.node(logp.idx).needs_grad,
                [ai, labels = std::move(labels)](Graph<Real>& g, int self) {
                  const Real go = g.node(self).grad(0, 0);
                  const Real r_inv = Real(1) / static_cast<Real>(labels.size());
                  Mat<Real> gx = Mat<Real>::Zero(g.node(ai).value.rows(),
                                                 g.node(ai).value.cols());
                  for (size_t r = 0; r < labels.size(); ++r) {
                    gx(static_cast<Eigen::Index>(r), labels[r]) = -go * r_inv;
                  }
                  g.accum(ai, gx);
                });
}

template <typename Real>
Var<Real> slice_rows(Var<Real> a, Eigen::Index start, Eigen::Index len) {
  if (start < 0 || len < 0 || start + len > a.rows()) {
    throw std::invalid_argument("slice_rows: out of range");
  }
  Graph<Real>& g = *a.g;
  const int ai = a.idx;
  return g.make(a.value().middleRows(start, len), g.node(a.idx).needs_grad,
                [ai, start, len](Graph<Real>& g, int self) {
                  Graph<Real>::Node& p = g.node(ai);
                  if (!p.needs_grad) return;
                  if (p.grad.size() == 0) {
                    p.grad = Mat<Real>::Zero(p.value.rows(), p.value.cols());
                  }
                  p.grad.middleRows(start, len) += g.node(self).grad;
                });
}

template <typename Real>
Var<Real> slice_cols(Var<Real> a, Eigen::Index start, Eigen::Index len) {
  if (start < 0 || len < 0 || start + len > a.cols()) {
    throw std::invalid_argument("slice_cols: out of range");
  }
  Graph<Real>& g = *a.g;
  const int ai = a.idx;
  return g.make(a.value().middleCols(start, len), g.node(a.idx).needs_grad,
                [ai, start, len](Graph<Real>& g, int self) {
                  Graph<Real>::Node& p = g.node(ai);
                  if (!p.needs_grad) return;
                  if (p.grad.size() == 0) {
                    p.grad = Mat<Real>::Zero(p.value.rows(), p.value.cols());
                  }
                  p.grad.middleCols(start, len) += g.node(self).grad;
                });
}

template <typename Real>
Var<Real> row(Var<Real> a, Eigen::Index r) {
  return slice_rows(a, r, 1);
}

template <typename Real>
Var<Real> vstack(const std::vector<Var<Real>>& parts) {
  if (parts.empty()) throw std::invalid_argument("vstack: no parts");
  Graph<Real>& g = *parts[0].g;
  Eigen::Index rows = 0;
  const Eigen::Index cols = parts[0].cols();
  bool ng = false;
  std::vector<int> idxs;
  std::vector<Eigen::Index> lens;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw std::invalid_argument("vstack: column mismatch");
    rows += p.rows();
    ng = ng || g.node(p.idx).needs_grad;
    idxs.push_back(p.idx);
    lens.push_back(p.rows());
  }
  Mat<Real> v(rows, cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    v.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return g.make(std::move(v), ng,
                [idxs = std::move(idxs), lens = std::move(lens)](Graph<Real>& g, int self) {
                  const Mat<Real>& go = g.node(self).grad;
                  Eigen::Index at = 0;
                  for (size_t i = 0; i < idxs.size(); ++i) {
                    g.accum(idxs[i], go.middleRows(at, lens[i]));
                    at += lens[i];
                  }
                });
}

template <typename Real>
Var<Real> hstack(const std::vector<Var<Real>>& parts) {
  if (parts.empty()) throw std::invalid_argument("hstack: no parts");
  Graph<Real>& g = *parts[0].g;
  Eigen::Index cols = 0;
  const Eigen::Index rows = parts[0].rows();
  bool ng = false;
  std::vector<int> idxs;
  std::vector<Eigen::Index> lens;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw std::invalid_argument("hstack: row mismatch");
    cols += p.cols();
    ng = ng || g.node(p.idx).needs_grad;
    idxs.push_back(p.idx);
    lens.push_back(p.cols());
  }
  Mat<Real> v(rows, cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    v.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return g.make(std::move(v), ng,
                [idxs = std::move(idxs), lens = std::move(lens)](Graph<Real>& g, int self) {
                  const Mat<Real>& go = g.node(self).grad;
                  Eigen::Index at = 0;
                  for (size_t i = 0; i < idxs.size(); ++i) {
                    g.accum(idxs[i], go.middleCols(at, lens[i]));
                    at += lens[i];
                  }
                });
}

template <typename Real>
Var<Real> concat_rows(Var<Real> a, Var<Real> b) {
  return vstack<Real>({a, b});
}

template <typename Real>
Var<Real> concat_cols(Var<Real> a, Var<Real> b) {
  return hstack<Real>({a, b});
}

template <typename Real>
Var<Real> gather_rows(Var<Real> a, std::vector<int> rows_idx) {
  Graph<Real>& g = *a.g;
  Mat<Real> v(static_cast<Eigen::Index>(rows_idx.size()), a.cols());
  for (size_t i = 0; i < rows_idx.size(); ++i) {
    if (rows_idx[i] < 0 || rows_idx[i] >= a.rows()) {
      throw std::invalid_argument("gather_rows: index out of range");
    }
    v.row(static_cast<Eigen::Index>(i)) = a.value().row(rows_idx[i]);
  }
  const int ai = a.idx;
  return g.make(std::move(v), g.node(a.idx).needs_grad,
                [ai, rows_idx = std::move(rows_idx)](Graph<Real>& g, int self) {
                  const Mat<Real>& go = g.node(self).grad;
                  Graph<Real>::Node& p = g.node(ai);
                  if (!p.needs_grad) return;
                  if (p.grad.size() == 0) {
                    p.grad = Mat<Real>::Zero(p.value.rows(), p.value.cols());
                  }
                  for (size_t i = 0; i < rows_idx.size(); ++i) {
                    p.grad.row(rows_idx[i]) += go.row(static_cast<Eigen::Index>(i));
                  }
                });
}

// n x n -> n x (n-1), removing the diagonal entry from each row.
template <typename Real>
Var<Real> drop_diagonal(Var<Real> a) {
  const Eigen::Index n = a.rows();
  if (a.cols() != n) throw std::invalid_argument("drop_diagonal: matrix not square");
  Graph<Real>& g = *a.g;
  Mat<Real> v(n, n - 1);
  for (Eigen::Index r = 0; r < n; ++r) {
    Eigen::Index w = 0;
    for (Eigen::Index c = 0; c < n; ++c) {
      if (c != r) v(r, w++) = a.value()(r, c);
    }
  }
  const int ai = a.idx;
  return g.make(std::move(v), g.node(a.idx).needs_grad,
                [ai, n](Graph<Real>& g, int self) {
                  const Mat<Real>& go = g.node(self).grad;
                  Mat<Real> gx = Mat<Real>::Zero(n, n);
                  for (Eigen::Index r = 0; r < n; ++r) {
                    Eigen::Index w = 0;
                    for (Eigen::Index c = 0; c < n; ++c) {
                      if (c != r) gx(r, c) = go(r, w++);
                    }
                  }
                  g.accum(ai, gx);
                });
}

template <typename Real>
Var<Real> mean_rows(Var<Real> a) {
  Graph<Real>& g = *a.g;
  Mat<Real> v = a.value().colwise().mean();
  const int ai = a.idx;
  return g.make(std::move(v), g.node(a.idx).needs_grad,
                [ai](Graph<Real>& g, int self) {
                  const Mat<Real>& go = g.node(self).grad;
                  const Eigen::Index R = g.node(ai).value.rows();
                  g.accum(ai, (Mat<Real>::Ones(R, 1) * go.row(0)) / static_cast<Real>(R));
                });
}

template <typename Real>
Var<Real> mean_all(Var<Real> a) {
  Graph<Real>& g = *a.g;
  Mat<Real> v(1, 1);
  v(0, 0) = a.value().mean();
  const int ai = a.idx;
  return g.make(std::move(v), g.node(a.idx).needs_grad,
                [ai](Graph<Real>& g, int self) {
                  const Real go = g.node(self).grad(0, 0);
                  const auto& pv = g.node(ai).value;
                  g.accum(ai, Mat<Real>::Constant(pv.rows(), pv.cols(),
                                                  go / static_cast<Real>(pv.size())));
                });
}

// Rows scaled to unit L2 norm; norms below `floor` are clamped.
template <typename Real>
Var<Real> l2_normalize_rows(Var<Real> a, Real floor = Real(1e-8)) {
  Graph<Real>& g = *a.g;
  const Mat<Real>& x = a.value();
  Mat<Real> y(x.rows(), x.cols());
  Mat<Real> norms(x.rows(), 1);
  std::vector<char> clamped(static_cast<size_t>(x.rows()), 0);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    Real n = x.row(r).norm();
    if (n < floor) {
      n = floor;
      clamped[static_cast<size_t>(r)] = 1;
    }
    norms(r, 0) = n;
    y.row(r) = x.row(r) / n;
  }
  const int ai = a.idx;
  return g.make(std::move(y), g.node(a.idx).needs_grad,
                [ai, norms, clamped = std::move(clamped)](Graph<Real>& g, int self) {
                  const Mat<Real>& go = g.node(self).grad;
                  const Mat<Real>& x = g.node(ai).value;
                  Mat<Real> gx(x.rows(), x.cols());
                  for (Eigen::Index r = 0; r < x.rows(); ++r) {
                    const Real n = norms(r, 0);
                    if (clamped[static_cast<size_t>(r)]) {
                      gx.row(r) = go.row(r) / n;
                    } else {
                      const Real dot = go.row(r).dot(x.row(r));
                      gx.row(r) = go.row(r) / n - x.row(r) * (dot / (n * n * n));
                    }
                  }
                  g.accum(ai, gx);
                });
}

// Elementwise 1 / max(eps, x); the clamped branch has zero gradient.
template <typename Real>
Var<Real> reciprocal_clamped(Var<Real> a, Real eps) {
  Graph<Real>& g = *a.g;
  const Mat<Real>& x = a.value();
  Mat<Real> y = x.cwiseMax(eps).cwiseInverse();
  const int ai = a.idx;
  return g.make(std::move(y), g.node(a.idx).needs_grad,
                [ai, eps](Graph<Real>& g, int self) {
                  const Mat<Real>& x = g.node(ai).value;
                  const Mat<Real>& go = g.node(self).grad;
                  Mat<Real> gx(x.rows(), x.cols());
                  for (Eigen::Index i = 0; i < x.size(); ++i) {
                    const Real xv = x.data()[i];
                    gx.data()[i] = xv > eps ? -go.data()[i] / (xv * xv) : Real(0);
                  }
                  g.accum(ai, gx);
                });
}

// Replace rows flagged in `mask` by the broadcast 1 x d row m. The replaced
// rows contribute no gradient to u.
template <typename Real>
Var<Real> mask_replace(Var<Real> u, const std::vector<char>& mask, Var<Real> m) {
  if (static_cast<Eigen::Index>(mask.size()) != u.rows() || m.rows() != 1 ||
      m.cols() != u.cols()) {
    throw std::invalid_argument("mask_replace: shape mismatch");
  }
  Graph<Real>& g = *u.g;
  Mat<Real> v = u.value();
  for (size_t r = 0; r < mask.size(); ++r) {
    if (mask[r]) v.row(static_cast<Eigen::Index>(r)) = m.value().row(0);
  }
  const int ui = u.idx, mi = m.idx;
  return g.make(std::move(v), either_grad(u, m),
                [ui, mi, mask](Graph<Real>& g, int self) {
                  const Mat<Real>& go = g.node(self).grad;
                  Mat<Real> gu = go;
                  Mat<Real> gm = Mat<Real>::Zero(1, go.cols());
                  for (size_t r = 0; r < mask.size(); ++r) {
                    if (mask[r]) {
                      gm.row(0) += go.row(static_cast<Eigen::Index>(r));
                      gu.row(static_cast<Eigen::Index>(r)).setZero();
                    }
                  }
                  g.accum(ui, gu);
                  g.accum(mi, gm);
                });
}

// (T x d) -> (floor(T/k) x k*d): groups of k consecutive rows become one row.
// With row-major storage this is how a kernel == stride 1-D convolution frames
// its input; trailing rows that do not fill a group are dropped.
template <typename Real>
Var<Real> frame_stack(Var<Real> a, Eigen::Index k) {
  if (k < 1) throw std::invalid_argument("frame_stack: k must be >= 1");
  Graph<Real>& g = *a.g;
  const Eigen::Index T = a.rows(), d = a.cols();
  const Eigen::Index T_out = T / k;
  if (T_out < 1) throw std::invalid_argument("frame_stack: input shorter than k");
  Mat<Real> v(T_out, k * d);
  for (Eigen::Index t = 0; t < T_out; ++t) {
    for (Eigen::Index j = 0; j < k; ++j) {
      v.block(t, j * d, 1, d) = a.value().row(t * k + j);
    }
  }
  const int ai = a.idx;
  return g.make(std::move(v), g.node(a.idx).needs_grad,
                [ai, k, d, T_out](Graph<Real>& g, int self) {
                  const Mat<Real>& go = g.node(self).grad;
                  Graph<Real>::Node& p = g.node(ai);
                  if (!p.needs_grad) return;
                  if (p.grad.size() == 0) {
                    p.grad = Mat<Real>::Zero(p.value.rows(), p.value.cols());
                  }
                  for (Eigen::Index t = 0; t < T_out; ++t) {
                    for (Eigen::Index j = 0; j < k; ++j) {
                      p.grad.row(t * k + j) += go.block(t, j * d, 1, d);
                    }
                  }
                });
}

}  // namespace ag

}  // namespace ohubert
