#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major matrices.
//
// A Graph is a tape: every op appends a node holding its value and a closure that pushes the
// node's gradient to its inputs. Backward walks the tape in reverse creation order, which is a
// valid topological order by construction. Parameters live in a ParameterStore outside the
// graph; a graph copies their values into leaf nodes and flushes leaf gradients back on demand.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "t6d/errors.hpp"

namespace t6d::ag {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

struct Tensor {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(int r, int c, double fill = 0.0) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, fill) {}

  std::size_t size() const { return data.size(); }
  double& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
  MapMat mat() { return MapMat(data.data(), rows, cols); }
  ConstMapMat mat() const { return ConstMapMat(data.data(), rows, cols); }
  bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }
  bool operator==(const Tensor&) const = default;
};

// ---------------------------------------------------------------------------

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
};

/// Named parameter tensors with gradient buffers of identical shape, in registration order.
class ParameterStore {
 public:
  int add(const std::string& name, Tensor value) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name " + name);
    Tensor g(value.rows, value.cols, 0.0);
    params_.push_back({name, std::move(value), std::move(g)});
    index_[name] = static_cast<int>(params_.size()) - 1;
    return static_cast<int>(params_.size()) - 1;
  }

  int index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter " + name);
    return it->second;
  }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  Parameter& operator[](int i) { return params_.at(static_cast<std::size_t>(i)); }
  const Parameter& operator[](int i) const { return params_.at(static_cast<std::size_t>(i)); }
  Parameter& operator[](const std::string& name) { return (*this)[index_of(name)]; }
  const Parameter& operator[](const std::string& name) const { return (*this)[index_of(name)]; }

  std::size_t size() const { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  std::size_t num_scalars() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) std::fill(p.grad.data.begin(), p.grad.data.end(), 0.0);
  }

  double grad_norm() const {
    double s = 0.0;
    for (const auto& p : params_)
      for (double g : p.grad.data) s += g * g;
    return std::sqrt(s);
  }

 private:
  std::vector<Parameter> params_;
  std::map<std::string, int> index_;
};

// ---------------------------------------------------------------------------

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, int)>;

  Var constant(Tensor value) { return push(std::move(value), false, nullptr); }

  /// A leaf whose gradient is tracked (e.g. for gradient checks of inputs).
  Var variable(Tensor value) { return push(std::move(value), true, nullptr); }

  /// Leaf bound to parameter `index` of `store`; repeated requests reuse the same node.
  Var param(const ParameterStore& store, int index) {
    auto it = param_nodes_.find(index);
    if (it != param_nodes_.end()) return {it->second};
    Var v = push(store[index].value, trainable(index), nullptr);
    param_nodes_[index] = v.id;
    return v;
  }
  Var param(const ParameterStore& store, const std::string& name) { return param(store, store.index_of(name)); }

  /// Parameters for which `mask` is false are treated as constants (no gradient).
  void set_trainable_mask(std::vector<bool> mask) { trainable_mask_ = std::move(mask); }

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  /// Gradient of the node, allocated as zeros on first access.
  Tensor& grad(Var v) { return grad(v.id); }
  Tensor& grad(int id) {
    Node& n = nodes_[id];
    if (n.grad.size() != n.value.size() || !n.grad.same_shape(n.value)) n.grad = Tensor(n.value.rows, n.value.cols);
    return n.grad;
  }
  bool has_grad(int id) const { return nodes_[id].grad.size() == nodes_[id].value.size() && nodes_[id].value.size(); }

  std::size_t num_nodes() const { return nodes_.size(); }

  Var push(Tensor value, bool requires_grad, BackwardFn fn) {
    nodes_.push_back({std::move(value), Tensor{}, requires_grad, std::move(fn)});
    return {static_cast<int>(nodes_.size()) - 1};
  }

  /// Seeds d(loss)/d(var) for each listed var and propagates to every leaf.
  void backward(const std::vector<std::pair<Var, Tensor>>& seeds) {
    if (nodes_.empty()) throw GraphError("backward called on an empty graph (no forward recorded)");
    for (const auto& [v, g] : seeds) {
      if (!v.valid() || v.id >= static_cast<int>(nodes_.size())) throw GraphError("seed refers to an unknown node");
      if (!g.same_shape(nodes_[v.id].value)) throw ShapeError("seed gradient shape mismatch");
      Tensor& dst = grad(v);
      for (std::size_t i = 0; i < g.size(); ++i) dst.data[i] += g.data[i];
    }
    for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
      Node& n = nodes_[id];
      if (!n.requires_grad || !n.backward || !has_grad(id)) continue;
      n.backward(*this, id);
    }
    backward_done_ = true;
  }

  /// Adds leaf gradients into the store's gradient buffers.
  void accumulate_param_grads(ParameterStore& store) const {
    if (!backward_done_) throw GraphError("no backward pass recorded");
    for (auto [index, id] : param_nodes_) {
      if (!has_grad(id)) continue;
      auto& dst = store[index].grad.data;
      const auto& src = nodes_[id].grad.data;
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
    }
  }

  /// Gradient of a parameter's leaf node (zeros when it did not take part).
  Tensor param_grad(const ParameterStore& store, int index) const {
    auto it = param_nodes_.find(index);
    if (it == param_nodes_.end() || !has_grad(it->second)) return Tensor(store[index].value.rows, store[index].value.cols);
    return nodes_[it->second].grad;
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  bool trainable(int index) const {
    return trainable_mask_.empty() || (static_cast<std::size_t>(index) < trainable_mask_.size() && trainable_mask_[index]);
  }

  std::vector<Node> nodes_;
  std::map<int, int> param_nodes_;
  std::vector<bool> trainable_mask_;
  bool backward_done_ = false;
};

// ---------------------------------------------------------------------------
// Ops

namespace detail {

inline bool any_grad(Graph& g, std::initializer_list<Var> vs) {
  for (Var v : vs)
    if (g.requires_grad(v)) return true;
  return false;
}

inline void expect(bool cond, const char* what) {
  if (!cond) throw ShapeError(what);
}

}  // namespace detail

inline Var matmul(Graph& g, Var a, Var b) {
  const Tensor& A = g.value(a);
  const Tensor& B = g.value(b);
  detail::expect(A.cols == B.rows, "matmul: inner dimensions differ");
  Tensor out(A.rows, B.cols);
  out.mat().noalias() = A.mat() * B.mat();
  return g.push(std::move(out), detail::any_grad(g, {a, b}), [a, b](Graph& g, int self) {
    const auto dy = g.grad(self).mat();
    if (g.requires_grad(a)) g.grad(a).mat().noalias() += dy * g.value(b).mat().transpose();
    if (g.requires_grad(b)) g.grad(b).mat().noalias() += g.value(a).mat().transpose() * dy;
  });
}

/// a * b^T
inline Var matmul_nt(Graph& g, Var a, Var b) {
  const Tensor& A = g.value(a);
  const Tensor& B = g.value(b);
  detail::expect(A.cols == B.cols, "matmul_nt: inner dimensions differ");
  Tensor out(A.rows, B.rows);
  out.mat().noalias() = A.mat() * B.mat().transpose();
  return g.push(std::move(out), detail::any_grad(g, {a, b}), [a, b](Graph& g, int self) {
    const auto dy = g.grad(self).mat();
    if (g.requires_grad(a)) g.grad(a).mat().noalias() += dy * g.value(b).mat();
    if (g.requires_grad(b)) g.grad(b).mat().noalias() += dy.transpose() * g.value(a).mat();
  });
}

inline Var add(Graph& g, Var a, Var b) {
  const Tensor& A = g.value(a);
  const Tensor& B = g.value(b);
  detail::expect(A.same_shape(B), "add: shape mismatch");
  Tensor out = A;
  out.mat() += B.mat();
  return g.push(std::move(out), detail::any_grad(g, {a, b}), [a, b](Graph& g, int self) {
    const Tensor dy = g.grad(self);
    if (g.requires_grad(a)) g.grad(a).mat() += dy.mat();
    if (g.requires_grad(b)) g.grad(b).mat() += dy.mat();
  });
}

/// x + b with b of shape 1 x cols broadcast over rows.
inline Var add_row(Graph& g, Var x, Var b) {
  const Tensor& X = g.value(x);
  const Tensor& B = g.value(b);
  detail::expect(B.rows == 1 && B.cols == X.cols, "add_row: bias shape mismatch");
  Tensor out = X;
  out.mat().rowwise() += B.mat().row(0);
  return g.push(std::move(out), detail::any_grad(g, {x, b}), [x, b](Graph& g, int self) {
    const Tensor dy = g.grad(self);
    if (g.requires_grad(x)) g.grad(x).mat() += dy.mat();
    if (g.requires_grad(b)) g.grad(b).mat().row(0) += dy.mat().colwise().sum();
  });
}

/// x + b with b of shape rows x 1 broadcast over columns.
inline Var add_col(Graph& g, Var x, Var b) {
  const Tensor& X = g.value(x);
  const Tensor& B = g.value(b);
  detail::expect(B.cols == 1 && B.rows == X.rows, "add_col: bias shape mismatch");
  Tensor out = X;
  out.mat().colwise() += B.mat().col(0);
  return g.push(std::move(out), detail::any_grad(g, {x, b}), [x, b](Graph& g, int self) {
    const Tensor dy = g.grad(self);
    if (g.requires_grad(x)) g.grad(x).mat() += dy.mat();
    if (g.requires_grad(b)) g.grad(b).mat().col(0) += dy.mat().rowwise().sum();
  });
}

inline Var scale(Graph& g, Var x, double s) {
  Tensor out = g.value(x);
  out.mat() *= s;
  return g.push(std::move(out), g.requires_grad(x), [x, s](Graph& g, int self) { g.grad(x).mat() += s * g.grad(self).mat(); });
}

inline Var relu(Graph& g, Var x) {
  Tensor out = g.value(x);
  for (double& v : out.data) v = v > 0.0 ? v : 0.0;
  return g.push(std::move(out), g.requires_grad(x), [x](Graph& g, int self) {
    const Tensor& X = g.value(x);
    const Tensor& dy = g.grad(self);
    Tensor& dx = g.grad(x);
    for (std::size_t i = 0; i < X.size(); ++i)
      if (X.data[i] > 0.0) dx.data[i] += dy.data[i];
  });
}

inline Var sigmoid(Graph& g, Var x) {
  Tensor out = g.value(x);
  for (double& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
  return g.push(std::move(out), g.requires_grad(x), [x](Graph& g, int self) {
    const Tensor y = g.value(Var{self});
    const Tensor& dy = g.grad(self);
    Tensor& dx = g.grad(x);
    for (std::size_t i = 0; i < y.size(); ++i) dx.data[i] += dy.data[i] * y.data[i] * (1.0 - y.data[i]);
  });
}

/// Row-wise softmax.
inline Var softmax_rows(Graph& g, Var x) {
  Tensor out = g.value(x);
  for (int r = 0; r < out.rows; ++r) {
    auto row = out.mat().row(r);
    row.array() -= row.maxCoeff();
    row = row.array().exp().matrix();
    row /= row.sum();
  }
  return g.push(std::move(out), g.requires_grad(x), [x](Graph& g, int self) {
    const Tensor y = g.value(Var{self});
    const Tensor dy = g.grad(self);
    auto dx = g.grad(x).mat();
    for (int r = 0; r < y.rows; ++r) {
      const double dot = y.mat().row(r).dot(dy.mat().row(r));
      dx.row(r).array() += y.mat().row(r).array() * (dy.mat().row(r).array() - dot);
    }
  });
}

/// Layer normalization over each row with learned gain and bias (both 1 x cols).
inline Var layer_norm(Graph& g, Var x, Var gamma, Var beta, double eps = 1e-5) {
  const Tensor& X = g.value(x);
  const Tensor& G = g.value(gamma);
  const Tensor& B = g.value(beta);
  detail::expect(G.rows == 1 && G.cols == X.cols && B.same_shape(G), "layer_norm: parameter shape mismatch");
  const int rows = X.rows, cols = X.cols;
  Tensor out(rows, cols);
  auto xhat = std::make_shared<Tensor>(rows, cols);
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (int r = 0; r < rows; ++r) {
    const auto row = X.mat().row(r);
    const double mean = row.mean();
    const double var = (row.array() - mean).square().mean();
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    xhat->mat().row(r) = (row.array() - mean) * is;
    out.mat().row(r) = xhat->mat().row(r).array() * G.mat().row(0).array() + B.mat().row(0).array();
  }
  return g.push(std::move(out), detail::any_grad(g, {x, gamma, beta}),
                [x, gamma, beta, xhat, inv_std](Graph& g, int self) {
                  const Tensor dy = g.grad(self);
                  const Tensor& G = g.value(gamma);
                  const int rows = dy.rows, cols = dy.cols;
                  if (g.requires_grad(gamma))
                    g.grad(gamma).mat().row(0) += (dy.mat().array() * xhat->mat().array()).matrix().colwise().sum();
                  if (g.requires_grad(beta)) g.grad(beta).mat().row(0) += dy.mat().colwise().sum();
                  if (g.requires_grad(x)) {
                    auto dx = g.grad(x).mat();
                    for (int r = 0; r < rows; ++r) {
                      const Eigen::RowVectorXd dxhat = dy.mat().row(r).array() * G.mat().row(0).array();
                      const double m1 = dxhat.mean();
                      const double m2 = (dxhat.array() * xhat->mat().row(r).array()).mean();
                      dx.row(r).array() +=
                          (*inv_std)[r] * (dxhat.array() - m1 - xhat->mat().row(r).array() * m2);
                    }
                    (void)cols;
                  }
                });
}

inline Var transpose(Graph& g, Var x) {
  const Tensor& X = g.value(x);
  Tensor out(X.cols, X.rows);
  out.mat() = X.mat().transpose();
  return g.push(std::move(out), g.requires_grad(x),
                [x](Graph& g, int self) { g.grad(x).mat() += g.grad(self).mat().transpose(); });
}

inline Var slice_cols(Graph& g, Var x, int start, int len) {
  const Tensor& X = g.value(x);
  detail::expect(start >= 0 && len >= 0 && start + len <= X.cols, "slice_cols: range out of bounds");
  Tensor out(X.rows, len);
  out.mat() = X.mat().middleCols(start, len);
  return g.push(std::move(out), g.requires_grad(x), [x, start, len](Graph& g, int self) {
    g.grad(x).mat().middleCols(start, len) += g.grad(self).mat();
  });
}

inline Var concat_cols(Graph& g, const std::vector<Var>& parts) {
  detail::expect(!parts.empty(), "concat_cols: no inputs");
  const int rows = g.value(parts[0]).rows;
  int cols = 0;
  bool rg = false;
  for (Var p : parts) {
    detail::expect(g.value(p).rows == rows, "concat_cols: row mismatch");
    cols += g.value(p).cols;
    rg = rg || g.requires_grad(p);
  }
  Tensor out(rows, cols);
  int off = 0;
  for (Var p : parts) {
    const Tensor& P = g.value(p);
    out.mat().middleCols(off, P.cols) = P.mat();
    off += P.cols;
  }
  return g.push(std::move(out), rg, [parts](Graph& g, int self) {
    int off = 0;
    const Tensor dy = g.grad(self);
    for (Var p : parts) {
      const int c = g.value(p).cols;
      if (g.requires_grad(p)) g.grad(p).mat() += dy.mat().middleCols(off, c);
      off += c;
    }
  });
}

/// x W + b, with W of shape in x out and b of shape 1 x out.
inline Var linear(Graph& g, Var x, Var w, Var b) { return add_row(g, matmul(g, x, w), b); }

struct ConvGeometry {
  int in_channels = 0;
  int height = 0;
  int width = 0;
  int kernel = 3;
  int stride = 1;
  int pad = 0;

  int out_height() const { return (height + 2 * pad - kernel) / stride + 1; }
  int out_width() const { return (width + 2 * pad - kernel) / stride + 1; }
};

namespace detail {

inline Tensor im2col(const Tensor& x, const ConvGeometry& c) {
  const int oh = c.out_height(), ow = c.out_width();
  Tensor cols(c.in_channels * c.kernel * c.kernel, oh * ow);
  for (int ch = 0; ch < c.in_channels; ++ch)
    for (int ky = 0; ky < c.kernel; ++ky)
      for (int kx = 0; kx < c.kernel; ++kx) {
        const int row = (ch * c.kernel + ky) * c.kernel + kx;
        double* dst = &cols.data[static_cast<std::size_t>(row) * oh * ow];
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * c.stride - c.pad + ky;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * c.stride - c.pad + kx;
            dst[oy * ow + ox] = (iy >= 0 && iy < c.height && ix >= 0 && ix < c.width)
                                    ? x.data[(static_cast<std::size_t>(ch) * c.height + iy) * c.width + ix]
                                    : 0.0;
          }
        }
      }
  return cols;
}

inline void col2im_add(const Tensor& cols, const ConvGeometry& c, Tensor& dx) {
  const int oh = c.out_height(), ow = c.out_width();
  for (int ch = 0; ch < c.in_channels; ++ch)
    for (int ky = 0; ky < c.kernel; ++ky)
      for (int kx = 0; kx < c.kernel; ++kx) {
        const int row = (ch * c.kernel + ky) * c.kernel + kx;
        const double* src = &cols.data[static_cast<std::size_t>(row) * oh * ow];
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * c.stride - c.pad + ky;
          if (iy < 0 || iy >= c.height) continue;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * c.stride - c.pad + kx;
            if (ix < 0 || ix >= c.width) continue;
            dx.data[(static_cast<std::size_t>(ch) * c.height + iy) * c.width + ix] += src[oy * ow + ox];
          }
        }
      }
}

}  // namespace detail

/// 2D convolution. `x` is channels x (height*width) row-major; `w` is out x (in*k*k); `b` is out x 1.
/// The result is out x (out_height*out_width).
inline Var conv2d(Graph& g, Var x, Var w, Var b, const ConvGeometry& c) {
  const Tensor& X = g.value(x);
  const Tensor& W = g.value(w);
  detail::expect(X.rows == c.in_channels && X.cols == c.height * c.width, "conv2d: input shape mismatch");
  detail::expect(W.cols == c.in_channels * c.kernel * c.kernel, "conv2d: weight shape mismatch");
  detail::expect(g.value(b).rows == W.rows && g.value(b).cols == 1, "conv2d: bias shape mismatch");
  auto cols = std::make_shared<Tensor>(detail::im2col(X, c));
  Tensor out(W.rows, cols->cols);
  out.mat().noalias() = W.mat() * cols->mat();
  out.mat().colwise() += g.value(b).mat().col(0);
  return g.push(std::move(out), detail::any_grad(g, {x, w, b}), [x, w, b, c, cols](Graph& g, int self) {
    const Tensor dy = g.grad(self);
    if (g.requires_grad(w)) g.grad(w).mat().noalias() += dy.mat() * cols->mat().transpose();
    if (g.requires_grad(b)) g.grad(b).mat().col(0) += dy.mat().rowwise().sum();
    if (g.requires_grad(x)) {
      Tensor dcols(cols->rows, cols->cols);
      dcols.mat().noalias() = g.value(w).mat().transpose() * dy.mat();
      detail::col2im_add(dcols, c, g.grad(x));
    }
  });
}

}  // namespace t6d::ag
