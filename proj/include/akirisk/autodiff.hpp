#pragma once

// Tape-based reverse-mode automatic differentiation over dense row-major tensors.
//
// A Graph is an append-only tape: every forward op records its output value, the ids of
// its inputs and a backward closure. Creation order is a topological order, so backward()
// is a single reverse sweep that visits each node once.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "akirisk/error.hpp"
#include "akirisk/tensor.hpp"

namespace akirisk {

class Graph;

struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

class Graph {
 public:
  using Backward = std::function<void(Graph&, std::size_t self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf node. Gradients are tracked iff `t.requires_grad()`.
  Var input(Tensor t) {
    if (!t.all_finite()) fail(Errc::non_finite, "leaf tensor contains NaN/Inf");
    Node node;
    node.op = "leaf";
    node.needs_grad = t.requires_grad();
    node.value = std::move(t);
    nodes_.push_back(std::move(node));
    return Var{this, nodes_.size() - 1};
  }
  Var parameter(Tensor t) { return input(std::move(t.set_requires_grad(true))); }
  Var constant(Tensor t) { return input(std::move(t.set_requires_grad(false))); }

  /// Records an op output. Used by the op functions below and by fused ops elsewhere.
  Var record(std::string_view op, Tensor value, std::initializer_list<Var> inputs, Backward backward) {
    return record(op, std::move(value), std::vector<Var>(inputs), std::move(backward));
  }

  Var record(std::string_view op, Tensor value, const std::vector<Var>& inputs, Backward backward) {
    if (!value.all_finite()) fail(Errc::non_finite, std::string(op) + " produced NaN/Inf");
    Node node;
    node.op = op;
    node.value = std::move(value);
    node.inputs.reserve(inputs.size());
    for (Var v : inputs) {
      if (v.graph != this) fail(Errc::shape_mismatch, std::string(op) + ": input from another graph");
      node.inputs.push_back(v.id);
      node.needs_grad = node.needs_grad || nodes_[v.id].needs_grad;
    }
    if (node.needs_grad) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var{this, nodes_.size() - 1};
  }

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool needs_grad(std::size_t id) const { return nodes_.at(id).needs_grad; }
  bool needs_grad(Var v) const { return needs_grad(v.id); }
  std::string_view op_name(Var v) const { return nodes_.at(v.id).op; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Gradient of the last backward() loss w.r.t. `v`; all zeros when `v` is unreachable.
  Tensor grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    Tensor g(n.value.shape(), 0.0);
    if (!n.grad.empty()) std::copy(n.grad.begin(), n.grad.end(), g.values().begin());
    return g;
  }

  /// Mutable gradient accumulator, valid only inside a backward closure.
  std::span<double> grad_buffer(std::size_t id) { return nodes_[id].grad; }
  std::span<const double> out_grad(std::size_t id) const { return nodes_[id].grad; }
  std::size_t input_id(std::size_t id, std::size_t k) const { return nodes_[id].inputs[k]; }

  void backward(Var loss) {
    if (loss.graph != this) fail(Errc::shape_mismatch, "loss belongs to another graph");
    Node& root = nodes_.at(loss.id);
    if (root.value.size() != 1) fail(Errc::shape_mismatch, "loss must be a scalar, got " + shape_string(root.value.shape()));
    if (root.inputs.empty()) fail(Errc::disconnected_graph, "loss has no inputs");
    for (Node& n : nodes_) {
      if (n.needs_grad)
        n.grad.assign(n.value.size(), 0.0);
      else
        n.grad.clear();
    }
    if (!root.needs_grad) return;
    root.grad[0] = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.needs_grad && n.backward) n.backward(*this, i);
    }
  }

 private:
  struct Node {
    std::string_view op;
    Tensor value;
    std::vector<double> grad;
    std::vector<std::size_t> inputs;
    Backward backward;
    bool needs_grad = false;
  };
  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return graph->value(*this); }

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

inline void require_matrix(const Tensor& t, std::string_view op) {
  if (t.rank() > 2) fail(Errc::shape_mismatch, std::string(op) + " expects rank <= 2, got " + shape_string(t.shape()));
}

inline Graph& graph_of(Var a, Var b) {
  if (a.graph == nullptr || a.graph != b.graph) fail(Errc::shape_mismatch, "operands belong to different graphs");
  return *a.graph;
}

inline double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

template <class F>
Var unary_elementwise(Var x, std::string_view op, F forward_and_derivative) {
  Graph& g = *x.graph;
  const Tensor& in = x.value();
  Tensor out(in.shape());
  std::vector<double> deriv(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    auto [y, dy] = forward_and_derivative(in[i]);
    out[i] = y;
    deriv[i] = dy;
  }
  const std::size_t xi = x.id;
  return g.record(op, std::move(out), {x}, [xi, deriv = std::move(deriv)](Graph& gr, std::size_t self) {
    if (!gr.needs_grad(xi)) return;
    auto go = gr.out_grad(self);
    auto gx = gr.grad_buffer(xi);
    for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * deriv[i];
  });
}

}  // namespace detail

/// (m x k)(k x n), or (m x k)(n x k)^T when `transpose_b`.
inline Var matmul(Var a, Var b, bool transpose_b = false) {
  Graph& g = detail::graph_of(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  detail::require_matrix(A, "matmul");
  detail::require_matrix(B, "matmul");
  const std::size_t m = A.rows(), k = A.cols();
  const std::size_t bk = transpose_b ? B.cols() : B.rows();
  const std::size_t n = transpose_b ? B.rows() : B.cols();
  if (k != bk) {
    fail(Errc::shape_mismatch, "matmul " + shape_string(A.shape()) + (transpose_b ? " * T" : " * ") + shape_string(B.shape()));
  }
  Tensor out({m, n});
  {
    detail::CMapMat ma(A.values().data(), m, k);
    detail::MapMat mc(out.values().data(), m, n);
    if (transpose_b) {
      detail::CMapMat mb(B.values().data(), n, k);
      mc.noalias() = ma * mb.transpose();
    } else {
      detail::CMapMat mb(B.values().data(), k, n);
      mc.noalias() = ma * mb;
    }
  }
  const std::size_t ai = a.id, bi = b.id;
  return g.record("matmul", std::move(out), {a, b}, [ai, bi, m, k, n, transpose_b](Graph& gr, std::size_t self) {
    detail::CMapMat gc(gr.out_grad(self).data(), m, n);
    const Tensor& A = gr.value(ai);
    const Tensor& B = gr.value(bi);
    detail::CMapMat ma(A.values().data(), m, k);
    if (gr.needs_grad(ai)) {
      detail::MapMat ga(gr.grad_buffer(ai).data(), m, k);
      if (transpose_b) {
        ga.noalias() += gc * detail::CMapMat(B.values().data(), n, k);
      } else {
        ga.noalias() += gc * detail::CMapMat(B.values().data(), k, n).transpose();
      }
    }
    if (gr.needs_grad(bi)) {
      if (transpose_b) {
        detail::MapMat gb(gr.grad_buffer(bi).data(), n, k);
        gb.noalias() += gc.transpose() * ma;
      } else {
        detail::MapMat gb(gr.grad_buffer(bi).data(), k, n);
        gb.noalias() += ma.transpose() * gc;
      }
    }
  });
}

/// Elementwise sum. `b` may also be a single row broadcast over the rows of `a`
/// (bias addition); no other broadcasting is supported.
inline Var add(Var a, Var b) {
  Graph& g = detail::graph_of(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  const bool same = A.shape() == B.shape();
  const bool row_bias = !same && B.rows() == 1 && B.cols() == A.cols() && A.rank() <= 2;
  if (!same && !row_bias) fail(Errc::shape_mismatch, "add " + shape_string(A.shape()) + " + " + shape_string(B.shape()));
  Tensor out = A;
  const std::size_t cols = A.cols();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += same ? B[i] : B[i % cols];
  const std::size_t ai = a.id, bi = b.id;
  return g.record("add", std::move(out), {a, b}, [ai, bi, same, cols](Graph& gr, std::size_t self) {
    auto go = gr.out_grad(self);
    if (gr.needs_grad(ai)) {
      auto ga = gr.grad_buffer(ai);
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
    }
    if (gr.needs_grad(bi)) {
      auto gb = gr.grad_buffer(bi);
      for (std::size_t i = 0; i < go.size(); ++i) gb[same ? i : i % cols] += go[i];
    }
  });
}

inline Var multiply(Var a, Var b) {
  Graph& g = detail::graph_of(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.shape() != B.shape()) fail(Errc::shape_mismatch, "multiply " + shape_string(A.shape()) + " * " + shape_string(B.shape()));
  Tensor out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
  const std::size_t ai = a.id, bi = b.id;
  return g.record("multiply", std::move(out), {a, b}, [ai, bi](Graph& gr, std::size_t self) {
    auto go = gr.out_grad(self);
    const Tensor& A = gr.value(ai);
    const Tensor& B = gr.value(bi);
    if (gr.needs_grad(ai)) {
      auto ga = gr.grad_buffer(ai);
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * B[i];
    }
    if (gr.needs_grad(bi)) {
      auto gb = gr.grad_buffer(bi);
      for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * A[i];
    }
  });
}

inline Var scale(Var x, double factor) {
  return detail::unary_elementwise(x, "scale", [factor](double v) { return std::pair{v * factor, factor}; });
}

inline Var subtract(Var a, Var b) { return add(a, scale(b, -1.0)); }

/// Concatenation of rank<=2 tensors along rows (axis 0) or columns (axis 1).
inline Var concat(const std::vector<Var>& parts, int axis) {
  if (parts.empty()) fail(Errc::shape_mismatch, "concat of zero tensors");
  if (axis != 0 && axis != 1) fail(Errc::shape_mismatch, "concat axis must be 0 or 1");
  Graph& g = *parts.front().graph;
  std::vector<std::size_t> rows, cols;
  for (Var p : parts) {
    detail::graph_of(parts.front(), p);
    detail::require_matrix(p.value(), "concat");
    rows.push_back(p.value().rows());
    cols.push_back(p.value().cols());
  }
  std::size_t out_rows = 0, out_cols = 0;
  if (axis == 0) {
    out_cols = cols[0];
    for (std::size_t i = 0; i < parts.size(); ++i) {
      if (cols[i] != out_cols) fail(Errc::shape_mismatch, "concat rows: column count mismatch");
      out_rows += rows[i];
    }
  } else {
    out_rows = rows[0];
    for (std::size_t i = 0; i < parts.size(); ++i) {
      if (rows[i] != out_rows) fail(Errc::shape_mismatch, "concat cols: row count mismatch");
      out_cols += cols[i];
    }
  }
  Tensor out({out_rows, out_cols});
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Tensor& t = parts[p].value();
    for (std::size_t r = 0; r < rows[p]; ++r)
      for (std::size_t c = 0; c < cols[p]; ++c) {
        if (axis == 0)
          out.at(offset + r, c) = t.at(r, c);
        else
          out.at(r, offset + c) = t[r * cols[p] + c];
      }
    offset += axis == 0 ? rows[p] : cols[p];
  }
  std::vector<std::size_t> ids;
  for (Var p : parts) ids.push_back(p.id);
  return g.record("concat", std::move(out), parts,
                  [ids, rows, cols, axis, out_cols](Graph& gr, std::size_t self) {
                    auto go = gr.out_grad(self);
                    std::size_t offset = 0;
                    for (std::size_t p = 0; p < ids.size(); ++p) {
                      if (gr.needs_grad(ids[p])) {
                        auto gp = gr.grad_buffer(ids[p]);
                        for (std::size_t r = 0; r < rows[p]; ++r)
                          for (std::size_t c = 0; c < cols[p]; ++c) {
                            const std::size_t src = axis == 0 ? (offset + r) * out_cols + c : r * out_cols + offset + c;
                            gp[r * cols[p] + c] += go[src];
                          }
                      }
                      offset += axis == 0 ? rows[p] : cols[p];
                    }
                  });
}

/// Embedding lookup: row `ids[i]` of `table` becomes output row i. Also used to take
/// contiguous row blocks of an activation matrix.
inline Var gather_rows(Var table, std::span<const std::size_t> ids) {
  Graph& g = *table.graph;
  const Tensor& T = table.value();
  detail::require_matrix(T, "gather_rows");
  const std::size_t width = T.cols(), height = T.rows();
  if (ids.empty()) fail(Errc::shape_mismatch, "gather_rows with no ids");
  Tensor out({ids.size(), width});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= height) fail(Errc::shape_mismatch, "gather_rows id " + std::to_string(ids[i]) + " >= " + std::to_string(height));
    std::copy_n(T.values().begin() + static_cast<std::ptrdiff_t>(ids[i] * width), width,
                out.values().begin() + static_cast<std::ptrdiff_t>(i * width));
  }
  const std::size_t ti = table.id;
  return g.record("embedding-gather", std::move(out), {table},
                  [ti, width, idx = std::vector<std::size_t>(ids.begin(), ids.end())](Graph& gr, std::size_t self) {
                    auto go = gr.out_grad(self);
                    auto gt = gr.grad_buffer(ti);
                    for (std::size_t i = 0; i < idx.size(); ++i)
                      for (std::size_t c = 0; c < width; ++c) gt[idx[i] * width + c] += go[i * width + c];
                  });
}

inline Var softmax_rows(Var x) {
  Graph& g = *x.graph;
  const Tensor& in = x.value();
  detail::require_matrix(in, "softmax-rows");
  const std::size_t rows = in.rows(), cols = in.cols();
  Tensor out(in.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = in.values().data() + r * cols;
    double* dst = out.values().data() + r * cols;
    const double mx = *std::max_element(src, src + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) total += (dst[c] = std::exp(src[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) dst[c] /= total;
  }
  const std::size_t xi = x.id;
  return g.record("softmax-rows", std::move(out), {x}, [xi, rows, cols](Graph& gr, std::size_t self) {
    auto go = gr.out_grad(self);
    const Tensor& y = gr.value(self);
    auto gx = gr.grad_buffer(xi);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += go[r * cols + c] * y[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += y[r * cols + c] * (go[r * cols + c] - dot);
    }
  });
}

/// Row-wise layer normalization with learned gain and bias (each a single row).
inline Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5) {
  Graph& g = detail::graph_of(x, gain);
  detail::graph_of(x, bias);
  const Tensor& in = x.value();
  detail::require_matrix(in, "layer-norm");
  const std::size_t rows = in.rows(), cols = in.cols();
  if (gain.value().size() != cols || bias.value().size() != cols) fail(Errc::shape_mismatch, "layer-norm gain/bias width");
  Tensor out(in.shape());
  std::vector<double> xhat(in.size()), inv_std(rows);
  const Tensor& G = gain.value();
  const Tensor& Bv = bias.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = in.values().data() + r * cols;
    double mean = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mean += src[c];
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (src[c] - mean) * (src[c] - mean);
    var /= static_cast<double>(cols);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < cols; ++c) {
      xhat[r * cols + c] = (src[c] - mean) * inv_std[r];
      out[r * cols + c] = xhat[r * cols + c] * G[c] + Bv[c];
    }
  }
  const std::size_t xi = x.id, gi = gain.id, bi = bias.id;
  return g.record("layer-norm", std::move(out), {x, gain, bias},
                  [xi, gi, bi, rows, cols, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph& gr, std::size_t self) {
                    auto go = gr.out_grad(self);
                    const Tensor& G = gr.value(gi);
                    if (gr.needs_grad(gi)) {
                      auto gg = gr.grad_buffer(gi);
                      for (std::size_t i = 0; i < go.size(); ++i) gg[i % cols] += go[i] * xhat[i];
                    }
                    if (gr.needs_grad(bi)) {
                      auto gb = gr.grad_buffer(bi);
                      for (std::size_t i = 0; i < go.size(); ++i) gb[i % cols] += go[i];
                    }
                    if (gr.needs_grad(xi)) {
                      auto gx = gr.grad_buffer(xi);
                      const double n = static_cast<double>(cols);
                      for (std::size_t r = 0; r < rows; ++r) {
                        double mean_d = 0.0, mean_dx = 0.0;
                        for (std::size_t c = 0; c < cols; ++c) {
                          const double d = go[r * cols + c] * G[c];
                          mean_d += d;
                          mean_dx += d * xhat[r * cols + c];
                        }
                        mean_d /= n;
                        mean_dx /= n;
                        for (std::size_t c = 0; c < cols; ++c) {
                          const double d = go[r * cols + c] * G[c];
                          gx[r * cols + c] += inv_std[r] * (d - mean_d - xhat[r * cols + c] * mean_dx);
                        }
                      }
                    }
                  });
}

/// Exact (erf-based) GELU.
inline Var gelu(Var x) {
  return detail::unary_elementwise(x, "gelu", [](double v) {
    const double cdf = 0.5 * std::erfc(-v / std::sqrt(2.0));
    const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * 3.14159265358979323846);
    return std::pair{v * cdf, cdf + v * pdf};
  });
}

inline Var relu(Var x) {
  return detail::unary_elementwise(x, "relu", [](double v) { return std::pair{v > 0 ? v : 0.0, v > 0 ? 1.0 : 0.0}; });
}

inline Var sigmoid(Var x) {
  return detail::unary_elementwise(x, "sigmoid", [](double v) {
    const double s = detail::stable_sigmoid(v);
    return std::pair{s, s * (1.0 - s)};
  });
}

inline Var log(Var x) {
  return detail::unary_elementwise(x, "log", [](double v) { return std::pair{std::log(v), 1.0 / v}; });
}

inline Var sum(Var x) {
  Graph& g = *x.graph;
  double total = 0.0;
  for (double v : x.value().values()) total += v;
  const std::size_t xi = x.id;
  return g.record("sum", Tensor::scalar(total), {x}, [xi](Graph& gr, std::size_t self) {
    const double go = gr.out_grad(self)[0];
    for (double& v : gr.grad_buffer(xi)) v += go;
  });
}

inline Var mean(Var x) {
  Graph& g = *x.graph;
  const double n = static_cast<double>(x.value().size());
  double total = 0.0;
  for (double v : x.value().values()) total += v;
  const std::size_t xi = x.id;
  return g.record("mean", Tensor::scalar(total / n), {x}, [xi, n](Graph& gr, std::size_t self) {
    const double go = gr.out_grad(self)[0] / n;
    for (double& v : gr.grad_buffer(xi)) v += go;
  });
}

inline Var sum_squares(Var x) { return sum(multiply(x, x)); }

/// Applies a dropout mask sampled outside the graph (entries 0 or 1/(1-rate)).
inline Var dropout_apply(Var x, Tensor mask) {
  if (mask.shape() != x.value().shape()) fail(Errc::shape_mismatch, "dropout mask shape " + shape_string(mask.shape()));
  Var m = x.graph->constant(std::move(mask));
  return multiply(x, m);
}

/// Positions with `fill_where[i] != 0` are overwritten with `value` and receive no gradient.
inline Var masked_fill(Var x, std::span<const std::uint8_t> fill_where, double value) {
  Graph& g = *x.graph;
  const Tensor& in = x.value();
  if (fill_where.size() != in.size()) fail(Errc::shape_mismatch, "masked-fill mask size");
  Tensor out = in;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (fill_where[i]) out[i] = value;
  const std::size_t xi = x.id;
  return g.record("masked-fill", std::move(out), {x},
                  [xi, mask = std::vector<std::uint8_t>(fill_where.begin(), fill_where.end())](Graph& gr, std::size_t self) {
                    auto go = gr.out_grad(self);
                    auto gx = gr.grad_buffer(xi);
                    for (std::size_t i = 0; i < go.size(); ++i)
                      if (!mask[i]) gx[i] += go[i];
                  });
}

}  // namespace akirisk
