#pragma once

// Dense float64 tensors and a tape-based reverse-mode autodiff graph covering
// the handful of ops a small convolutional classifier needs.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace smalldata::nd {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false)
      : shape_(std::move(shape)), data_(numel(shape_), fill), requires_grad_(requires_grad) {
    check_shape();
  }

  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
      : shape_(std::move(shape)), data_(std::move(data)), requires_grad_(requires_grad) {
    check_shape();
    if (numel(shape_) != data_.size())
      throw std::invalid_argument("tensor: shape " + nd::to_string(shape_) + " needs " +
                                  std::to_string(numel(shape_)) + " values, got " +
                                  std::to_string(data_.size()));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  bool requires_grad() const noexcept { return requires_grad_; }
  void set_requires_grad(bool on) noexcept { requires_grad_ = on; }

  bool has_grad() const noexcept { return grad_.has_value(); }
  const std::vector<double>& grad() const { return grad_.value(); }
  std::vector<double>& grad() { return grad_.value(); }
  void zero_grad() { grad_.reset(); }

  /// Adds `g` into the gradient buffer, creating it on first use.
  void accumulate_grad(const std::vector<double>& g) {
    if (!grad_) grad_.emplace(data_.size(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) (*grad_)[i] += g[i];
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void check_shape() const {
    for (auto d : shape_)
      if (d == 0) throw std::invalid_argument("tensor: zero-sized dimension in " + nd::to_string(shape_));
  }

  Shape shape_;
  std::vector<double> data_;
  std::optional<std::vector<double>> grad_;
  bool requires_grad_ = false;
};

enum class OpKind {
  Leaf,
  Constant,
  Matmul,
  AddBias,
  Conv2d,
  MaxPool2x2,
  GlobalAvgPool,
  Relu,
  Sigmoid,
  BceLoss,
};

using NodeId = std::size_t;

/// Records a forward pass. Nodes are appended in evaluation order, so the node
/// list is always a valid topological order and the graph is acyclic.
///
/// Leaf nodes refer to externally owned tensors (model parameters); backward()
/// accumulates into their grad buffers when they require gradients. The
/// referenced tensors must outlive the graph.
class Graph {
 public:
  static constexpr double kBceClamp = 1e-12;

  NodeId leaf(Tensor& param) {
    Node n;
    n.kind = OpKind::Leaf;
    n.value = Tensor(param.shape(), param.data());
    n.external = &param;
    n.needs_grad = param.requires_grad();
    return push(std::move(n));
  }

  NodeId constant(Tensor value) {
    Node n;
    n.kind = OpKind::Constant;
    n.value = std::move(value);
    return push(std::move(n));
  }

  /// [m,k] x [k,n] -> [m,n]
  NodeId matmul(NodeId a, NodeId b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(0)) mismatch("matmul", A, B);
    const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        const double a_ip = A[i * k + p];
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] += a_ip * B[p * n + j];
      }
    return push_op(OpKind::Matmul, {a, b}, std::move(out));
  }

  /// Adds b[c] to every element whose axis-1 index is c. Works for [N,C] and [N,C,H,W].
  NodeId add_bias(NodeId x, NodeId b) {
    const Tensor& X = value(x);
    const Tensor& B = value(b);
    if (X.rank() < 2 || B.rank() != 1 || B.dim(0) != X.dim(1)) mismatch("add_bias", X, B);
    Tensor out = X;
    out.set_requires_grad(false);
    const std::size_t channels = X.dim(1);
    const std::size_t inner = X.size() / (X.dim(0) * channels);
    for (std::size_t i = 0; i < X.size(); ++i) out[i] += B[(i / inner) % channels];
    return push_op(OpKind::AddBias, {x, b}, std::move(out));
  }

  /// Stride-1 convolution with zero "same" padding. Input [N,C,H,W], kernel
  /// [O,C,kh,kw] with odd kh/kw; output [N,O,H,W].
  NodeId conv2d(NodeId x, NodeId kernel) {
    const Tensor& X = value(x);
    const Tensor& K = value(kernel);
    if (X.rank() != 4 || K.rank() != 4 || K.dim(1) != X.dim(1) || K.dim(2) % 2 == 0 || K.dim(3) % 2 == 0)
      mismatch("conv2d", X, K);
    const std::size_t N = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
    const std::size_t O = K.dim(0), kh = K.dim(2), kw = K.dim(3);
    const long ph = static_cast<long>(kh / 2), pw = static_cast<long>(kw / 2);
    Tensor out({N, O, H, W});
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t o = 0; o < O; ++o) {
        double* dst = &out[((n * O + o) * H) * W];
        for (std::size_t c = 0; c < C; ++c) {
          const double* src = X.data().data() + ((n * C + c) * H) * W;
          for (std::size_t u = 0; u < kh; ++u)
            for (std::size_t v = 0; v < kw; ++v) {
              const double k = K[((o * C + c) * kh + u) * kw + v];
              const long dy = static_cast<long>(u) - ph, dx = static_cast<long>(v) - pw;
              const std::size_t x0 = static_cast<std::size_t>(std::max(0L, -dx));
              const std::size_t x1 = static_cast<std::size_t>(std::min(static_cast<long>(W), static_cast<long>(W) - dx));
              for (std::size_t y = 0; y < H; ++y) {
                const long sy = static_cast<long>(y) + dy;
                if (sy < 0 || sy >= static_cast<long>(H)) continue;
                const double* row = src + static_cast<std::size_t>(sy) * W;
                double* out_row = dst + y * W;
                for (std::size_t xx = x0; xx < x1; ++xx) out_row[xx] += k * row[static_cast<long>(xx) + dx];
              }
            }
        }
      }
    return push_op(OpKind::Conv2d, {x, kernel}, std::move(out));
  }

  /// Non-overlapping 2x2 max pooling; odd trailing rows/columns are dropped.
  NodeId max_pool_2x2(NodeId x) {
    const Tensor& X = value(x);
    if (X.rank() != 4 || X.dim(2) < 2 || X.dim(3) < 2)
      throw std::invalid_argument("max_pool_2x2: expected [N,C,H,W] with H,W >= 2, got " + nd::to_string(X.shape()));
    const std::size_t N = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
    const std::size_t Ho = H / 2, Wo = W / 2;
    Tensor out({N, C, Ho, Wo});
    std::vector<std::size_t> argmax(out.size());
    for (std::size_t nc = 0; nc < N * C; ++nc)
      for (std::size_t y = 0; y < Ho; ++y)
        for (std::size_t xx = 0; xx < Wo; ++xx) {
          std::size_t best = (nc * H + 2 * y) * W + 2 * xx;
          for (std::size_t dy = 0; dy < 2; ++dy)
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const std::size_t idx = (nc * H + 2 * y + dy) * W + 2 * xx + dx;
              if (X[idx] > X[best]) best = idx;
            }
          const std::size_t o = (nc * Ho + y) * Wo + xx;
          out[o] = X[best];
          argmax[o] = best;
        }
    NodeId id = push_op(OpKind::MaxPool2x2, {x}, std::move(out));
    nodes_[id].indices = std::move(argmax);
    return id;
  }

  /// [N,C,H,W] -> [N,C]
  NodeId global_avg_pool(NodeId x) {
    const Tensor& X = value(x);
    if (X.rank() != 4) throw std::invalid_argument("global_avg_pool: expected [N,C,H,W], got " + nd::to_string(X.shape()));
    const std::size_t N = X.dim(0), C = X.dim(1), area = X.dim(2) * X.dim(3);
    Tensor out({N, C});
    for (std::size_t nc = 0; nc < N * C; ++nc) {
      double s = 0.0;
      for (std::size_t i = 0; i < area; ++i) s += X[nc * area + i];
      out[nc] = s / static_cast<double>(area);
    }
    return push_op(OpKind::GlobalAvgPool, {x}, std::move(out));
  }

  NodeId relu(NodeId x) {
    Tensor out = value(x);
    out.set_requires_grad(false);
    for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
    return push_op(OpKind::Relu, {x}, std::move(out));
  }

  NodeId sigmoid(NodeId x) {
    Tensor out = value(x);
    out.set_requires_grad(false);
    for (auto& v : out.data()) v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    return push_op(OpKind::Sigmoid, {x}, std::move(out));
  }

  /// Mean binary cross-entropy over every element. Predictions are clamped to
  /// [kBceClamp, 1 - kBceClamp] before the log.
  NodeId bce_loss(NodeId prediction, NodeId target) {
    const Tensor& P = value(prediction);
    const Tensor& Y = value(target);
    if (P.shape() != Y.shape()) mismatch("bce_loss", P, Y);
    double s = 0.0;
    for (std::size_t i = 0; i < P.size(); ++i) {
      const double y = Y[i];
      if (y != 0.0 && y != 1.0) throw std::invalid_argument("bce_loss: targets must be 0 or 1");
      const double p = std::clamp(P[i], kBceClamp, 1.0 - kBceClamp);
      s -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
    }
    Tensor out({1}, s / static_cast<double>(P.size()));
    return push_op(OpKind::BceLoss, {prediction, target}, std::move(out));
  }

  const Tensor& value(NodeId id) const { return nodes_.at(id).value; }
  OpKind kind(NodeId id) const { return nodes_.at(id).kind; }
  const std::vector<NodeId>& inputs(NodeId id) const { return nodes_.at(id).inputs; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Reverse sweep from a scalar node. Gradients are added to the grad buffer
  /// of every leaf tensor that requires them; calling twice accumulates.
  void backward(NodeId loss) {
    if (loss >= nodes_.size()) throw std::out_of_range("backward: unknown node");
    if (nodes_[loss].value.size() != 1)
      throw std::invalid_argument("backward: loss must be scalar, got shape " + nd::to_string(nodes_[loss].value.shape()));
    std::vector<std::vector<double>> adj(nodes_.size());
    adj[loss].assign(1, 1.0);
    for (std::size_t id = loss + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.needs_grad || adj[id].empty()) continue;
      propagate(id, adj);
      if (n.kind == OpKind::Leaf && n.external && n.external->requires_grad()) n.external->accumulate_grad(adj[id]);
    }
  }

 private:
  struct Node {
    OpKind kind = OpKind::Constant;
    std::vector<NodeId> inputs;
    Tensor value;
    Tensor* external = nullptr;
    bool needs_grad = false;
    std::vector<std::size_t> indices;
  };

  [[noreturn]] static void mismatch(const char* op, const Tensor& a, const Tensor& b) {
    throw std::invalid_argument(std::string(op) + ": incompatible shapes " + nd::to_string(a.shape()) + " and " +
                                nd::to_string(b.shape()));
  }

  NodeId push(Node n) {
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  NodeId push_op(OpKind kind, std::vector<NodeId> inputs, Tensor out) {
    Node n;
    n.kind = kind;
    n.needs_grad = std::any_of(inputs.begin(), inputs.end(), [&](NodeId i) { return nodes_[i].needs_grad; });
    n.inputs = std::move(inputs);
    n.value = std::move(out);
    return push(std::move(n));
  }

  std::vector<double>& adjoint(std::vector<std::vector<double>>& adj, NodeId id) {
    if (adj[id].empty()) adj[id].assign(nodes_[id].value.size(), 0.0);
    return adj[id];
  }

  void propagate(NodeId id, std::vector<std::vector<double>>& adj) {
    const Node& n = nodes_[id];
    const std::vector<double>& g = adj[id];
    auto wants = [&](std::size_t k) { return nodes_[n.inputs[k]].needs_grad; };
    switch (n.kind) {
      case OpKind::Leaf:
      case OpKind::Constant:
        return;
      case OpKind::Matmul: {
        const Tensor& A = nodes_[n.inputs[0]].value;
        const Tensor& B = nodes_[n.inputs[1]].value;
        const std::size_t m = A.dim(0), k = A.dim(1), cols = B.dim(1);
        if (wants(0)) {
          auto& ga = adjoint(adj, n.inputs[0]);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              double s = 0.0;
              for (std::size_t j = 0; j < cols; ++j) s += g[i * cols + j] * B[p * cols + j];
              ga[i * k + p] += s;
            }
        }
        if (wants(1)) {
          auto& gb = adjoint(adj, n.inputs[1]);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              const double a_ip = A[i * k + p];
              for (std::size_t j = 0; j < cols; ++j) gb[p * cols + j] += a_ip * g[i * cols + j];
            }
        }
        return;
      }
      case OpKind::AddBias: {
        const Tensor& X = nodes_[n.inputs[0]].value;
        if (wants(0)) {
          auto& gx = adjoint(adj, n.inputs[0]);
          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        }
        if (wants(1)) {
          auto& gb = adjoint(adj, n.inputs[1]);
          const std::size_t channels = X.dim(1);
          const std::size_t inner = X.size() / (X.dim(0) * channels);
          for (std::size_t i = 0; i < g.size(); ++i) gb[(i / inner) % channels] += g[i];
        }
        return;
      }
      case OpKind::Conv2d:
        conv2d_backward(n, g, adj);
        return;
      case OpKind::MaxPool2x2: {
        auto& gx = adjoint(adj, n.inputs[0]);
        for (std::size_t o = 0; o < g.size(); ++o) gx[n.indices[o]] += g[o];
        return;
      }
      case OpKind::GlobalAvgPool: {
        const Tensor& X = nodes_[n.inputs[0]].value;
        auto& gx = adjoint(adj, n.inputs[0]);
        const std::size_t area = X.dim(2) * X.dim(3);
        for (std::size_t i = 0; i < X.size(); ++i) gx[i] += g[i / area] / static_cast<double>(area);
        return;
      }
      case OpKind::Relu: {
        const Tensor& X = nodes_[n.inputs[0]].value;
        auto& gx = adjoint(adj, n.inputs[0]);
        for (std::size_t i = 0; i < X.size(); ++i)
          if (X[i] > 0.0) gx[i] += g[i];
        return;
      }
      case OpKind::Sigmoid: {
        auto& gx = adjoint(adj, n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double s = n.value[i];
          gx[i] += g[i] * s * (1.0 - s);
        }
        return;
      }
      case OpKind::BceLoss: {
        const Tensor& P = nodes_[n.inputs[0]].value;
        const Tensor& Y = nodes_[n.inputs[1]].value;
        if (!wants(0)) return;
        auto& gp = adjoint(adj, n.inputs[0]);
        const double scale = g[0] / static_cast<double>(P.size());
        for (std::size_t i = 0; i < P.size(); ++i) {
          if (P[i] < kBceClamp || P[i] > 1.0 - kBceClamp) continue;
          const double p = P[i], y = Y[i];
          gp[i] += scale * (-(y / p) + (1.0 - y) / (1.0 - p));
        }
        return;
      }
    }
  }

  void conv2d_backward(const Node& n, const std::vector<double>& g, std::vector<std::vector<double>>& adj) {
    const Tensor& X = nodes_[n.inputs[0]].value;
    const Tensor& K = nodes_[n.inputs[1]].value;
    const std::size_t N = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
    const std::size_t O = K.dim(0), kh = K.dim(2), kw = K.dim(3);
    const long ph = static_cast<long>(kh / 2), pw = static_cast<long>(kw / 2);
    const bool want_x = nodes_[n.inputs[0]].needs_grad;
    const bool want_k = nodes_[n.inputs[1]].needs_grad;
    std::vector<double>* gx = want_x ? &adjoint(adj, n.inputs[0]) : nullptr;
    std::vector<double>* gk = want_k ? &adjoint(adj, n.inputs[1]) : nullptr;
    for (std::size_t b = 0; b < N; ++b)
      for (std::size_t o = 0; o < O; ++o) {
        const double* gout = &g[((b * O + o) * H) * W];
        for (std::size_t c = 0; c < C; ++c) {
          const std::size_t in_base = ((b * C + c) * H) * W;
          for (std::size_t u = 0; u < kh; ++u)
            for (std::size_t v = 0; v < kw; ++v) {
              const std::size_t kidx = ((o * C + c) * kh + u) * kw + v;
              const long dy = static_cast<long>(u) - ph, dx = static_cast<long>(v) - pw;
              const std::size_t x0 = static_cast<std::size_t>(std::max(0L, -dx));
              const std::size_t x1 = static_cast<std::size_t>(std::min(static_cast<long>(W), static_cast<long>(W) - dx));
              double acc = 0.0;
              const double k = K[kidx];
              for (std::size_t y = 0; y < H; ++y) {
                const long sy = static_cast<long>(y) + dy;
                if (sy < 0 || sy >= static_cast<long>(H)) continue;
                const std::size_t row = in_base + static_cast<std::size_t>(sy) * W;
                const double* grow = gout + y * W;
                for (std::size_t xx = x0; xx < x1; ++xx) {
                  const std::size_t src = row + static_cast<std::size_t>(static_cast<long>(xx) + dx);
                  if (gk) acc += grow[xx] * X[src];
                  if (gx) (*gx)[src] += grow[xx] * k;
                }
              }
              if (gk) (*gk)[kidx] += acc;
            }
        }
      }
  }

  std::vector<Node> nodes_;
};

}  // namespace smalldata::nd
