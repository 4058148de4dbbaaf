#include "iqa/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "iqa/kernels.hpp"

namespace iqa::ad {

Graph& Expr::graph() const {
  if (!graph_) throw GraphError("use of an empty expression");
  return *graph_;
}

const Shape& Expr::shape() const { return graph().shape_of(id_); }

// ---------------------------------------------------------------------------
// Graph

void Graph::check_owned(Expr e) const {
  if (!e.valid() || &e.graph() != this || e.id() >= nodes_.size()) {
    throw GraphError("expression does not belong to this graph");
  }
}

Expr Graph::input(Shape shape, std::string name) {
  Node n;
  n.kind = Kind::input;
  n.value = Tensor(std::move(shape));
  n.name = std::move(name);
  n.needs_grad = true;
  nodes_.push_back(std::move(n));
  return Expr(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Expr Graph::constant(Tensor value, std::string name) {
  Node n;
  n.kind = Kind::constant;
  n.value = std::move(value);
  n.name = std::move(name);
  n.bound = true;
  n.cached = true;
  nodes_.push_back(std::move(n));
  return Expr(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

void Graph::bind(Expr leaf, const Tensor& value) {
  check_owned(leaf);
  Node& n = nodes_[leaf.id()];
  if (n.kind != Kind::input) throw GraphError("bind: node '" + n.name + "' is not an input leaf");
  if (value.shape() != n.value.shape()) throw ShapeError("bind", n.value.shape(), value.shape());
  std::copy(value.values().begin(), value.values().end(), n.value.values().begin());
  n.bound = true;
  ++generation_;
}

void Graph::bind(Expr leaf, std::span<const double> values) {
  check_owned(leaf);
  Node& n = nodes_[leaf.id()];
  if (n.kind != Kind::input) throw GraphError("bind: node '" + n.name + "' is not an input leaf");
  if (values.size() != n.value.size()) {
    throw ShapeError("bind", "expected " + std::to_string(n.value.size()) + " values, got " +
                                 std::to_string(values.size()));
  }
  std::copy(values.begin(), values.end(), n.value.values().begin());
  n.bound = true;
  ++generation_;
}

Expr Graph::add_op(std::unique_ptr<Op> op, std::vector<Expr> inputs, Shape out_shape) {
  Node n;
  n.kind = Kind::op;
  n.op = std::move(op);
  for (const auto& e : inputs) {
    check_owned(e);
    n.inputs.push_back(e.id());
    n.needs_grad = n.needs_grad || nodes_[e.id()].needs_grad;
  }
  n.value = Tensor(std::move(out_shape));
  nodes_.push_back(std::move(n));
  return Expr(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

const std::vector<std::uint32_t>& Graph::ancestors(std::uint32_t root) {
  if (root == order_root_) return order_;
  std::vector<char> mark(root + 1, 0);
  mark[root] = 1;
  for (std::uint32_t i = root + 1; i-- > 0;) {
    if (!mark[i]) continue;
    for (auto p : nodes_[i].inputs) mark[p] = 1;
  }
  order_.clear();
  for (std::uint32_t i = 0; i <= root; ++i) {
    if (mark[i]) order_.push_back(i);
  }
  order_root_ = root;
  return order_;
}

const Tensor& Graph::evaluate(Expr root) {
  check_owned(root);
  std::vector<const Tensor*> in;
  for (auto id : ancestors(root.id())) {
    Node& n = nodes_[id];
    if (n.kind == Kind::input) {
      if (!n.bound) throw GraphError("forward: input '" + n.name + "' has no bound value");
      continue;
    }
    if (n.kind == Kind::constant || n.cached) continue;
    in.clear();
    for (auto p : n.inputs) in.push_back(&nodes_[p].value);
    n.op->forward(in, n.value);
    if (!n.needs_grad) n.cached = true;
  }
  forward_root_ = root.id();
  forward_generation_ = generation_;
  return nodes_[root.id()].value;
}

double Graph::forward(Expr root) {
  const Tensor& v = evaluate(root);
  if (v.size() != 1) throw ShapeError("forward", "root of shape " + to_string(v.shape()) + " is not a scalar");
  return v[0];
}

Tensor Graph::backward(Expr root, Expr wrt) {
  Tensor g;
  backward(root, wrt, g);
  return g;
}

void Graph::backward(Expr root, Expr wrt, Tensor& grad) {
  check_owned(root);
  check_owned(wrt);
  if (forward_root_ != root.id() || forward_generation_ != generation_) {
    throw GraphError("backward: forward() has not been run on this root with the current inputs");
  }
  if (nodes_[wrt.id()].kind != Kind::input) throw GraphError("backward: target is not an input leaf");
  const auto& order = ancestors(root.id());
  if (!std::binary_search(order.begin(), order.end(), wrt.id())) {
    throw GraphError("backward: leaf '" + nodes_[wrt.id()].name + "' is not reachable from the root");
  }
  if (nodes_[root.id()].value.size() != 1) throw ShapeError("backward", "root is not a scalar");

  for (auto id : order) {
    Node& n = nodes_[id];
    if (!n.needs_grad) continue;
    if (n.adjoint.shape() != n.value.shape() || n.adjoint.size() != n.value.size()) n.adjoint = Tensor(n.value.shape());
    else n.adjoint.fill(0.0);
  }
  nodes_[root.id()].adjoint[0] = 1.0;

  std::vector<const Tensor*> in;
  std::vector<Tensor*> din;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node& n = nodes_[*it];
    if (n.kind != Kind::op || !n.needs_grad) continue;
    in.clear();
    din.clear();
    for (auto p : n.inputs) {
      in.push_back(&nodes_[p].value);
      din.push_back(nodes_[p].needs_grad ? &nodes_[p].adjoint : nullptr);
    }
    n.op->backward(in, n.value, n.adjoint, din);
  }
  const Tensor& a = nodes_[wrt.id()].adjoint;
  if (grad.shape() != a.shape() || grad.size() != a.size()) grad = a;
  else std::copy(a.values().begin(), a.values().end(), grad.values().begin());
}

const Tensor& Graph::value(Expr e) const {
  check_owned(e);
  return nodes_[e.id()].value;
}

std::string_view Graph::op_name(Expr e) const {
  check_owned(e);
  const Node& n = nodes_[e.id()];
  if (n.kind == Kind::input) return "input";
  if (n.kind == Kind::constant) return "constant";
  return n.op->name();
}

// ---------------------------------------------------------------------------
// Primitive ops

namespace {

enum class BinaryKind { add, sub, mul, div };

std::string_view binary_name(BinaryKind k) {
  switch (k) {
    case BinaryKind::add: return "add";
    case BinaryKind::sub: return "subtract";
    case BinaryKind::mul: return "multiply";
    case BinaryKind::div: return "divide";
  }
  return "?";
}

class BinaryOp final : public Op {
 public:
  explicit BinaryOp(BinaryKind k) : kind_(k) {}
  std::string_view name() const override { return binary_name(kind_); }

  void forward(std::span<const Tensor* const> in, Tensor& out) override {
    const Tensor& a = *in[0];
    const Tensor& b = *in[1];
    const std::size_t n = out.size();
    const std::size_t sa = a.size() == 1 ? 0 : 1, sb = b.size() == 1 ? 0 : 1;
    const double* pa = a.data();
    const double* pb = b.data();
    double* o = out.data();
    switch (kind_) {
      case BinaryKind::add: for (std::size_t i = 0; i < n; ++i) o[i] = pa[i * sa] + pb[i * sb]; break;
      case BinaryKind::sub: for (std::size_t i = 0; i < n; ++i) o[i] = pa[i * sa] - pb[i * sb]; break;
      case BinaryKind::mul: for (std::size_t i = 0; i < n; ++i) o[i] = pa[i * sa] * pb[i * sb]; break;
      case BinaryKind::div: for (std::size_t i = 0; i < n; ++i) o[i] = pa[i * sa] / pb[i * sb]; break;
    }
  }

  void backward(std::span<const Tensor* const> in, const Tensor& out, const Tensor& dout,
                std::span<Tensor* const> din) override {
    const Tensor& a = *in[0];
    const Tensor& b = *in[1];
    const std::size_t n = out.size();
    const std::size_t sa = a.size() == 1 ? 0 : 1, sb = b.size() == 1 ? 0 : 1;
    const double* g = dout.data();
    if (din[0]) {
      double* d = din[0]->data();
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        double v = 0.0;
        switch (kind_) {
          case BinaryKind::add:
          case BinaryKind::sub: v = g[i]; break;
          case BinaryKind::mul: v = g[i] * b[i * sb]; break;
          case BinaryKind::div: v = g[i] / b[i * sb]; break;
        }
        if (sa) d[i] += v;
        else acc += v;
      }
      if (!sa) d[0] += acc;
    }
    if (din[1]) {
      double* d = din[1]->data();
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        double v = 0.0;
        switch (kind_) {
          case BinaryKind::add: v = g[i]; break;
          case BinaryKind::sub: v = -g[i]; break;
          case BinaryKind::mul: v = g[i] * a[i * sa]; break;
          case BinaryKind::div: {
            const double bv = b[i * sb];
            v = -g[i] * a[i * sa] / (bv * bv);
            break;
          }
        }
        if (sb) d[i] += v;
        else acc += v;
      }
      if (!sb) d[0] += acc;
    }
  }

 private:
  BinaryKind kind_;
};

enum class UnaryKind { exp, log, sqrt, abs, neg, pow, relu, sigmoid, identity, add_scalar, mul_scalar };

double stable_sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

class UnaryOp final : public Op {
 public:
  UnaryOp(UnaryKind k, double param = 0.0) : kind_(k), param_(param) {}
  std::string_view name() const override {
    switch (kind_) {
      case UnaryKind::exp: return "exp";
      case UnaryKind::log: return "log";
      case UnaryKind::sqrt: return "sqrt";
      case UnaryKind::abs: return "absolute";
      case UnaryKind::neg: return "negate";
      case UnaryKind::pow: return "power";
      case UnaryKind::relu: return "relu";
      case UnaryKind::sigmoid: return "sigmoid";
      case UnaryKind::identity: return "identity";
      case UnaryKind::add_scalar: return "add-scalar";
      case UnaryKind::mul_scalar: return "multiply-scalar";
    }
    return "?";
  }

  void forward(std::span<const Tensor* const> in, Tensor& out) override {
    const double* x = in[0]->data();
    double* o = out.data();
    const std::size_t n = out.size();
    const double p = param_;
    switch (kind_) {
      case UnaryKind::exp: for (std::size_t i = 0; i < n; ++i) o[i] = std::exp(x[i]); break;
      case UnaryKind::log: for (std::size_t i = 0; i < n; ++i) o[i] = std::log(x[i]); break;
      case UnaryKind::sqrt: for (std::size_t i = 0; i < n; ++i) o[i] = std::sqrt(x[i]); break;
      case UnaryKind::abs: for (std::size_t i = 0; i < n; ++i) o[i] = std::abs(x[i]); break;
      case UnaryKind::neg: for (std::size_t i = 0; i < n; ++i) o[i] = -x[i]; break;
      case UnaryKind::pow:
        if (p == 2.0) for (std::size_t i = 0; i < n; ++i) o[i] = x[i] * x[i];
        else for (std::size_t i = 0; i < n; ++i) o[i] = std::pow(x[i], p);
        break;
      case UnaryKind::relu: for (std::size_t i = 0; i < n; ++i) o[i] = x[i] > 0.0 ? x[i] : 0.0; break;
      case UnaryKind::sigmoid: for (std::size_t i = 0; i < n; ++i) o[i] = stable_sigmoid(x[i]); break;
      case UnaryKind::identity: std::copy(x, x + n, o); break;
      case UnaryKind::add_scalar: for (std::size_t i = 0; i < n; ++i) o[i] = x[i] + p; break;
      case UnaryKind::mul_scalar: for (std::size_t i = 0; i < n; ++i) o[i] = x[i] * p; break;
    }
  }

  void backward(std::span<const Tensor* const> in, const Tensor& out, const Tensor& dout,
                std::span<Tensor* const> din) override {
    if (!din[0]) return;
    const double* x = in[0]->data();
    const double* y = out.data();
    const double* g = dout.data();
    double* d = din[0]->data();
    const std::size_t n = out.size();
    const double p = param_;
    switch (kind_) {
      case UnaryKind::exp: for (std::size_t i = 0; i < n; ++i) d[i] += g[i] * y[i]; break;
      case UnaryKind::log: for (std::size_t i = 0; i < n; ++i) d[i] += g[i] / x[i]; break;
      case UnaryKind::sqrt: for (std::size_t i = 0; i < n; ++i) d[i] += g[i] * 0.5 / y[i]; break;
      case UnaryKind::abs:
        for (std::size_t i = 0; i < n; ++i) d[i] += x[i] > 0.0 ? g[i] : (x[i] < 0.0 ? -g[i] : 0.0);
        break;
      case UnaryKind::neg: for (std::size_t i = 0; i < n; ++i) d[i] -= g[i]; break;
      case UnaryKind::pow:
        if (p == 2.0) for (std::size_t i = 0; i < n; ++i) d[i] += g[i] * 2.0 * x[i];
        else for (std::size_t i = 0; i < n; ++i) d[i] += g[i] * p * std::pow(x[i], p - 1.0);
        break;
      case UnaryKind::relu: for (std::size_t i = 0; i < n; ++i) d[i] += x[i] > 0.0 ? g[i] : 0.0; break;
      case UnaryKind::sigmoid: for (std::size_t i = 0; i < n; ++i) d[i] += g[i] * y[i] * (1.0 - y[i]); break;
      case UnaryKind::identity:
      case UnaryKind::add_scalar: for (std::size_t i = 0; i < n; ++i) d[i] += g[i]; break;
      case UnaryKind::mul_scalar: for (std::size_t i = 0; i < n; ++i) d[i] += g[i] * p; break;
    }
  }

 private:
  UnaryKind kind_;
  double param_;
};

enum class ReduceKind { sum, mean, max };

class ReduceOp final : public Op {
 public:
  explicit ReduceOp(ReduceKind k) : kind_(k) {}
  std::string_view name() const override {
    return kind_ == ReduceKind::sum ? "reduce-sum" : kind_ == ReduceKind::mean ? "global-mean" : "global-max";
  }
  void forward(std::span<const Tensor* const> in, Tensor& out) override {
    const Tensor& x = *in[0];
    if (kind_ == ReduceKind::max) {
      argmax_ = 0;
      for (std::size_t i = 1; i < x.size(); ++i)
        if (x[i] > x[argmax_]) argmax_ = i;
      out[0] = x[argmax_];
      return;
    }
    double s = 0.0;
    for (double v : x.values()) s += v;
    out[0] = kind_ == ReduceKind::mean ? s / static_cast<double>(x.size()) : s;
  }
  void backward(std::span<const Tensor* const> in, const Tensor&, const Tensor& dout,
                std::span<Tensor* const> din) override {
    if (!din[0]) return;
    Tensor& d = *din[0];
    const double g = dout[0];
    if (kind_ == ReduceKind::max) {
      d[argmax_] += g;
      return;
    }
    const double v = kind_ == ReduceKind::mean ? g / static_cast<double>(in[0]->size()) : g;
    for (auto& x : d.values()) x += v;
  }

 private:
  ReduceKind kind_;
  std::size_t argmax_ = 0;
};

class BroadcastOp final : public Op {
 public:
  std::string_view name() const override { return "scalar-broadcast"; }
  void forward(std::span<const Tensor* const> in, Tensor& out) override { out.fill((*in[0])[0]); }
  void backward(std::span<const Tensor* const>, const Tensor&, const Tensor& dout,
                std::span<Tensor* const> din) override {
    if (!din[0]) return;
    double s = 0.0;
    for (double v : dout.values()) s += v;
    (*din[0])[0] += s;
  }
};

class Conv2dOp final : public Op {
 public:
  explicit Conv2dOp(kernels::ConvGeometry g) : g_(g) {}
  std::string_view name() const override { return "conv2d"; }
  void forward(std::span<const Tensor* const> in, Tensor& out) override {
    kernels::conv2d_forward(g_, in[0]->data(), in[1]->data(), out.data());
  }
  void backward(std::span<const Tensor* const> in, const Tensor&, const Tensor& dout,
                std::span<Tensor* const> din) override {
    if (din[0]) kernels::conv2d_backward_input(g_, dout.data(), in[1]->data(), din[0]->data());
    if (din[1]) kernels::conv2d_backward_kernel(g_, in[0]->data(), dout.data(), din[1]->data());
  }

 private:
  kernels::ConvGeometry g_;
};

class BiasAddOp final : public Op {
 public:
  std::string_view name() const override { return "bias-add"; }
  void forward(std::span<const Tensor* const> in, Tensor& out) override {
    const Tensor& x = *in[0];
    const Tensor& b = *in[1];
    const std::size_t c_n = b.size();
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + b[i % c_n];
  }
  void backward(std::span<const Tensor* const> in, const Tensor&, const Tensor& dout,
                std::span<Tensor* const> din) override {
    const std::size_t c_n = in[1]->size();
    if (din[0])
      for (std::size_t i = 0; i < dout.size(); ++i) (*din[0])[i] += dout[i];
    if (din[1])
      for (std::size_t i = 0; i < dout.size(); ++i) (*din[1])[i % c_n] += dout[i];
  }
};

class SeparableFilterOp final : public Op {
 public:
  SeparableFilterOp(kernels::FilterGeometry gx, kernels::FilterGeometry gy, std::vector<double> tx,
                    std::vector<double> ty)
      : gx_(gx), gy_(gy), tx_(std::move(tx)), ty_(std::move(ty)), tmp_(Shape{gx.out_h(), gx.out_w(), gx.channels}) {}
  std::string_view name() const override { return "windowed-filter"; }
  void forward(std::span<const Tensor* const> in, Tensor& out) override {
    kernels::filter1d_forward(gx_, tx_, in[0]->data(), tmp_.data());
    kernels::filter1d_forward(gy_, ty_, tmp_.data(), out.data());
  }
  void backward(std::span<const Tensor* const>, const Tensor&, const Tensor& dout,
                std::span<Tensor* const> din) override {
    if (!din[0]) return;
    tmp_.fill(0.0);
    kernels::filter1d_backward(gy_, ty_, dout.data(), tmp_.data());
    kernels::filter1d_backward(gx_, tx_, tmp_.data(), din[0]->data());
  }

 private:
  kernels::FilterGeometry gx_, gy_;
  std::vector<double> tx_, ty_;
  Tensor tmp_;
};

class ChannelWeightedSumOp final : public Op {
 public:
  explicit ChannelWeightedSumOp(std::vector<double> w) : w_(std::move(w)) {}
  std::string_view name() const override { return "channel-weighted-sum"; }
  void forward(std::span<const Tensor* const> in, Tensor& out) override {
    const Tensor& x = *in[0];
    const std::size_t c_n = w_.size();
    for (std::size_t p = 0; p < out.size(); ++p) {
      double s = 0.0;
      for (std::size_t c = 0; c < c_n; ++c) s += w_[c] * x[p * c_n + c];
      out[p] = s;
    }
  }
  void backward(std::span<const Tensor* const>, const Tensor&, const Tensor& dout,
                std::span<Tensor* const> din) override {
    if (!din[0]) return;
    const std::size_t c_n = w_.size();
    for (std::size_t p = 0; p < dout.size(); ++p)
      for (std::size_t c = 0; c < c_n; ++c) (*din[0])[p * c_n + c] += w_[c] * dout[p];
  }

 private:
  std::vector<double> w_;
};

class BroadcastChannelsOp final : public Op {
 public:
  explicit BroadcastChannelsOp(std::size_t c) : c_(c) {}
  std::string_view name() const override { return "broadcast-channels"; }
  void forward(std::span<const Tensor* const> in, Tensor& out) override {
    const Tensor& x = *in[0];
    for (std::size_t p = 0; p < x.size(); ++p)
      for (std::size_t c = 0; c < c_; ++c) out[p * c_ + c] = x[p];
  }
  void backward(std::span<const Tensor* const> in, const Tensor&, const Tensor& dout,
                std::span<Tensor* const> din) override {
    if (!din[0]) return;
    for (std::size_t p = 0; p < in[0]->size(); ++p) {
      double s = 0.0;
      for (std::size_t c = 0; c < c_; ++c) s += dout[p * c_ + c];
      (*din[0])[p] += s;
    }
  }

 private:
  std::size_t c_;
};

class CropOp final : public Op {
 public:
  CropOp(std::size_t y0, std::size_t x0) : y0_(y0), x0_(x0) {}
  std::string_view name() const override { return "crop"; }
  void forward(std::span<const Tensor* const> in, Tensor& out) override {
    const Tensor& x = *in[0];
    const std::size_t w = x.dim(1), c_n = x.dim(2);
    const std::size_t oh = out.dim(0), ow = out.dim(1);
    for (std::size_t y = 0; y < oh; ++y) {
      const double* src = x.data() + ((y + y0_) * w + x0_) * c_n;
      std::copy(src, src + ow * c_n, out.data() + y * ow * c_n);
    }
  }
  void backward(std::span<const Tensor* const> in, const Tensor&, const Tensor& dout,
                std::span<Tensor* const> din) override {
    if (!din[0]) return;
    const std::size_t w = in[0]->dim(1), c_n = in[0]->dim(2);
    const std::size_t oh = dout.dim(0), ow = dout.dim(1);
    for (std::size_t y = 0; y < oh; ++y) {
      double* dst = din[0]->data() + ((y + y0_) * w + x0_) * c_n;
      const double* src = dout.data() + y * ow * c_n;
      for (std::size_t i = 0; i < ow * c_n; ++i) dst[i] += src[i];
    }
  }

 private:
  std::size_t y0_, x0_;
};

class AdaptiveMaxPoolOp final : public Op {
 public:
  explicit AdaptiveMaxPoolOp(std::size_t grid) : grid_(grid) {}
  std::string_view name() const override { return "adaptive-max-pool"; }
  void forward(std::span<const Tensor* const> in, Tensor& out) override {
    const Tensor& x = *in[0];
    const std::size_t h = x.dim(0), w = x.dim(1), c_n = x.dim(2);
    argmax_.assign(out.size(), 0);
    for (std::size_t gy = 0; gy < grid_; ++gy) {
      const std::size_t y0 = gy * h / grid_, y1 = ((gy + 1) * h + grid_ - 1) / grid_;
      for (std::size_t gx = 0; gx < grid_; ++gx) {
        const std::size_t x0 = gx * w / grid_, x1 = ((gx + 1) * w + grid_ - 1) / grid_;
        for (std::size_t c = 0; c < c_n; ++c) {
          std::size_t best = (y0 * w + x0) * c_n + c;
          for (std::size_t y = y0; y < y1; ++y)
            for (std::size_t xx = x0; xx < x1; ++xx) {
              const std::size_t i = (y * w + xx) * c_n + c;
              if (x[i] > x[best]) best = i;
            }
          const std::size_t o = (gy * grid_ + gx) * c_n + c;
          argmax_[o] = best;
          out[o] = x[best];
        }
      }
    }
  }
  void backward(std::span<const Tensor* const>, const Tensor&, const Tensor& dout,
                std::span<Tensor* const> din) override {
    if (!din[0]) return;
    for (std::size_t o = 0; o < dout.size(); ++o) (*din[0])[argmax_[o]] += dout[o];
  }

 private:
  std::size_t grid_;
  std::vector<std::size_t> argmax_;
};

class SpatialMeanOp final : public Op {
 public:
  std::string_view name() const override { return "spatial-mean"; }
  void forward(std::span<const Tensor* const> in, Tensor& out) override {
    const Tensor& x = *in[0];
    const std::size_t c_n = x.dim(2), n = x.dim(0) * x.dim(1);
    for (std::size_t c = 0; c < c_n; ++c) {
      double s = 0.0;
      for (std::size_t p = 0; p < n; ++p) s += x[p * c_n + c];
      out[c] = s / static_cast<double>(n);
    }
  }
  void backward(std::span<const Tensor* const> in, const Tensor&, const Tensor& dout,
                std::span<Tensor* const> din) override {
    if (!din[0]) return;
    const std::size_t c_n = in[0]->dim(2), n = in[0]->dim(0) * in[0]->dim(1);
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t c = 0; c < c_n; ++c) (*din[0])[p * c_n + c] += dout[c] * inv;
  }
};

class ConcatOp final : public Op {
 public:
  std::string_view name() const override { return "concat"; }
  void forward(std::span<const Tensor* const> in, Tensor& out) override {
    std::size_t off = 0;
    for (const Tensor* t : in) {
      std::copy(t->values().begin(), t->values().end(), out.data() + off);
      off += t->size();
    }
  }
  void backward(std::span<const Tensor* const> in, const Tensor&, const Tensor& dout,
                std::span<Tensor* const> din) override {
    std::size_t off = 0;
    for (std::size_t k = 0; k < in.size(); ++k) {
      if (din[k])
        for (std::size_t i = 0; i < in[k]->size(); ++i) (*din[k])[i] += dout[off + i];
      off += in[k]->size();
    }
  }
};

class MatVecOp final : public Op {
 public:
  std::string_view name() const override { return "matvec"; }
  void forward(std::span<const Tensor* const> in, Tensor& out) override {
    const Tensor& m = *in[0];
    const Tensor& v = *in[1];
    const std::size_t rows = m.dim(0), cols = m.dim(1);
    for (std::size_t r = 0; r < rows; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < cols; ++c) s += m[r * cols + c] * v[c];
      out[r] = s;
    }
  }
  void backward(std::span<const Tensor* const> in, const Tensor&, const Tensor& dout,
                std::span<Tensor* const> din) override {
    const Tensor& m = *in[0];
    const Tensor& v = *in[1];
    const std::size_t rows = m.dim(0), cols = m.dim(1);
    if (din[0])
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) (*din[0])[r * cols + c] += dout[r] * v[c];
    if (din[1])
      for (std::size_t c = 0; c < cols; ++c) {
        double s = 0.0;
        for (std::size_t r = 0; r < rows; ++r) s += dout[r] * m[r * cols + c];
        (*din[1])[c] += s;
      }
  }
};

Expr make_binary(BinaryKind k, Expr a, Expr b) {
  Graph& g = a.graph();
  if (&b.graph() != &g) throw GraphError("operands belong to different graphs");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  Shape out;
  if (sa == sb) out = sa;
  else if (numel(sb) == 1) out = sa;
  else if (numel(sa) == 1) out = sb;
  else throw ShapeError(std::string(binary_name(k)), sa, sb);
  return g.add_op(std::make_unique<BinaryOp>(k), {a, b}, out);
}

Expr make_unary(UnaryKind k, Expr x, double p = 0.0) {
  return x.graph().add_op(std::make_unique<UnaryOp>(k, p), {x}, x.shape());
}

void require_map(const char* op, Expr x) {
  if (x.shape().size() != 3) throw ShapeError(op, "expected an (H x W x C) map, got " + to_string(x.shape()));
}

}  // namespace

Expr operator+(Expr a, Expr b) { return make_binary(BinaryKind::add, a, b); }
Expr operator-(Expr a, Expr b) { return make_binary(BinaryKind::sub, a, b); }
Expr operator*(Expr a, Expr b) { return make_binary(BinaryKind::mul, a, b); }
Expr operator/(Expr a, Expr b) { return make_binary(BinaryKind::div, a, b); }
Expr operator-(Expr a) { return make_unary(UnaryKind::neg, a); }
Expr operator+(Expr a, double b) { return make_unary(UnaryKind::add_scalar, a, b); }
Expr operator+(double a, Expr b) { return make_unary(UnaryKind::add_scalar, b, a); }
Expr operator-(Expr a, double b) { return make_unary(UnaryKind::add_scalar, a, -b); }
Expr operator-(double a, Expr b) { return make_unary(UnaryKind::add_scalar, -b, a); }
Expr operator*(Expr a, double b) { return make_unary(UnaryKind::mul_scalar, a, b); }
Expr operator*(double a, Expr b) { return make_unary(UnaryKind::mul_scalar, b, a); }
Expr operator/(Expr a, double b) { return make_unary(UnaryKind::mul_scalar, a, 1.0 / b); }
Expr operator/(double a, Expr b) { return b.graph().constant(a) / b; }

Expr exp(Expr x) { return make_unary(UnaryKind::exp, x); }
Expr log(Expr x) { return make_unary(UnaryKind::log, x); }
Expr sqrt(Expr x) { return make_unary(UnaryKind::sqrt, x); }
Expr abs(Expr x) { return make_unary(UnaryKind::abs, x); }
Expr pow(Expr x, double p) { return make_unary(UnaryKind::pow, x, p); }
Expr square(Expr x) { return make_unary(UnaryKind::pow, x, 2.0); }
Expr relu(Expr x) { return make_unary(UnaryKind::relu, x); }
Expr sigmoid(Expr x) { return make_unary(UnaryKind::sigmoid, x); }
Expr identity(Expr x) { return make_unary(UnaryKind::identity, x); }

Expr sum(Expr x) { return x.graph().add_op(std::make_unique<ReduceOp>(ReduceKind::sum), {x}, Shape{}); }
Expr mean(Expr x) { return x.graph().add_op(std::make_unique<ReduceOp>(ReduceKind::mean), {x}, Shape{}); }
Expr max(Expr x) { return x.graph().add_op(std::make_unique<ReduceOp>(ReduceKind::max), {x}, Shape{}); }

Expr broadcast(Expr scalar, Shape shape) {
  if (scalar.size() != 1) throw ShapeError("scalar-broadcast", scalar.shape(), shape);
  return scalar.graph().add_op(std::make_unique<BroadcastOp>(), {scalar}, std::move(shape));
}

Expr conv2d(Expr x, Expr kernel, std::size_t stride, Padding padding) {
  require_map("conv2d", x);
  const Shape& xs = x.shape();
  const Shape& ks = kernel.shape();
  if (ks.size() != 4) throw ShapeError("conv2d", "kernel must be (Cout x Cin x Kh x Kw), got " + to_string(ks));
  if (ks[1] != xs[2]) throw ShapeError("conv2d", xs, ks);
  if (stride < 1) throw ShapeError("conv2d", "stride must be >= 1");
  kernels::ConvGeometry g;
  g.in_h = xs[0];
  g.in_w = xs[1];
  g.in_c = xs[2];
  g.out_c = ks[0];
  g.k_h = ks[2];
  g.k_w = ks[3];
  g.stride = stride;
  if (padding == Padding::same) {
    if (g.k_h % 2 == 0 || g.k_w % 2 == 0) throw ShapeError("conv2d", "same padding needs odd kernel sizes");
    g.pad_h = (g.k_h - 1) / 2;
    g.pad_w = (g.k_w - 1) / 2;
  }
  if (g.in_h + 2 * g.pad_h < g.k_h || g.in_w + 2 * g.pad_w < g.k_w) throw ShapeError("conv2d", xs, ks);
  return x.graph().add_op(std::make_unique<Conv2dOp>(g), {x, kernel}, Shape{g.out_h(), g.out_w(), g.out_c});
}

Expr bias_add(Expr x, Expr bias) {
  require_map("bias-add", x);
  if (bias.shape().size() != 1 || bias.shape()[0] != x.shape()[2]) throw ShapeError("bias-add", x.shape(), bias.shape());
  return x.graph().add_op(std::make_unique<BiasAddOp>(), {x, bias}, x.shape());
}

Expr separable_filter(Expr x, std::vector<double> taps_y, std::vector<double> taps_x, std::size_t stride,
                      Padding padding) {
  require_map("windowed-filter", x);
  const Shape& s = x.shape();
  if (taps_y.empty() || taps_x.empty() || stride < 1) throw ShapeError("windowed-filter", "empty taps or zero stride");
  kernels::FilterGeometry gx;
  gx.in_h = s[0];
  gx.in_w = s[1];
  gx.channels = s[2];
  gx.axis = 1;
  gx.taps = taps_x.size();
  gx.stride = stride;
  kernels::FilterGeometry gy = gx;
  gy.axis = 0;
  gy.taps = taps_y.size();
  if (padding == Padding::same) {
    if (taps_x.size() % 2 == 0 || taps_y.size() % 2 == 0) {
      throw ShapeError("windowed-filter", "same padding needs odd window sizes");
    }
    gx.pad = (taps_x.size() - 1) / 2;
    gy.pad = (taps_y.size() - 1) / 2;
  }
  if (s[1] + 2 * gx.pad < gx.taps || s[0] + 2 * gy.pad < gy.taps) {
    throw ShapeError("windowed-filter", "window " + std::to_string(taps_y.size()) + "x" +
                                            std::to_string(taps_x.size()) + " larger than map " + to_string(s));
  }
  gy.in_w = gx.out_w();
  Shape out{gy.out_h(), gy.out_w(), s[2]};
  return x.graph().add_op(std::make_unique<SeparableFilterOp>(gx, gy, std::move(taps_x), std::move(taps_y)), {x},
                          std::move(out));
}

Expr channel_weighted_sum(Expr x, std::vector<double> weights) {
  require_map("channel-weighted-sum", x);
  if (weights.size() != x.shape()[2]) {
    throw ShapeError("channel-weighted-sum", x.shape(), Shape{weights.size()});
  }
  Shape out{x.shape()[0], x.shape()[1], 1};
  return x.graph().add_op(std::make_unique<ChannelWeightedSumOp>(std::move(weights)), {x}, std::move(out));
}

Expr broadcast_channels(Expr x, std::size_t channels) {
  require_map("broadcast-channels", x);
  if (x.shape()[2] != 1) throw ShapeError("broadcast-channels", x.shape(), Shape{channels});
  Shape out{x.shape()[0], x.shape()[1], channels};
  return x.graph().add_op(std::make_unique<BroadcastChannelsOp>(channels), {x}, std::move(out));
}

Expr crop(Expr x, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) {
  require_map("crop", x);
  const Shape& s = x.shape();
  if (h == 0 || w == 0 || y0 + h > s[0] || x0 + w > s[1]) {
    throw ShapeError("crop", "window exceeds map " + to_string(s));
  }
  return x.graph().add_op(std::make_unique<CropOp>(y0, x0), {x}, Shape{h, w, s[2]});
}

Expr adaptive_max_pool(Expr x, std::size_t grid) {
  require_map("adaptive-max-pool", x);
  const Shape& s = x.shape();
  if (grid == 0 || grid > s[0] || grid > s[1]) throw ShapeError("adaptive-max-pool", "grid larger than map " + to_string(s));
  return x.graph().add_op(std::make_unique<AdaptiveMaxPoolOp>(grid), {x}, Shape{grid, grid, s[2]});
}

Expr spatial_mean(Expr x) {
  require_map("spatial-mean", x);
  return x.graph().add_op(std::make_unique<SpatialMeanOp>(), {x}, Shape{1, 1, x.shape()[2]});
}

Expr concat(std::span<const Expr> parts) {
  if (parts.empty()) throw ShapeError("concat", "no operands");
  std::size_t n = 0;
  for (const auto& p : parts) n += p.size();
  return parts[0].graph().add_op(std::make_unique<ConcatOp>(), std::vector<Expr>(parts.begin(), parts.end()), Shape{n});
}

Expr flatten(Expr x) {
  const Expr parts[] = {x};
  return concat(parts);
}

Expr matvec(Expr matrix, Expr v) {
  const Shape& ms = matrix.shape();
  const Shape& vs = v.shape();
  if (ms.size() != 2 || vs.size() != 1 || ms[1] != vs[0]) throw ShapeError("matvec", ms, vs);
  return matrix.graph().add_op(std::make_unique<MatVecOp>(), {matrix, v}, Shape{ms[0]});
}

std::vector<double> gaussian_taps(std::size_t size, double sigma) {
  std::vector<double> t(size);
  const double c = (static_cast<double>(size) - 1.0) / 2.0;
  for (std::size_t i = 0; i < size; ++i) {
    const double d = static_cast<double>(i) - c;
    t[i] = std::exp(-d * d / (2.0 * sigma * sigma));
  }
  const double s = std::accumulate(t.begin(), t.end(), 0.0);
  for (auto& v : t) v /= s;
  return t;
}

Expr local_mean(Expr x, std::size_t window, double sigma, Padding padding) {
  auto taps = gaussian_taps(window, sigma);
  return separable_filter(x, taps, taps, 1, padding);
}

Expr local_variance(Expr x, Expr local_mean_of_x, std::size_t window, double sigma, Padding padding) {
  return local_mean(square(x), window, sigma, padding) - square(local_mean_of_x);
}

}  // namespace iqa::ad
