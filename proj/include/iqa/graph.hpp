#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "iqa/tensor.hpp"

// Reverse-mode differentiation over a closed set of tensor primitives.
//
// A Graph is built once (shapes are checked at construction), then evaluated
// repeatedly: bind values to the input leaves, call forward(root), then
// backward(root, leaf). Sub-graphs that depend only on constants are evaluated
// on the first forward pass and cached.
//
// Subgradient conventions: max() routes the whole adjoint to the first
// maximizing element in scan order; d|x|/dx and relu'(x) are 0 at x = 0.

namespace iqa::ad {

class Graph;

class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Handle to a node of a Graph. Cheap to copy.
class Expr {
 public:
  Expr() = default;
  Expr(Graph* g, std::uint32_t id) : graph_(g), id_(id) {}

  Graph& graph() const;
  std::uint32_t id() const { return id_; }
  const Shape& shape() const;
  std::size_t size() const { return numel(shape()); }
  bool valid() const { return graph_ != nullptr; }

 private:
  Graph* graph_ = nullptr;
  std::uint32_t id_ = 0;
};

enum class Padding { same, valid };

/// A primitive with a forward rule and an adjoint rule.
class Op {
 public:
  virtual ~Op() = default;
  virtual std::string_view name() const = 0;
  virtual void forward(std::span<const Tensor* const> in, Tensor& out) = 0;
  // Accumulates into din[i]; din[i] is null for inputs that need no gradient.
  virtual void backward(std::span<const Tensor* const> in, const Tensor& out, const Tensor& dout,
                        std::span<Tensor* const> din) = 0;
};

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = delete;

  /// Differentiable leaf; its value must be bound before forward().
  Expr input(Shape shape, std::string name = {});
  Expr constant(Tensor value, std::string name = {});
  Expr constant(double value) { return constant(Tensor::scalar(value)); }

  void bind(Expr leaf, const Tensor& value);
  void bind(Expr leaf, std::span<const double> values);

  /// Evaluates every ancestor of `root` and returns its (scalar) value.
  double forward(Expr root);
  /// Evaluates without the scalar requirement.
  const Tensor& evaluate(Expr root);
  /// Gradient of the last forward()'d root with respect to `wrt`.
  Tensor backward(Expr root, Expr wrt);
  /// Same, but writes into `grad` (resized if needed).
  void backward(Expr root, Expr wrt, Tensor& grad);

  const Tensor& value(Expr e) const;
  const Shape& shape_of(std::uint32_t id) const { return nodes_.at(id).value.shape(); }
  std::size_t node_count() const { return nodes_.size(); }
  std::string_view op_name(Expr e) const;

  /// Appends an op node. Used by the builder functions below.
  Expr add_op(std::unique_ptr<Op> op, std::vector<Expr> inputs, Shape out_shape);

 private:
  enum class Kind : std::uint8_t { input, constant, op };
  struct Node {
    Kind kind = Kind::op;
    std::unique_ptr<Op> op;
    std::vector<std::uint32_t> inputs;
    Tensor value;
    Tensor adjoint;
    std::string name;
    bool bound = false;
    bool needs_grad = false;  // depends on some input leaf
    bool cached = false;      // constant-only subgraph already evaluated
  };

  const std::vector<std::uint32_t>& ancestors(std::uint32_t root);
  void check_owned(Expr e) const;

  std::vector<Node> nodes_;
  std::uint32_t order_root_ = UINT32_MAX;
  std::vector<std::uint32_t> order_;
  std::uint64_t generation_ = 0;
  std::uint64_t forward_generation_ = 0;
  std::uint32_t forward_root_ = UINT32_MAX;
};

// Elementwise arithmetic. Operands must have equal shapes, or one of them a
// single element (broadcast).
Expr operator+(Expr a, Expr b);
Expr operator-(Expr a, Expr b);
Expr operator*(Expr a, Expr b);
Expr operator/(Expr a, Expr b);
Expr operator-(Expr a);
Expr operator+(Expr a, double b);
Expr operator+(double a, Expr b);
Expr operator-(Expr a, double b);
Expr operator-(double a, Expr b);
Expr operator*(Expr a, double b);
Expr operator*(double a, Expr b);
Expr operator/(Expr a, double b);
Expr operator/(double a, Expr b);

Expr exp(Expr x);
Expr log(Expr x);
Expr sqrt(Expr x);
Expr abs(Expr x);
Expr pow(Expr x, double p);
Expr square(Expr x);
Expr relu(Expr x);
/// 1 / (1 + exp(-x)), evaluated without overflow.
Expr sigmoid(Expr x);
Expr identity(Expr x);

// Reductions to a scalar.
Expr sum(Expr x);
Expr mean(Expr x);
Expr max(Expr x);

/// Broadcasts a single-element tensor to `shape`.
Expr broadcast(Expr scalar, Shape shape);

/// Cross-correlation of an (H, W, Cin) map with a (Cout, Cin, Kh, Kw) kernel.
/// Same padding requires odd kernel sizes and pads by (K - 1) / 2.
Expr conv2d(Expr x, Expr kernel, std::size_t stride, Padding padding);
/// Adds a per-channel bias of shape (C) to an (H, W, C) map.
Expr bias_add(Expr x, Expr bias);
/// Depthwise separable filter: rows with `taps_y`, columns with `taps_x`.
Expr separable_filter(Expr x, std::vector<double> taps_y, std::vector<double> taps_x, std::size_t stride,
                      Padding padding);
/// (H, W, C) -> (H, W, 1) weighted sum over channels.
Expr channel_weighted_sum(Expr x, std::vector<double> weights);
/// (H, W, 1) -> (H, W, C) replicated over channels.
Expr broadcast_channels(Expr x, std::size_t channels);
/// Spatial window [y0, y0+h) x [x0, x0+w) of an (H, W, C) map.
Expr crop(Expr x, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w);
/// Max over each cell of a grid x grid partition -> (grid, grid, C).
Expr adaptive_max_pool(Expr x, std::size_t grid);
/// Mean over all spatial positions -> (1, 1, C).
Expr spatial_mean(Expr x);
/// Flattens and concatenates -> (N).
Expr concat(std::span<const Expr> parts);
Expr flatten(Expr x);
/// (R, N) matrix times (N) vector -> (R).
Expr matvec(Expr matrix, Expr v);

// Windowed statistics used by the fidelity and quality models.
std::vector<double> gaussian_taps(std::size_t size, double sigma);
Expr local_mean(Expr x, std::size_t window, double sigma, Padding padding);
Expr local_variance(Expr x, Expr local_mean_of_x, std::size_t window, double sigma, Padding padding);

}  // namespace iqa::ad
