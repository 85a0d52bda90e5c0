#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

// Reverse-mode automatic differentiation over dense row-major double arrays.
//
// A Tensor is a shared handle to a graph node. Leaves created with
// Tensor::parameter() carry gradients across passes; every primitive appends
// a node whose parents are its inputs. The graph lives as long as the last
// handle to its root, so a "tape" is simply the loss tensor of one forward
// pass. Tapes must stay on one thread.
//
// Gradient conventions:
//  - leaf gradients accumulate over backward() calls until zero_grad();
//  - interior gradients are reset at the start of every backward();
//  - relu'(0) = 0; maxpool routes the gradient to the first maximal entry;
//  - log_clamped() and the clamp inside it pass zero gradient below the floor.
namespace gridlearn::ad {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& s);
std::size_t shape_size(const Shape& s);

struct Node;

class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Shape shape, std::vector<double> values);
  static Tensor parameter(Shape shape, std::vector<double> values);
  static Tensor zeros(Shape shape);
  static Tensor scalar(double v);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const { return shape().at(axis); }
  std::size_t size() const;
  const std::vector<double>& values() const;
  /// Writable view of a leaf's values (optimizers, checkpoint loading).
  std::vector<double>& mutable_values();
  const std::vector<double>& grad() const;
  void zero_grad();
  bool requires_grad() const;
  const std::string& op() const;
  double item() const;
  double at(std::size_t i, std::size_t j) const;

  /// Constant copy of the current value, cut from the graph.
  Tensor detach() const;

  const std::shared_ptr<Node>& node() const noexcept { return node_; }
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<Node> node_;
};

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::string op;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;  // adds self.grad contributions into parents
};

/// Populates gradients of every requires_grad node reachable from `loss`.
/// Throws ShapeError if `loss` is not a single scalar.
void backward(const Tensor& loss);

// Elementwise, identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

// Row broadcasting: a is [m, n]; r has n entries (shape [n] or [1, n]).
Tensor add_row(const Tensor& a, const Tensor& r);
Tensor mul_row(const Tensor& a, const Tensor& r);
Tensor div_row(const Tensor& a, const Tensor& r);
/// [n] or [1, n] -> [m, n].
Tensor broadcast_rows(const Tensor& r, std::size_t m);

Tensor scale(const Tensor& a, double c);
Tensor shift(const Tensor& a, double c);

Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sin(const Tensor& a);
Tensor cos(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor square(const Tensor& a);
/// log(max(a, floor)).
Tensor log_clamped(const Tensor& a, double floor);

/// [m, k] x [k, n].
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
/// Row-wise softmax of a 2-D tensor (a 1-D tensor is one row).
Tensor softmax(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// [m, n] -> [1, n].
Tensor sum_rows(const Tensor& a);

/// 2-D concatenation along axis 0 (rows) or 1 (columns).
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
/// 2-D slice [begin, end) along axis.
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end);
Tensor reshape(const Tensor& a, Shape shape);

/// x [B, C, L], w [O, C, K], b [O] -> [B, O, (L - K) / stride + 1].
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride = 1);
/// x [B, C, L] -> [B, C, (L - k) / stride + 1].
Tensor maxpool1d(const Tensor& x, std::size_t kernel, std::size_t stride);

/// Packed row-major lower triangle (dim * (dim + 1) / 2 entries) -> [dim, dim].
Tensor lower_triangular(const Tensor& packed, std::size_t dim);

/// Forward value of `value`, gradient routed unchanged to `surrogate`.
Tensor straight_through(const Tensor& value, const Tensor& surrogate);

/// Central-difference check of d f / d leaves against backward(). Returns
/// max over coordinates of |a - n| / (|a| + |n| + 1e-12). `f` must rebuild
/// the scalar loss from the current leaf values on every call.
double grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& leaves, double eps = 1e-6);

}  // namespace gridlearn::ad
