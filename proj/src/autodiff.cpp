#include "gridlearn/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>

#include "gridlearn/error.hpp"

namespace gridlearn::ad {

std::string shape_string(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

std::size_t shape_size(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

namespace {

using NodePtr = std::shared_ptr<Node>;

[[noreturn]] void shape_fail(const std::string& op, const Shape& a, const Shape& b) {
  throw ShapeError(op + ": incompatible shapes " + shape_string(a) + " and " + shape_string(b));
}

[[noreturn]] void shape_fail(const std::string& op, const Shape& a, const std::string& why) {
  throw ShapeError(op + ": shape " + shape_string(a) + " " + why);
}

NodePtr leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_size(shape) != values.size())
    throw ShapeError("tensor: " + std::to_string(values.size()) + " values for shape " + shape_string(shape));
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->requires_grad = requires_grad;
  n->op = requires_grad ? "parameter" : "constant";
  if (requires_grad) n->grad.assign(n->value.size(), 0.0);
  return n;
}

// Builds an op node; parents and the backward closure are kept only when
// some input needs a gradient.
Tensor make(std::string op, Shape shape, std::vector<double> value, std::vector<NodePtr> parents,
            std::function<void(Node&)> bw) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->op = std::move(op);
  n->requires_grad = std::any_of(parents.begin(), parents.end(), [](const NodePtr& p) { return p->requires_grad; });
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backward = std::move(bw);
  }
  return Tensor(std::move(n));
}

const Node& N(const Tensor& t) {
  if (!t.defined()) throw ShapeError("tensor: use of an undefined tensor");
  return *t.node();
}

bool is_matrix(const Shape& s) { return s.size() == 2; }

// Row-vector length if `r` is [n] or [1, n]; 0 otherwise.
std::size_t row_length(const Shape& s) {
  if (s.size() == 1) return s[0];
  if (s.size() == 2 && s[0] == 1) return s[1];
  return 0;
}

void require_same(const std::string& op, const Tensor& a, const Tensor& b) {
  if (N(a).shape != N(b).shape) shape_fail(op, N(a).shape, N(b).shape);
}

template <typename F, typename D>
Tensor unary(const std::string& op, const Tensor& a, F f, D dfdx) {
  const auto& an = N(a);
  std::vector<double> v(an.value.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = f(an.value[i]);
  return make(op, an.shape, std::move(v), {a.node()}, [dfdx](Node& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      p.grad[i] += self.grad[i] * dfdx(p.value[i], self.value[i]);
  });
}

std::pair<std::size_t, std::size_t> broadcast_check(const std::string& op, const Tensor& a, const Tensor& r) {
  const auto& as = N(a).shape;
  const auto len = row_length(N(r).shape);
  if (!is_matrix(as) || len == 0 || len != as[1]) shape_fail(op, as, N(r).shape);
  return {as[0], as[1]};
}

}  // namespace

// ---------------------------------------------------------------------------

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  return Tensor(leaf(std::move(shape), std::move(values), false));
}
Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  return Tensor(leaf(std::move(shape), std::move(values), true));
}
Tensor Tensor::zeros(Shape shape) {
  const auto n = shape_size(shape);
  return constant(std::move(shape), std::vector<double>(n, 0.0));
}
Tensor Tensor::scalar(double v) { return constant({1}, {v}); }

const Shape& Tensor::shape() const { return N(*this).shape; }
std::size_t Tensor::size() const { return N(*this).value.size(); }
const std::vector<double>& Tensor::values() const { return N(*this).value; }
std::vector<double>& Tensor::mutable_values() {
  N(*this);
  if (!node_->parents.empty() || node_->backward) throw ShapeError("tensor: only leaves are writable");
  return node_->value;
}
const std::vector<double>& Tensor::grad() const {
  const auto& n = N(*this);
  if (!n.requires_grad) throw ShapeError("tensor: " + n.op + " does not track gradients");
  return n.grad;
}
void Tensor::zero_grad() {
  N(*this);
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}
bool Tensor::requires_grad() const { return N(*this).requires_grad; }
const std::string& Tensor::op() const { return N(*this).op; }
double Tensor::item() const {
  const auto& n = N(*this);
  if (n.value.size() != 1) shape_fail("item", n.shape, "is not a scalar");
  return n.value[0];
}
double Tensor::at(std::size_t i, std::size_t j) const {
  const auto& n = N(*this);
  if (!is_matrix(n.shape)) shape_fail("at", n.shape, "is not 2-D");
  return n.value.at(i * n.shape[1] + j);
}
Tensor Tensor::detach() const { return constant(N(*this).shape, N(*this).value); }

void backward(const Tensor& loss) {
  const auto& ln = N(loss);
  if (ln.value.size() != 1) shape_fail("backward", ln.shape, "is not a scalar loss");
  if (!ln.requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node* n : order)
    if (n->backward) n->grad.assign(n->value.size(), 0.0);
  loss.node()->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward) (*it)->backward(**it);
}

// ---------------------------------------------------------------------------
// Elementwise binary.

Tensor add(const Tensor& a, const Tensor& b) {
  require_same("add", a, b);
  std::vector<double> v(N(a).value);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] += N(b).value[i];
  return make("add", N(a).shape, std::move(v), {a.node(), b.node()}, [](Node& self) {
    for (auto& p : self.parents)
      if (p->requires_grad)
        for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same("sub", a, b);
  std::vector<double> v(N(a).value);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] -= N(b).value[i];
  return make("sub", N(a).shape, std::move(v), {a.node(), b.node()}, [](Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (pa.requires_grad) pa.grad[i] += self.grad[i];
      if (pb.requires_grad) pb.grad[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same("mul", a, b);
  std::vector<double> v(N(a).value);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] *= N(b).value[i];
  return make("mul", N(a).shape, std::move(v), {a.node(), b.node()}, [](Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (pa.requires_grad) pa.grad[i] += self.grad[i] * pb.value[i];
      if (pb.requires_grad) pb.grad[i] += self.grad[i] * pa.value[i];
    }
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same("div", a, b);
  std::vector<double> v(N(a).value);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] /= N(b).value[i];
  return make("div", N(a).shape, std::move(v), {a.node(), b.node()}, [](Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (pa.requires_grad) pa.grad[i] += self.grad[i] / pb.value[i];
      if (pb.requires_grad) pb.grad[i] -= self.grad[i] * self.value[i] / pb.value[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Row broadcasting.

Tensor add_row(const Tensor& a, const Tensor& r) {
  const auto [m, n] = broadcast_check("add_row", a, r);
  std::vector<double> v(N(a).value);
  const auto& rv = N(r).value;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) v[i * n + j] += rv[j];
  return make("add_row", N(a).shape, std::move(v), {a.node(), r.node()}, [m, n](Node& self) {
    auto& pa = *self.parents[0];
    auto& pr = *self.parents[1];
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const double g = self.grad[i * n + j];
        if (pa.requires_grad) pa.grad[i * n + j] += g;
        if (pr.requires_grad) pr.grad[j] += g;
      }
  });
}

Tensor mul_row(const Tensor& a, const Tensor& r) {
  const auto [m, n] = broadcast_check("mul_row", a, r);
  std::vector<double> v(N(a).value);
  const auto& rv = N(r).value;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) v[i * n + j] *= rv[j];
  return make("mul_row", N(a).shape, std::move(v), {a.node(), r.node()}, [m, n](Node& self) {
    auto& pa = *self.parents[0];
    auto& pr = *self.parents[1];
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const double g = self.grad[i * n + j];
        if (pa.requires_grad) pa.grad[i * n + j] += g * pr.value[j];
        if (pr.requires_grad) pr.grad[j] += g * pa.value[i * n + j];
      }
  });
}

Tensor div_row(const Tensor& a, const Tensor& r) {
  const auto [m, n] = broadcast_check("div_row", a, r);
  std::vector<double> v(N(a).value);
  const auto& rv = N(r).value;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) v[i * n + j] /= rv[j];
  return make("div_row", N(a).shape, std::move(v), {a.node(), r.node()}, [m, n](Node& self) {
    auto& pa = *self.parents[0];
    auto& pr = *self.parents[1];
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const double g = self.grad[i * n + j];
        if (pa.requires_grad) pa.grad[i * n + j] += g / pr.value[j];
        if (pr.requires_grad) pr.grad[j] -= g * self.value[i * n + j] / pr.value[j];
      }
  });
}

Tensor broadcast_rows(const Tensor& r, std::size_t m) {
  const auto n = row_length(N(r).shape);
  if (n == 0) shape_fail("broadcast_rows", N(r).shape, "is not a row vector");
  std::vector<double> v(m * n);
  for (std::size_t i = 0; i < m; ++i) std::copy(N(r).value.begin(), N(r).value.end(), v.begin() + static_cast<std::ptrdiff_t>(i * n));
  return make("broadcast_rows", {m, n}, std::move(v), {r.node()}, [m, n](Node& self) {
    auto& pr = *self.parents[0];
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) pr.grad[j] += self.grad[i * n + j];
  });
}

Tensor scale(const Tensor& a, double c) {
  return unary("scale", a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Tensor shift(const Tensor& a, double c) {
  return unary("shift", a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

// ---------------------------------------------------------------------------
// Elementwise unary.

Tensor relu(const Tensor& a) {
  return unary("relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
  return unary("sigmoid", a,
               [](double x) {
                 if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
                 const double e = std::exp(x);
                 return e / (1.0 + e);
               },
               [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& a) {
  return unary("tanh", a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sin(const Tensor& a) {
  return unary("sin", a, [](double x) { return std::sin(x); }, [](double x, double) { return std::cos(x); });
}

Tensor cos(const Tensor& a) {
  return unary("cos", a, [](double x) { return std::cos(x); }, [](double x, double) { return -std::sin(x); });
}

Tensor exp(const Tensor& a) {
  return unary("exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor square(const Tensor& a) {
  return unary("square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor log_clamped(const Tensor& a, double floor) {
  return unary("log", a, [floor](double x) { return std::log(std::max(x, floor)); },
               [floor](double x, double) { return x > floor ? 1.0 / x : 0.0; });
}

// ---------------------------------------------------------------------------
// Linear algebra and reductions.

Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto& as = N(a).shape;
  const auto& bs = N(b).shape;
  if (!is_matrix(as) || !is_matrix(bs) || as[1] != bs[0]) shape_fail("matmul", as, bs);
  const std::size_t m = as[0], k = as[1], n = bs[1];
  std::vector<double> v(m * n, 0.0);
  const double* A = N(a).value.data();
  const double* B = N(b).value.data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = v.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += aip * brow[j];
    }
  }
  return make("matmul", {m, n}, std::move(v), {a.node(), b.node()}, [m, k, n](Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const double* G = self.grad.data();
    if (pa.requires_grad) {
      // dA = G * B^T
      const double* B = pb.value.data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          const double* brow = B + p * n;
          const double* grow = G + i * n;
          for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
          pa.grad[i * k + p] += s;
        }
    }
    if (pb.requires_grad) {
      // dB = A^T * G
      const double* A = pa.value.data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = A[i * k + p];
          if (aip == 0.0) continue;
          double* brow = pb.grad.data() + p * n;
          const double* grow = G + i * n;
          for (std::size_t j = 0; j < n; ++j) brow[j] += aip * grow[j];
        }
    }
  });
}

Tensor transpose(const Tensor& a) {
  const auto& as = N(a).shape;
  if (!is_matrix(as)) shape_fail("transpose", as, "is not 2-D");
  const std::size_t m = as[0], n = as[1];
  std::vector<double> v(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) v[j * m + i] = N(a).value[i * n + j];
  return make("transpose", {n, m}, std::move(v), {a.node()}, [m, n](Node& self) {
    auto& pa = *self.parents[0];
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) pa.grad[i * n + j] += self.grad[j * m + i];
  });
}

Tensor softmax(const Tensor& a) {
  const auto& as = N(a).shape;
  std::size_t m = 0, n = 0;
  if (as.size() == 1) {
    m = 1;
    n = as[0];
  } else if (is_matrix(as)) {
    m = as[0];
    n = as[1];
  } else {
    shape_fail("softmax", as, "must be 1-D or 2-D");
  }
  if (n == 0) shape_fail("softmax", as, "has an empty row");
  std::vector<double> v(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* x = N(a).value.data() + i * n;
    const double mx = *std::max_element(x, x + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (v[i * n + j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < n; ++j) v[i * n + j] /= z;
  }
  return make("softmax", as, std::move(v), {a.node()}, [m, n](Node& self) {
    auto& pa = *self.parents[0];
    for (std::size_t i = 0; i < m; ++i) {
      const double* y = self.value.data() + i * n;
      const double* g = self.grad.data() + i * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < n; ++j) pa.grad[i * n + j] += y[j] * (g[j] - dot);
    }
  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double x : N(a).value) s += x;
  return make("sum", {1}, {s}, {a.node()}, [](Node& self) {
    auto& pa = *self.parents[0];
    for (auto& g : pa.grad) g += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  const auto n = N(a).value.size();
  if (n == 0) shape_fail("mean", N(a).shape, "is empty");
  double s = 0.0;
  for (double x : N(a).value) s += x;
  return make("mean", {1}, {s / static_cast<double>(n)}, {a.node()}, [n](Node& self) {
    auto& pa = *self.parents[0];
    for (auto& g : pa.grad) g += self.grad[0] / static_cast<double>(n);
  });
}

Tensor sum_rows(const Tensor& a) {
  const auto& as = N(a).shape;
  if (!is_matrix(as)) shape_fail("sum_rows", as, "is not 2-D");
  const std::size_t m = as[0], n = as[1];
  std::vector<double> v(n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) v[j] += N(a).value[i * n + j];
  return make("sum_rows", {1, n}, std::move(v), {a.node()}, [m, n](Node& self) {
    auto& pa = *self.parents[0];
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) pa.grad[i * n + j] += self.grad[j];
  });
}

// ---------------------------------------------------------------------------
// Structural.

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  if (axis > 1) throw ShapeError("concat: axis must be 0 or 1");
  const auto& s0 = N(parts[0]).shape;
  if (!is_matrix(s0)) shape_fail("concat", s0, "is not 2-D");
  std::size_t rows = 0, cols = 0;
  for (const auto& p : parts) {
    const auto& s = N(p).shape;
    if (!is_matrix(s) || s[1 - axis] != s0[1 - axis]) shape_fail("concat", s0, s);
    if (axis == 0) rows += s[0];
    else cols += s[1];
  }
  if (axis == 0) cols = s0[1];
  else rows = s0[0];
  std::vector<double> v(rows * cols);
  std::vector<NodePtr> parents;
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const auto& s = N(p).shape;
    offsets.push_back(off);
    for (std::size_t i = 0; i < s[0]; ++i)
      for (std::size_t j = 0; j < s[1]; ++j) {
        const auto dst = axis == 0 ? (off + i) * cols + j : i * cols + off + j;
        v[dst] = N(p).value[i * s[1] + j];
      }
    off += axis == 0 ? s[0] : s[1];
    parents.push_back(p.node());
  }
  return make("concat", {rows, cols}, std::move(v), std::move(parents), [axis, cols, offsets](Node& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      auto& p = *self.parents[k];
      if (!p.requires_grad) continue;
      const auto& s = p.shape;
      for (std::size_t i = 0; i < s[0]; ++i)
        for (std::size_t j = 0; j < s[1]; ++j) {
          const auto src = axis == 0 ? (offsets[k] + i) * cols + j : i * cols + offsets[k] + j;
          p.grad[i * s[1] + j] += self.grad[src];
        }
    }
  });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
  const auto& as = N(a).shape;
  if (!is_matrix(as) || axis > 1 || begin > end || end > as[axis])
    shape_fail("slice", as, "cannot be sliced [" + std::to_string(begin) + "," + std::to_string(end) + ") on axis " +
                                std::to_string(axis));
  const std::size_t cols = as[1];
  const std::size_t out_r = axis == 0 ? end - begin : as[0];
  const std::size_t out_c = axis == 0 ? cols : end - begin;
  std::vector<double> v(out_r * out_c);
  for (std::size_t i = 0; i < out_r; ++i)
    for (std::size_t j = 0; j < out_c; ++j) {
      const auto src = axis == 0 ? (begin + i) * cols + j : i * cols + begin + j;
      v[i * out_c + j] = N(a).value[src];
    }
  return make("slice", {out_r, out_c}, std::move(v), {a.node()}, [=](Node& self) {
    auto& pa = *self.parents[0];
    for (std::size_t i = 0; i < out_r; ++i)
      for (std::size_t j = 0; j < out_c; ++j) {
        const auto src = axis == 0 ? (begin + i) * cols + j : i * cols + begin + j;
        pa.grad[src] += self.grad[i * out_c + j];
      }
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_size(shape) != N(a).value.size()) shape_fail("reshape", N(a).shape, shape);
  return make("reshape", std::move(shape), N(a).value, {a.node()}, [](Node& self) {
    auto& pa = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
  });
}

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride) {
  const auto& xs = N(x).shape;
  const auto& ws = N(w).shape;
  if (xs.size() != 3 || ws.size() != 3 || xs[1] != ws[1]) shape_fail("conv1d", xs, ws);
  if (row_length(N(b).shape) != ws[0]) shape_fail("conv1d", ws, N(b).shape);
  if (stride == 0 || xs[2] < ws[2]) shape_fail("conv1d", xs, "is shorter than the kernel");
  const std::size_t B = xs[0], C = xs[1], L = xs[2], O = ws[0], K = ws[2];
  const std::size_t Lo = (L - K) / stride + 1;
  std::vector<double> v(B * O * Lo);
  const auto& X = N(x).value;
  const auto& W = N(w).value;
  const auto& bias = N(b).value;
  for (std::size_t bi = 0; bi < B; ++bi)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t t = 0; t < Lo; ++t) {
        double s = bias[o];
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t k = 0; k < K; ++k) s += W[(o * C + c) * K + k] * X[(bi * C + c) * L + t * stride + k];
        v[(bi * O + o) * Lo + t] = s;
      }
  return make("conv1d", {B, O, Lo}, std::move(v), {x.node(), w.node(), b.node()},
              [=](Node& self) {
                auto& px = *self.parents[0];
                auto& pw = *self.parents[1];
                auto& pb = *self.parents[2];
                for (std::size_t bi = 0; bi < B; ++bi)
                  for (std::size_t o = 0; o < O; ++o)
                    for (std::size_t t = 0; t < Lo; ++t) {
                      const double g = self.grad[(bi * O + o) * Lo + t];
                      if (g == 0.0) continue;
                      if (pb.requires_grad) pb.grad[o] += g;
                      for (std::size_t c = 0; c < C; ++c)
                        for (std::size_t k = 0; k < K; ++k) {
                          const auto xi = (bi * C + c) * L + t * stride + k;
                          const auto wi = (o * C + c) * K + k;
                          if (pw.requires_grad) pw.grad[wi] += g * px.value[xi];
                          if (px.requires_grad) px.grad[xi] += g * pw.value[wi];
                        }
                    }
              });
}

Tensor maxpool1d(const Tensor& x, std::size_t kernel, std::size_t stride) {
  const auto& xs = N(x).shape;
  if (xs.size() != 3 || kernel == 0 || stride == 0 || xs[2] < kernel)
    shape_fail("maxpool1d", xs, "is incompatible with kernel " + std::to_string(kernel));
  const std::size_t B = xs[0], C = xs[1], L = xs[2];
  const std::size_t Lo = (L - kernel) / stride + 1;
  std::vector<double> v(B * C * Lo);
  std::vector<std::size_t> argmax(v.size());
  const auto& X = N(x).value;
  for (std::size_t r = 0; r < B * C; ++r)
    for (std::size_t t = 0; t < Lo; ++t) {
      std::size_t best = r * L + t * stride;
      for (std::size_t k = 1; k < kernel; ++k)
        if (X[r * L + t * stride + k] > X[best]) best = r * L + t * stride + k;
      v[r * Lo + t] = X[best];
      argmax[r * Lo + t] = best;
    }
  return make("maxpool1d", {B, C, Lo}, std::move(v), {x.node()}, [argmax = std::move(argmax)](Node& self) {
    auto& px = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) px.grad[argmax[i]] += self.grad[i];
  });
}

Tensor lower_triangular(const Tensor& packed, std::size_t dim) {
  if (N(packed).value.size() != dim * (dim + 1) / 2)
    shape_fail("lower_triangular", N(packed).shape, "does not pack a " + std::to_string(dim) + "x" + std::to_string(dim) + " triangle");
  std::vector<double> v(dim * dim, 0.0);
  std::size_t idx = 0;
  for (std::size_t i = 0; i < dim; ++i)
    for (std::size_t j = 0; j <= i; ++j) v[i * dim + j] = N(packed).value[idx++];
  return make("lower_triangular", {dim, dim}, std::move(v), {packed.node()}, [dim](Node& self) {
    auto& p = *self.parents[0];
    std::size_t idx = 0;
    for (std::size_t i = 0; i < dim; ++i)
      for (std::size_t j = 0; j <= i; ++j) p.grad[idx++] += self.grad[i * dim + j];
  });
}

Tensor straight_through(const Tensor& value, const Tensor& surrogate) {
  require_same("straight_through", value, surrogate);
  return make("straight_through", N(value).shape, N(value).value, {surrogate.node()}, [](Node& self) {
    auto& p = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
  });
}

// ---------------------------------------------------------------------------

double grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& leaves, double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) throw ConfigError("grad_check: eps must lie in [1e-7, 1e-3]");
  auto params = leaves;
  for (auto& p : params) {
    if (!p.requires_grad()) throw ShapeError("grad_check: leaf does not track gradients");
    p.zero_grad();
  }
  backward(f());
  double worst = 0.0;
  for (auto& p : params) {
    const auto analytic = p.grad();
    auto& vals = p.mutable_values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double saved = vals[i];
      vals[i] = saved + eps;
      const double up = f().item();
      vals[i] = saved - eps;
      const double down = f().item();
      vals[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double err = std::abs(analytic[i] - numeric) / (std::abs(analytic[i]) + std::abs(numeric) + 1e-12);
      worst = std::max(worst, err);
    }
  }
  for (auto& p : params) p.zero_grad();
  return worst;
}

}  // namespace gridlearn::ad
