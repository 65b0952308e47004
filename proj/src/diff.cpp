#include "precog/diff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>

namespace precog::diff {

namespace {

thread_local bool g_grad_enabled = true;

enum class Expand { kSame, kScalar, kTrailing };

Expand classify(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Expand::kSame;
  if (b.size() == 1) return Expand::kScalar;
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sb.size() < sa.size() &&
      std::equal(sb.begin(), sb.end(), sa.end() - sb.size())) {
    return Expand::kTrailing;
  }
  throw ShapeError(std::string(op) + ": incompatible shapes " +
                   to_string(sa) + " and " + to_string(sb));
}

// Expands b's values to a's size.
Eigen::ArrayXd expand(const Tensor& a, const Tensor& b, Expand kind) {
  switch (kind) {
    case Expand::kSame:
      return b.values();
    case Expand::kScalar:
      return Eigen::ArrayXd::Constant(a.size(), b.values()[0]);
    case Expand::kTrailing: {
      const Index inner = b.size();
      const Index outer = a.size() / inner;
      return b.values().replicate(outer, 1);
    }
  }
  return {};
}

// Reduces a gradient of a's size to b's size.
Eigen::ArrayXd reduce(const Eigen::ArrayXd& g, Index b_size, Expand kind) {
  switch (kind) {
    case Expand::kSame:
      return g;
    case Expand::kScalar:
      return Eigen::ArrayXd::Constant(1, g.sum());
    case Expand::kTrailing: {
      const Index outer = g.size() / b_size;
      Eigen::Map<const RowMatrix> m(g.data(), outer, b_size);
      return m.colwise().sum().transpose().array();
    }
  }
  return {};
}

template <typename F, typename D>
Tensor unary(const char* name, const Tensor& a, F&& f, D&& dfdx) {
  Eigen::ArrayXd v = f(a.values());
  return make_op(name, v, a.shape(), {a},
                 [dfdx](Node& self) {
                   const Eigen::ArrayXd& x = self.parents[0]->value;
                   accumulate(self, 0, self.grad * dfdx(x, self.value));
                 });
}

struct AxisSplit {
  Index outer = 1;
  Index extent = 1;
  Index inner = 1;
};

AxisSplit split(const Shape& s, std::size_t axis) {
  AxisSplit out;
  for (std::size_t i = 0; i < axis; ++i) out.outer *= s[i];
  out.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) out.inner *= s[i];
  return out;
}

}  // namespace

Index numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) {
  g_grad_enabled = false;
}
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor Tensor::constant(Eigen::ArrayXd values, Shape shape) {
  if (values.size() != numel(shape)) {
    throw ShapeError("constant: " + std::to_string(values.size()) +
                     " values for shape " + to_string(shape));
  }
  auto n = std::make_shared<Node>();
  n->value = std::move(values);
  n->shape = std::move(shape);
  return Tensor(std::move(n));
}

Tensor Tensor::constant(const RowMatrix& m) {
  Eigen::ArrayXd v = Eigen::Map<const Eigen::ArrayXd>(m.data(), m.size());
  return constant(std::move(v), {m.rows(), m.cols()});
}

Tensor Tensor::parameter(Eigen::ArrayXd values, Shape shape) {
  Tensor t = constant(std::move(values), std::move(shape));
  t.node_->requires_grad = true;
  t.node_->grad = Eigen::ArrayXd::Zero(t.size());
  return t;
}

Tensor Tensor::zeros(Shape shape) {
  const Index n = numel(shape);
  return constant(Eigen::ArrayXd::Zero(n), std::move(shape));
}

Tensor Tensor::scalar(double v) {
  return constant(Eigen::ArrayXd::Constant(1, v), {});
}

double Tensor::item() const {
  if (size() != 1) {
    throw ShapeError("item: tensor has shape " + to_string(shape()));
  }
  return node_->value[0];
}

Eigen::Map<const RowMatrix> Tensor::matrix() const {
  const Shape& s = shape();
  if (s.size() == 2) {
    return {node_->value.data(), s[0], s[1]};
  }
  if (s.size() <= 1) {
    return {node_->value.data(), 1, size()};
  }
  throw ShapeError("matrix: expected rank <= 2, got " + to_string(s));
}

Eigen::ArrayXd Tensor::grad() const {
  if (!node_ || node_->grad.size() != size()) {
    return Eigen::ArrayXd::Zero(node_ ? size() : 0);
  }
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) node_->grad = Eigen::ArrayXd::Zero(size());
}

void Tensor::backward() const {
  if (size() != 1) {
    throw ShapeError("backward: non-scalar output of shape " +
                     to_string(shape()) + " needs a seed");
  }
  backward(Eigen::ArrayXd::Ones(1));
}

void Tensor::backward(const Eigen::ArrayXd& seed) const {
  if (seed.size() != size()) {
    throw ShapeError("backward: seed size mismatch");
  }
  if (!requires_grad()) return;

  // Iterative post-order DFS yields a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) {
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (n->adjoint) {
      n->grad = Eigen::ArrayXd::Zero(n->value.size());
    } else if (n->grad.size() != n->value.size()) {
      n->grad = Eigen::ArrayXd::Zero(n->value.size());
    }
  }
  node_->grad += seed;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->adjoint) n->adjoint(*n);
  }
}

Tensor Tensor::detach() const {
  return constant(values(), shape());
}

Tensor make_op(const char* op, Eigen::ArrayXd value, Shape shape,
               const std::vector<Tensor>& inputs,
               std::function<void(Node&)> adjoint) {
  if (!value.allFinite()) {
    throw NumericalError(std::string("non-finite result in op '") + op + "'");
  }
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->shape = std::move(shape);
  n->op = op;
  bool needs = false;
  if (g_grad_enabled) {
    for (const Tensor& t : inputs) needs = needs || t.requires_grad();
  }
  if (needs) {
    n->requires_grad = true;
    n->parents.reserve(inputs.size());
    for (const Tensor& t : inputs) n->parents.push_back(t.node());
    n->adjoint = std::move(adjoint);
  }
  return Tensor(std::move(n));
}

Tensor add(const Tensor& a, const Tensor& b) {
  const Expand k = classify(a, b, "add");
  return make_op("add", a.values() + expand(a, b, k), a.shape(), {a, b},
                 [k](Node& self) {
                   accumulate(self, 0, self.grad);
                   const Index bs = self.parents[1]->value.size();
                   accumulate(self, 1, reduce(self.grad, bs, k));
                 });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  const Expand k = classify(a, b, "sub");
  return make_op("sub", a.values() - expand(a, b, k), a.shape(), {a, b},
                 [k](Node& self) {
                   accumulate(self, 0, self.grad);
                   const Index bs = self.parents[1]->value.size();
                   accumulate(self, 1, -reduce(self.grad, bs, k));
                 });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const Expand k = classify(a, b, "mul");
  Eigen::ArrayXd bx = expand(a, b, k);
  Eigen::ArrayXd v = a.values() * bx;
  return make_op("mul", std::move(v), a.shape(), {a, b},
                 [k, bx = std::move(bx)](Node& self) {
                   accumulate(self, 0, self.grad * bx);
                   if (self.parents[1]->requires_grad) {
                     const Eigen::ArrayXd& av = self.parents[0]->value;
                     const Index bs = self.parents[1]->value.size();
                     accumulate(self, 1, reduce(self.grad * av, bs, k));
                   }
                 });
}

Tensor scale(const Tensor& a, double s) {
  return make_op("scale", a.values() * s, a.shape(), {a},
                 [s](Node& self) { accumulate(self, 0, self.grad * s); });
}

Tensor add_scalar(const Tensor& a, double s) {
  return make_op("add_scalar", a.values() + s, a.shape(), {a},
                 [](Node& self) { accumulate(self, 0, self.grad); });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
Tensor operator*(double s, const Tensor& a) { return scale(a, s); }
Tensor operator-(const Tensor& a) { return neg(a); }

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + to_string(a.shape()) +
                     " and " + to_string(b.shape()));
  }
  const Index m = a.dim(0);
  const Index n = b.dim(1);
  RowMatrix c = a.matrix() * b.matrix();
  Eigen::ArrayXd v = Eigen::Map<const Eigen::ArrayXd>(c.data(), c.size());
  return make_op("matmul", std::move(v), {m, n}, {a, b}, [m, n](Node& self) {
    Eigen::Map<const RowMatrix> g(self.grad.data(), m, n);
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    const Index k = pa.shape[1];
    if (pa.requires_grad) {
      Eigen::Map<const RowMatrix> bm(pb.value.data(), k, n);
      Eigen::Map<RowMatrix> ga(pa.grad.data(), m, k);
      ga.noalias() += g * bm.transpose();
    }
    if (pb.requires_grad) {
      Eigen::Map<const RowMatrix> am(pa.value.data(), m, k);
      Eigen::Map<RowMatrix> gb(pb.grad.data(), k, n);
      gb.noalias() += am.transpose() * g;
    }
  });
}

Tensor tanh(const Tensor& a) {
  return unary(
      "tanh", a, [](const Eigen::ArrayXd& x) { return x.tanh().eval(); },
      [](const Eigen::ArrayXd&, const Eigen::ArrayXd& y) {
        return (1.0 - y.square()).eval();
      });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      "sigmoid", a,
      [](const Eigen::ArrayXd& x) { return (1.0 / (1.0 + (-x).exp())).eval(); },
      [](const Eigen::ArrayXd&, const Eigen::ArrayXd& y) {
        return (y * (1.0 - y)).eval();
      });
}

Tensor exp(const Tensor& a) {
  return unary(
      "exp", a, [](const Eigen::ArrayXd& x) { return x.exp().eval(); },
      [](const Eigen::ArrayXd&, const Eigen::ArrayXd& y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(
      "log", a, [](const Eigen::ArrayXd& x) { return x.log().eval(); },
      [](const Eigen::ArrayXd& x, const Eigen::ArrayXd&) {
        return x.inverse().eval();
      });
}

Tensor relu(const Tensor& a) {
  return unary(
      "relu", a, [](const Eigen::ArrayXd& x) { return x.max(0.0).eval(); },
      [](const Eigen::ArrayXd& x, const Eigen::ArrayXd&) {
        return (x > 0.0).cast<double>().eval();
      });
}

Tensor square(const Tensor& a) {
  return unary(
      "square", a, [](const Eigen::ArrayXd& x) { return x.square().eval(); },
      [](const Eigen::ArrayXd& x, const Eigen::ArrayXd&) {
        return (2.0 * x).eval();
      });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  return unary(
      "clamp", a,
      [lo, hi](const Eigen::ArrayXd& x) { return x.max(lo).min(hi).eval(); },
      [lo, hi](const Eigen::ArrayXd& x, const Eigen::ArrayXd&) {
        return ((x >= lo) && (x <= hi)).cast<double>().eval();
      });
}

Tensor sum(const Tensor& a) {
  return make_op("sum", Eigen::ArrayXd::Constant(1, a.values().sum()), {}, {a},
                 [](Node& self) {
                   const Index n = self.parents[0]->value.size();
                   accumulate(self, 0, Eigen::ArrayXd::Constant(n, self.grad[0]));
                 });
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor sum_leading(const Tensor& a) {
  if (a.rank() < 1) throw ShapeError("sum_leading: scalar input");
  Shape out(a.shape().begin() + 1, a.shape().end());
  const Index inner = numel(out);
  const Index outer = a.dim(0);
  Eigen::Map<const RowMatrix> m(a.values().data(), outer, inner);
  Eigen::ArrayXd v = m.colwise().sum().transpose().array();
  return make_op("sum_leading", std::move(v), std::move(out), {a},
                 [outer](Node& self) {
                   accumulate(self, 0, self.grad.replicate(outer, 1));
                 });
}

Tensor slice(const Tensor& a, std::size_t axis, Index begin, Index end) {
  if (axis >= a.rank() || begin < 0 || end > a.dim(axis) || begin > end) {
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " +
                     std::to_string(end) + ") on axis " +
                     std::to_string(axis) + " of shape " +
                     to_string(a.shape()));
  }
  const AxisSplit s = split(a.shape(), axis);
  const Index len = end - begin;
  Shape out = a.shape();
  out[axis] = len;
  Eigen::ArrayXd v(s.outer * len * s.inner);
  for (Index o = 0; o < s.outer; ++o) {
    v.segment(o * len * s.inner, len * s.inner) =
        a.values().segment((o * s.extent + begin) * s.inner, len * s.inner);
  }
  return make_op("slice", std::move(v), std::move(out), {a},
                 [s, begin, len](Node& self) {
                   Node& p = *self.parents[0];
                   if (!p.requires_grad) return;
                   for (Index o = 0; o < s.outer; ++o) {
                     p.grad.segment((o * s.extent + begin) * s.inner,
                                    len * s.inner) +=
                         self.grad.segment(o * len * s.inner, len * s.inner);
                   }
                 });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Shape out = parts.front().shape();
  if (axis >= out.size()) throw ShapeError("concat: axis out of range");
  Index total = 0;
  for (const Tensor& t : parts) {
    Shape s = t.shape();
    if (s.size() != out.size()) {
      throw ShapeError("concat: rank mismatch " + to_string(out) + " and " +
                       to_string(s));
    }
    s[axis] = out[axis];
    if (s != out) {
      throw ShapeError("concat: shape mismatch " + to_string(out) + " and " +
                       to_string(t.shape()));
    }
    total += t.dim(axis);
  }
  out[axis] = total;
  const AxisSplit s = split(out, axis);
  std::vector<Index> offsets;
  std::vector<Index> extents;
  Eigen::ArrayXd v(numel(out));
  Index offset = 0;
  for (const Tensor& t : parts) {
    const Index len = t.dim(axis);
    for (Index o = 0; o < s.outer; ++o) {
      v.segment((o * total + offset) * s.inner, len * s.inner) =
          t.values().segment(o * len * s.inner, len * s.inner);
    }
    offsets.push_back(offset);
    extents.push_back(len);
    offset += len;
  }

  return make_op(
      "concat", std::move(v), std::move(out), parts,
      [s, total, offsets, extents](Node& self) {
        for (std::size_t i = 0; i < self.parents.size(); ++i) {
          Node& p = *self.parents[i];
          if (!p.requires_grad) continue;
          const Index len = extents[i];
          for (Index o = 0; o < s.outer; ++o) {
            p.grad.segment(o * len * s.inner, len * s.inner) +=
                self.grad.segment((o * total + offsets[i]) * s.inner,
                                  len * s.inner);
          }
        }
      });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw ShapeError("reshape: cannot view " + to_string(a.shape()) + " as " +
                     to_string(shape));
  }
  return make_op("reshape", a.values(), std::move(shape), {a},
                 [](Node& self) { accumulate(self, 0, self.grad); });
}

Tensor broadcast(const Tensor& a, Index n) {
  Shape out;
  out.push_back(n);
  out.insert(out.end(), a.shape().begin(), a.shape().end());
  const Index inner = a.size();
  return make_op("broadcast", a.values().replicate(n, 1), std::move(out), {a},
                 [n, inner](Node& self) {
                   Eigen::Map<const RowMatrix> g(self.grad.data(), n, inner);
                   accumulate(self, 0, g.colwise().sum().transpose().array());
                 });
}

double relative_error(double a, double b, double floor) {
  const double denom = std::max({std::abs(a), std::abs(b), floor});
  return std::abs(a - b) / denom;
}

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& fn,
                           const Eigen::ArrayXd& point, const Shape& shape,
                           double h) {
  GradCheckReport report;
  Tensor x = Tensor::parameter(point, shape);
  Tensor y = fn(x);
  y.backward();
  report.analytic = x.grad();

  auto eval = [&](const Eigen::ArrayXd& p) {
    NoGradGuard guard;
    return fn(Tensor::constant(p, shape)).item();
  };
  const double f0 = eval(point);
  const Index n = point.size();
  report.numeric.resize(n);
  double total = 0.0;
  for (Index i = 0; i < n; ++i) {
    Eigen::ArrayXd plus = point;
    Eigen::ArrayXd minus = point;
    plus[i] += h;
    minus[i] -= h;
    double fp = 0.0;
    double fm = 0.0;
    try {
      fp = eval(plus);
      fm = eval(minus);
    } catch (const NumericalError&) {
      fp = fm = std::numeric_limits<double>::quiet_NaN();
    }
    const double central = (fp - fm) / (2.0 * h);
    report.numeric[i] = central;
    if (!std::isfinite(central)) {
      report.non_finite.push_back(i);
      continue;
    }
    const double forward = (fp - f0) / h;
    const double backward = (f0 - fm) / h;
    const double scale_ref = std::max({std::abs(forward), std::abs(backward),
                                       1e-8});
    if (std::abs(forward - backward) > 1e-2 * scale_ref &&
        std::abs(forward - backward) > 1e3 * h * scale_ref) {
      report.subgradient_points.push_back(i);
      continue;
    }
    const double e = relative_error(report.analytic[i], central, 1e-8);
    report.max_rel_error = std::max(report.max_rel_error, e);
    total += e;
  }
  const Index counted = n - static_cast<Index>(report.non_finite.size() +
                                               report.subgradient_points.size());
  report.mean_rel_error = counted > 0 ? total / static_cast<double>(counted) : 0;
  return report;
}

}  // namespace precog::diff
