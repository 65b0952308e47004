#pragma once

#include <Eigen/Core>

#include <functional>
#include <initializer_list>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

// Reverse-mode automatic differentiation over dense row-major tensors of
// doubles. The graph is built while ops execute (define-by-run); calling
// backward() on a result walks the recorded nodes once in reverse
// topological order.
namespace precog::diff {

using Index = Eigen::Index;
using Shape = std::vector<Index>;
using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

Index numel(const Shape& shape);
std::string to_string(const Shape& shape);

struct Node {
  Eigen::ArrayXd value;
  Eigen::ArrayXd grad;
  Shape shape;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into parents that require grad.
  std::function<void(Node&)> adjoint;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Eigen::ArrayXd values, Shape shape);
  static Tensor constant(const RowMatrix& m);
  static Tensor parameter(Eigen::ArrayXd values, Shape shape);
  static Tensor zeros(Shape shape);
  static Tensor scalar(double v);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  Index dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rank() const { return node_->shape.size(); }
  Index size() const { return node_->value.size(); }
  const Eigen::ArrayXd& values() const { return node_->value; }
  double item() const;
  double operator[](Index i) const { return node_->value[i]; }

  // Rank-2 view (rank-1 tensors are viewed as a single row).
  Eigen::Map<const RowMatrix> matrix() const;

  bool requires_grad() const { return node_ && node_->requires_grad; }
  // Zero-filled when no gradient has been accumulated.
  Eigen::ArrayXd grad() const;
  void zero_grad();

  // Seeds d(this)/d(this) = 1; requires a single-element tensor.
  void backward() const;
  void backward(const Eigen::ArrayXd& seed) const;

  Tensor detach() const;
  const char* op() const { return node_->op; }
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}
  std::shared_ptr<Node> node_;

  friend Tensor make_op(const char*, Eigen::ArrayXd, Shape,
                        const std::vector<Tensor>&,
                        std::function<void(Node&)>);
};

// Builds an op result. The adjoint is kept only when recording is enabled
// and at least one input requires grad. Non-finite values raise
// NumericalError naming the op.
Tensor make_op(const char* op, Eigen::ArrayXd value, Shape shape,
               const std::vector<Tensor>& inputs,
               std::function<void(Node&)> adjoint);
inline Tensor make_op(const char* op, Eigen::ArrayXd value, Shape shape,
                      std::initializer_list<Tensor> inputs,
                      std::function<void(Node&)> adjoint) {
  return make_op(op, std::move(value), std::move(shape),
                 std::vector<Tensor>(inputs), std::move(adjoint));
}

// Accumulates into parents[i]->grad when that parent takes gradients.
inline void accumulate(Node& self, std::size_t i, const Eigen::ArrayXd& g) {
  Node& p = *self.parents[i];
  if (p.requires_grad) p.grad += g;
}

bool grad_enabled();

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Elementwise arithmetic. The second operand may match the first's shape,
// be a single element, or match the first's trailing dimensions (expanded
// along the leading ones).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, double s);
Tensor operator*(double s, const Tensor& a);
Tensor operator-(const Tensor& a);

Tensor matmul(const Tensor& a, const Tensor& b);

Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor square(const Tensor& a);
// Gradient passes on [lo, hi] and is zero strictly outside.
Tensor clamp(const Tensor& a, double lo, double hi);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// Sums over the leading axis: [n, ...] -> [...].
Tensor sum_leading(const Tensor& a);

Tensor slice(const Tensor& a, std::size_t axis, Index begin, Index end);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor reshape(const Tensor& a, Shape shape);
// [...] -> [n, ...]
Tensor broadcast(const Tensor& a, Index n);

struct GradCheckReport {
  double max_rel_error = 0.0;
  double mean_rel_error = 0.0;
  Eigen::ArrayXd analytic;
  Eigen::ArrayXd numeric;
  // Entries whose central difference was not finite.
  std::vector<Index> non_finite;
  // Entries where one-sided differences disagree (kinks such as an active
  // clamp boundary); their central difference is not a derivative.
  std::vector<Index> subgradient_points;
};

// Compares reverse-mode gradients of a scalar function against central
// differences with step h at every coordinate of `point`.
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& fn,
                           const Eigen::ArrayXd& point, const Shape& shape,
                           double h = 1e-5);

double relative_error(double a, double b, double floor = 1e-12);

}  // namespace precog::diff
