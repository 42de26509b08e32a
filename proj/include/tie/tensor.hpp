#ifndef TIE_TENSOR_HPP
#define TIE_TENSOR_HPP

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace tie {

using Real = double;
using Index = Eigen::Index;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Matrix = RowMatrix<Real>;
using Shape = std::vector<Index>;

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string to_string(const Shape& shape);
Index element_count(const Shape& shape);

namespace detail {

// One vertex of the differentiation graph. Leaves own persistent values
// (parameters, inputs); interior nodes are produced by ops and carry a
// closure that pushes their gradient into their parents.
struct Node {
  Shape shape;
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  bool leaf = true;
  // Leaf: gradient written by a backward pass since the last zero_grad().
  bool grad_written = false;
  // Root: backward() already ran from this node.
  bool consumed = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
  std::string name;

  Matrix& grad_buffer() {
    if (grad.rows() != value.rows() || grad.cols() != value.cols())
      grad = Matrix::Zero(value.rows(), value.cols());
    return grad;
  }
};

}  // namespace detail

/// Dense row-major tensor participating in reverse-mode differentiation.
///
/// Storage is always a 2-D Eigen matrix: a tensor of shape [d0, ..., dn]
/// keeps prod(d0..d(n-1)) rows of dn columns, so the last dimension is
/// contiguous. Scalars are 1x1, vectors [n] are 1xn.
class Tensor {
 public:
  Tensor() = default;

  /// Value that never receives gradients.
  static Tensor constant(Matrix value);
  static Tensor constant(Matrix value, Shape shape);
  /// Gradient-carrying leaf (a parameter or a probed input).
  static Tensor leaf(Matrix value, std::string name = {});
  static Tensor leaf(Matrix value, Shape shape, std::string name = {});

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  Index dim(std::size_t axis) const { return node_->shape.at(axis); }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  Index size() const { return node_->value.size(); }

  const Matrix& value() const { return node_->value; }
  /// Mutable access is only granted on leaves; interior values are derived.
  Matrix& mutable_value();
  Real item() const;

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->leaf; }
  /// Gradient accumulated by the last backward pass; zeros if untouched.
  Matrix grad() const;
  void zero_grad();

  const std::string& name() const { return node_->name; }

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  static Tensor from_node(std::shared_ptr<detail::Node> node);

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Reverse pass from a scalar loss. Every reachable gradient-carrying leaf
/// receives d(loss)/d(leaf). Calling it a second time from the same root,
/// or while any reached leaf still holds an unreset gradient, throws.
void backward(const Tensor& loss);

/// Nodes reachable from `root` in an order where parents precede children.
std::vector<detail::Node*> topological_order(const Tensor& root);

}  // namespace tie

#endif  // TIE_TENSOR_HPP
