#include "tie/tensor.hpp"

#include <sstream>
#include <unordered_set>

namespace tie {

std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ", ";
    out << shape[i];
  }
  out << ']';
  return out.str();
}

Index element_count(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

namespace {

Shape default_shape(const Matrix& value) { return {value.rows(), value.cols()}; }

void check_storage(const Matrix& value, const Shape& shape) {
  if (element_count(shape) != value.size())
    throw ShapeError("tensor shape " + to_string(shape) + " does not match " +
                     std::to_string(value.size()) + " stored values");
  if (!shape.empty() && value.cols() != shape.back())
    throw ShapeError("tensor shape " + to_string(shape) + " needs " + std::to_string(shape.back()) +
                     " stored columns, got " + std::to_string(value.cols()));
  if (!value.allFinite()) throw NumericError("tensor initialised with non-finite values");
}

}  // namespace

Tensor Tensor::constant(Matrix value) {
  Shape shape = default_shape(value);
  return constant(std::move(value), std::move(shape));
}

Tensor Tensor::constant(Matrix value, Shape shape) {
  check_storage(value, shape);
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  return from_node(std::move(node));
}

Tensor Tensor::leaf(Matrix value, std::string name) {
  Shape shape = default_shape(value);
  return leaf(std::move(value), std::move(shape), std::move(name));
}

Tensor Tensor::leaf(Matrix value, Shape shape, std::string name) {
  Tensor t = constant(std::move(value), std::move(shape));
  t.node_->requires_grad = true;
  t.node_->name = std::move(name);
  return t;
}

Tensor Tensor::from_node(std::shared_ptr<detail::Node> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

Matrix& Tensor::mutable_value() {
  if (!node_->leaf) throw std::logic_error("cannot mutate the value of a derived tensor");
  return node_->value;
}

Real Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return node_->value(0, 0);
}

Matrix Tensor::grad() const {
  if (node_->grad.size() == node_->value.size()) return node_->grad;
  return Matrix::Zero(node_->value.rows(), node_->value.cols());
}

void Tensor::zero_grad() {
  node_->grad.resize(0, 0);
  node_->grad_written = false;
  node_->consumed = false;
}

std::vector<detail::Node*> topological_order(const Tensor& root) {
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  // Iterative post-order DFS; frames hold (node, next parent index).
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }
  return order;
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw std::invalid_argument("backward on an undefined tensor");
  if (loss.size() != 1)
    throw ShapeError("backward requires a scalar loss, got shape " + to_string(loss.shape()));
  auto* root = loss.node().get();
  if (root->consumed)
    throw std::logic_error("backward already ran from this loss; call zero_grad() first");
  if (!root->requires_grad) {
    root->consumed = true;
    return;
  }

  const auto order = topological_order(loss);
  for (auto* node : order) {
    if (node->leaf && node->grad_written)
      throw std::logic_error("leaf '" + node->name +
                             "' already holds a gradient; call zero_grad() before a second backward");
  }

  root->grad_buffer().setConstant(1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (node->leaf) {
      node->grad_buffer();
      node->grad_written = true;
      continue;
    }
    if (node->grad.size() == 0) continue;
    node->backward(*node);
    if (node != root) node->grad.resize(0, 0);
  }
  root->consumed = true;
}

}  // namespace tie
