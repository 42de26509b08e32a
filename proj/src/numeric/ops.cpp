#include "tie/ops.hpp"

#include <cmath>
#include <numbers>

namespace tie {

using detail::Node;

namespace {

using Backward = std::function<void(Node&)>;

Tensor make_result(Matrix value, Shape shape, std::initializer_list<const Tensor*> inputs,
                   Backward backward, const char* op) {
  if (!value.allFinite()) throw NumericError(std::string(op) + " produced non-finite values");
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool any = false;
  for (const Tensor* t : inputs) any = any || t->requires_grad();
  if (any) {
    node->requires_grad = true;
    node->leaf = false;
    for (const Tensor* t : inputs) node->parents.push_back(t->node());
    node->backward = std::move(backward);
    node->name = op;
  }
  return Tensor::from_node(std::move(node));
}

Tensor make_result(Matrix value, Shape shape, std::span<const Tensor> inputs, Backward backward,
                   const char* op) {
  if (!value.allFinite()) throw NumericError(std::string(op) + " produced non-finite values");
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool any = false;
  for (const Tensor& t : inputs) any = any || t.requires_grad();
  if (any) {
    node->requires_grad = true;
    node->leaf = false;
    for (const Tensor& t : inputs) node->parents.push_back(t.node());
    node->backward = std::move(backward);
    node->name = op;
  }
  return Tensor::from_node(std::move(node));
}

Node* raw(const Tensor& t) { return t.node().get(); }

void require_2d(const Tensor& t, const char* op) {
  if (t.shape().size() != 2)
    throw ShapeError(std::string(op) + " expects a 2-D tensor, got " + to_string(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
}

Shape storage_shape_for(const Shape& shape, Index& rows, Index& cols) {
  if (shape.empty()) {
    rows = cols = 1;
  } else {
    cols = shape.back();
    rows = element_count(shape) / (cols == 0 ? 1 : cols);
  }
  return shape;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  if (a.cols() != b.rows())
    throw ShapeError("matmul: inner dimensions differ, " + to_string(a.shape()) + " x " +
                     to_string(b.shape()));
  Matrix out = a.value() * b.value();
  Shape shape{out.rows(), out.cols()};
  Node* pa = raw(a);
  Node* pb = raw(b);
  return make_result(std::move(out), std::move(shape), {&a, &b},
                     [pa, pb](Node& self) {
                       if (pa->requires_grad) pa->grad_buffer().noalias() += self.grad * pb->value.transpose();
                       if (pb->requires_grad) pb->grad_buffer().noalias() += pa->value.transpose() * self.grad;
                     },
                     "matmul");
}

Tensor transpose(const Tensor& a) {
  require_2d(a, "transpose");
  Matrix out = a.value().transpose();
  Shape shape{out.rows(), out.cols()};
  Node* pa = raw(a);
  return make_result(std::move(out), std::move(shape), {&a},
                     [pa](Node& self) { pa->grad_buffer() += self.grad.transpose(); }, "transpose");
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Node* pa = raw(a);
  Node* pb = raw(b);
  return make_result(a.value() + b.value(), a.shape(), {&a, &b},
                     [pa, pb](Node& self) {
                       if (pa->requires_grad) pa->grad_buffer() += self.grad;
                       if (pb->requires_grad) pb->grad_buffer() += self.grad;
                     },
                     "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Node* pa = raw(a);
  Node* pb = raw(b);
  return make_result(a.value() - b.value(), a.shape(), {&a, &b},
                     [pa, pb](Node& self) {
                       if (pa->requires_grad) pa->grad_buffer() += self.grad;
                       if (pb->requires_grad) pb->grad_buffer() -= self.grad;
                     },
                     "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Node* pa = raw(a);
  Node* pb = raw(b);
  return make_result(a.value().cwiseProduct(b.value()), a.shape(), {&a, &b},
                     [pa, pb](Node& self) {
                       if (pa->requires_grad) pa->grad_buffer() += self.grad.cwiseProduct(pb->value);
                       if (pb->requires_grad) pb->grad_buffer() += self.grad.cwiseProduct(pa->value);
                     },
                     "mul");
}

Tensor scale(const Tensor& a, Real factor) {
  Node* pa = raw(a);
  return make_result(a.value() * factor, a.shape(), {&a},
                     [pa, factor](Node& self) { pa->grad_buffer() += self.grad * factor; }, "scale");
}

Tensor add_bias(const Tensor& a, const Tensor& bias) {
  if (bias.rows() != 1 || bias.cols() != a.cols())
    throw ShapeError("add_bias: bias " + to_string(bias.shape()) + " does not match rows of " +
                     to_string(a.shape()));
  Matrix out = a.value().rowwise() + bias.value().row(0);
  Node* pa = raw(a);
  Node* pb = raw(bias);
  return make_result(std::move(out), a.shape(), {&a, &bias},
                     [pa, pb](Node& self) {
                       if (pa->requires_grad) pa->grad_buffer() += self.grad;
                       if (pb->requires_grad) pb->grad_buffer() += self.grad.colwise().sum();
                     },
                     "add_bias");
}

Tensor concat_last_dim(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_last_dim: no inputs");
  const Shape& first = parts.front().shape();
  if (first.empty()) throw ShapeError("concat_last_dim: scalar inputs");
  Index total = 0;
  std::vector<Node*> nodes;
  std::vector<Index> offsets;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size() || !std::equal(s.begin(), s.end() - 1, first.begin()))
      throw ShapeError("concat_last_dim: incompatible shapes " + to_string(first) + " and " +
                       to_string(s));
    offsets.push_back(total);
    total += s.back();
    nodes.push_back(raw(p));
  }
  Matrix out(parts.front().rows(), total);
  for (std::size_t i = 0; i < parts.size(); ++i)
    out.middleCols(offsets[i], parts[i].cols()) = parts[i].value();
  Shape shape = first;
  shape.back() = total;
  return make_result(std::move(out), std::move(shape), parts,
                     [nodes, offsets](Node& self) {
                       for (std::size_t i = 0; i < nodes.size(); ++i) {
                         if (!nodes[i]->requires_grad) continue;
                         nodes[i]->grad_buffer() += self.grad.middleCols(offsets[i], nodes[i]->value.cols());
                       }
                     },
                     "concat_last_dim");
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (element_count(shape) != a.size())
    throw ShapeError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  Index rows = 0, cols = 0;
  storage_shape_for(shape, rows, cols);
  Matrix out = Eigen::Map<const Matrix>(a.value().data(), rows, cols);
  Node* pa = raw(a);
  return make_result(std::move(out), std::move(shape), {&a},
                     [pa](Node& self) {
                       Matrix& g = pa->grad_buffer();
                       Eigen::Map<Matrix>(g.data(), self.grad.rows(), self.grad.cols()) += self.grad;
                     },
                     "reshape");
}

Tensor slice_rows(const Tensor& a, Index begin, Index count) {
  require_2d(a, "slice_rows");
  if (begin < 0 || count < 0 || begin + count > a.rows())
    throw ShapeError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") outside " + to_string(a.shape()));
  Node* pa = raw(a);
  return make_result(a.value().middleRows(begin, count), {count, a.cols()}, {&a},
                     [pa, begin, count](Node& self) {
                       pa->grad_buffer().middleRows(begin, count) += self.grad;
                     },
                     "slice_rows");
}

Tensor slice_cols(const Tensor& a, Index begin, Index count) {
  require_2d(a, "slice_cols");
  if (begin < 0 || count < 0 || begin + count > a.cols())
    throw ShapeError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") outside " + to_string(a.shape()));
  Node* pa = raw(a);
  return make_result(a.value().middleCols(begin, count), {a.rows(), count}, {&a},
                     [pa, begin, count](Node& self) {
                       pa->grad_buffer().middleCols(begin, count) += self.grad;
                     },
                     "slice_cols");
}

Tensor gather_rows(const Tensor& a, std::span<const Index> rows) {
  require_2d(a, "gather_rows");
  Matrix out(static_cast<Index>(rows.size()), a.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0 || rows[r] >= a.rows())
      throw ShapeError("gather_rows: row " + std::to_string(rows[r]) + " outside " +
                       to_string(a.shape()));
    out.row(static_cast<Index>(r)) = a.value().row(rows[r]);
  }
  Shape shape{out.rows(), out.cols()};
  Node* pa = raw(a);
  std::vector<Index> idx(rows.begin(), rows.end());
  return make_result(std::move(out), std::move(shape), {&a},
                     [pa, idx = std::move(idx)](Node& self) {
                       Matrix& g = pa->grad_buffer();
                       for (std::size_t r = 0; r < idx.size(); ++r) g.row(idx[r]) += self.grad.row(static_cast<Index>(r));
                     },
                     "gather_rows");
}

Tensor gather_cols(const Tensor& a, std::span<const Index> cols) {
  Matrix out(a.rows(), static_cast<Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c) {
    if (cols[c] < 0 || cols[c] >= a.cols())
      throw ShapeError("gather_cols: column " + std::to_string(cols[c]) + " outside " + to_string(a.shape()));
    out.col(static_cast<Index>(c)) = a.value().col(cols[c]);
  }
  Shape shape = a.shape();
  shape.back() = out.cols();
  Node* pa = raw(a);
  std::vector<Index> idx(cols.begin(), cols.end());
  return make_result(std::move(out), std::move(shape), {&a},
                     [pa, idx = std::move(idx)](Node& self) {
                       Matrix& g = pa->grad_buffer();
                       for (std::size_t c = 0; c < idx.size(); ++c) g.col(idx[c]) += self.grad.col(static_cast<Index>(c));
                     },
                     "gather_cols");
}

Tensor embedding_lookup(const Tensor& table, std::span<const int> ids) {
  std::vector<Index> rows;
  rows.reserve(ids.size());
  for (int id : ids) {
    if (id < 0 || id >= table.rows())
      throw std::out_of_range("embedding_lookup: token id " + std::to_string(id) + " outside vocabulary of " +
                              std::to_string(table.rows()));
    rows.push_back(id);
  }
  return gather_rows(table, rows);
}

Tensor gelu(const Tensor& a) {
  const Matrix& x = a.value();
  Matrix out = x.unaryExpr([](Real v) { return 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0)); });
  Node* pa = raw(a);
  return make_result(std::move(out), a.shape(), {&a},
                     [pa](Node& self) {
                       const Matrix d = pa->value.unaryExpr([](Real v) {
                         const Real cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
                         const Real pdf = std::exp(-0.5 * v * v) * std::numbers::inv_sqrtpi / std::numbers::sqrt2;
                         return cdf + v * pdf;
                       });
                       pa->grad_buffer() += self.grad.cwiseProduct(d);
                     },
                     "gelu");
}

namespace {
Real stable_sigmoid(Real z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const Real e = std::exp(z);
  return e / (1.0 + e);
}
}  // namespace

Tensor sigmoid(const Tensor& a) {
  Matrix out = a.value().unaryExpr(&stable_sigmoid);
  Node* pa = raw(a);
  return make_result(out, a.shape(), {&a},
                     [pa, out](Node& self) {
                       pa->grad_buffer() += self.grad.cwiseProduct(out.cwiseProduct((1.0 - out.array()).matrix()));
                     },
                     "sigmoid");
}

Tensor softmax_rows(const Tensor& a, Mask mask) {
  require_2d(a, "softmax_rows");
  if (!a.value().allFinite()) throw NumericError("softmax_rows: non-finite input");
  Matrix out = Matrix::Zero(a.rows(), a.cols());
  for (Index i = 0; i < a.rows(); ++i) {
    const Index width = mask == Mask::causal ? std::min(i + 1, a.cols()) : a.cols();
    auto row = a.value().row(i).head(width);
    const Real mx = row.maxCoeff();
    auto e = (row.array() - mx).exp();
    out.row(i).head(width) = e / e.sum();
  }
  Node* pa = raw(a);
  return make_result(out, a.shape(), {&a},
                     [pa, out](Node& self) {
                       const Eigen::VectorXd inner = self.grad.cwiseProduct(out).rowwise().sum();
                       Matrix g = out.cwiseProduct(self.grad);
                       g -= out.cwiseProduct(inner.replicate(1, out.cols()));
                       pa->grad_buffer() += g;
                     },
                     "softmax_rows");
}

Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias, Real eps) {
  const Index n = a.cols();
  if (gain.rows() != 1 || gain.cols() != n || bias.rows() != 1 || bias.cols() != n)
    throw ShapeError("layer_norm: gain/bias must have " + std::to_string(n) + " entries");
  const Matrix& x = a.value();
  const Eigen::VectorXd mu = x.rowwise().mean();
  Matrix centered = x.colwise() - mu;
  const Eigen::VectorXd inv =
      ((centered.array().square().rowwise().sum() / static_cast<Real>(n)) + eps).rsqrt();
  Matrix xhat = centered.array().colwise() * inv.array();
  Matrix out = (xhat.array().rowwise() * gain.value().row(0).array()).rowwise() +
               bias.value().row(0).array();
  Node* pa = raw(a);
  Node* pg = raw(gain);
  Node* pb = raw(bias);
  return make_result(std::move(out), a.shape(), {&a, &gain, &bias},
                     [pa, pg, pb, xhat, inv, n](Node& self) {
                       if (pg->requires_grad) pg->grad_buffer() += self.grad.cwiseProduct(xhat).colwise().sum();
                       if (pb->requires_grad) pb->grad_buffer() += self.grad.colwise().sum();
                       if (!pa->requires_grad) return;
                       const Matrix dxhat = self.grad.array().rowwise() * pg->value.row(0).array();
                       const Eigen::VectorXd s1 = dxhat.rowwise().sum();
                       const Eigen::VectorXd s2 = dxhat.cwiseProduct(xhat).rowwise().sum();
                       Matrix dx = (static_cast<Real>(n) * dxhat.array()).matrix();
                       dx.colwise() -= s1;
                       dx -= xhat.cwiseProduct(s2.replicate(1, n));
                       dx = dx.array().colwise() * (inv.array() / static_cast<Real>(n));
                       pa->grad_buffer() += dx;
                     },
                     "layer_norm");
}

Tensor dropout(const Tensor& a, Real rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout rate must lie in [0, 1)");
  if (rate == 0.0) return a;
  Matrix keep(a.rows(), a.cols());
  const Real scale_kept = 1.0 / (1.0 - rate);
  for (Index i = 0; i < keep.size(); ++i) keep.data()[i] = rng.bernoulli(rate) ? 0.0 : scale_kept;
  Node* pa = raw(a);
  return make_result(a.value().cwiseProduct(keep), a.shape(), {&a},
                     [pa, keep](Node& self) { pa->grad_buffer() += self.grad.cwiseProduct(keep); },
                     "dropout");
}

Tensor sum(const Tensor& a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  Node* pa = raw(a);
  return make_result(std::move(out), {}, {&a},
                     [pa](Node& self) { pa->grad_buffer().array() += self.grad(0, 0); }, "sum");
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw ShapeError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<Real>(a.size()));
}

Tensor dot(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size())
    throw ShapeError("dot: sizes differ, " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  Matrix out(1, 1);
  out(0, 0) = a.value().cwiseProduct(b.value().reshaped<Eigen::RowMajor>(a.rows(), a.cols())).sum();
  Node* pa = raw(a);
  Node* pb = raw(b);
  return make_result(std::move(out), {}, {&a, &b},
                     [pa, pb](Node& self) {
                       const Real g = self.grad(0, 0);
                       if (pa->requires_grad)
                         pa->grad_buffer() += g * pb->value.reshaped<Eigen::RowMajor>(pa->value.rows(), pa->value.cols());
                       if (pb->requires_grad)
                         pb->grad_buffer() += g * pa->value.reshaped<Eigen::RowMajor>(pb->value.rows(), pb->value.cols());
                     },
                     "dot");
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& targets) {
  require_same_shape(logits, targets, "bce_with_logits");
  const Matrix& z = logits.value();
  const Matrix& t = targets.value();
  for (Index i = 0; i < t.size(); ++i) {
    const Real v = t.data()[i];
    if (v != 0.0 && v != 1.0)
      throw std::invalid_argument("bce_with_logits: target " + std::to_string(v) + " at flat index " +
                                  std::to_string(i) + " is not 0 or 1");
  }
  const Real count = static_cast<Real>(z.size());
  Real total = 0.0;
  for (Index i = 0; i < z.size(); ++i) {
    const Real zi = z.data()[i];
    total += std::max(zi, 0.0) - zi * t.data()[i] + std::log1p(std::exp(-std::abs(zi)));
  }
  Matrix out(1, 1);
  out(0, 0) = total / count;
  Node* pz = raw(logits);
  Node* pt = raw(targets);
  if (targets.requires_grad()) throw std::invalid_argument("bce_with_logits: targets must be constant");
  return make_result(std::move(out), {}, {&logits, &targets},
                     [pz, pt, count](Node& self) {
                       const Matrix s = pz->value.unaryExpr(&stable_sigmoid);
                       pz->grad_buffer() += (self.grad(0, 0) / count) * (s - pt->value);
                     },
                     "bce_with_logits");
}

Tensor biaffine(const Tensor& head, const Tensor& tail, const Tensor& bilinear, const Tensor& pair_linear) {
  require_2d(head, "biaffine");
  require_2d(tail, "biaffine");
  const Index d = head.cols();
  if (tail.cols() != d) throw ShapeError("biaffine: head/tail widths differ");
  if (bilinear.shape().size() != 3 || bilinear.dim(0) != d || bilinear.dim(2) != d)
    throw ShapeError("biaffine: bilinear must be [d, K, d] with d=" + std::to_string(d) + ", got " +
                     to_string(bilinear.shape()));
  const Index k_channels = bilinear.dim(1);
  if (pair_linear.rows() != k_channels || pair_linear.cols() != 2 * d)
    throw ShapeError("biaffine: pair_linear must be [K, 2d], got " + to_string(pair_linear.shape()));
  const Index n = head.rows();
  const Index m = tail.rows();

  // bilinear viewed as d x (K*d); the flat row-major layout is the same for any 2-D storage of [d, K, d].
  using ConstFlat = Eigen::Map<const Matrix>;
  using Flat = Eigen::Map<Matrix>;
  const Matrix projected = head.value() * ConstFlat(bilinear.value().data(), d, k_channels * d);  // n x (K*d)
  const Matrix p = head.value() * pair_linear.value().leftCols(d).transpose();   // n x K
  const Matrix q = tail.value() * pair_linear.value().rightCols(d).transpose();  // m x K
  Matrix out(n * m, k_channels);
  for (Index k = 0; k < k_channels; ++k) {
    const Matrix s = projected.middleCols(k * d, d) * tail.value().transpose();  // n x m
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < m; ++j) out(i * m + j, k) = s(i, j) + p(i, k) + q(j, k);
  }

  Node* ph = raw(head);
  Node* pt = raw(tail);
  Node* pb = raw(bilinear);
  Node* pl = raw(pair_linear);
  return make_result(std::move(out), {n, m, k_channels}, {&head, &tail, &bilinear, &pair_linear},
                     [ph, pt, pb, pl, projected, n, m, d, k_channels](Node& self) {
                       Matrix d_projected(n, k_channels * d);
                       Matrix d_tail = Matrix::Zero(m, d);
                       Matrix dp(n, k_channels), dq(m, k_channels);
                       Matrix gk(n, m);
                       for (Index k = 0; k < k_channels; ++k) {
                         for (Index i = 0; i < n; ++i)
                           for (Index j = 0; j < m; ++j) gk(i, j) = self.grad(i * m + j, k);
                         d_projected.middleCols(k * d, d).noalias() = gk * pt->value;
                         d_tail.noalias() += gk.transpose() * projected.middleCols(k * d, d);
                         dp.col(k) = gk.rowwise().sum();
                         dq.col(k) = gk.colwise().sum().transpose();
                       }
                       const auto linear_head = pl->value.leftCols(d);
                       const auto linear_tail = pl->value.rightCols(d);
                       if (ph->requires_grad) {
                         Matrix& g = ph->grad_buffer();
                         g.noalias() += d_projected * ConstFlat(pb->value.data(), d, k_channels * d).transpose();
                         g.noalias() += dp * linear_head;
                       }
                       if (pt->requires_grad) {
                         Matrix& g = pt->grad_buffer();
                         g += d_tail;
                         g.noalias() += dq * linear_tail;
                       }
                       if (pb->requires_grad) {
                         Matrix& g = pb->grad_buffer();
                         Flat(g.data(), d, k_channels * d).noalias() += ph->value.transpose() * d_projected;
                       }
                       if (pl->requires_grad) {
                         Matrix& g = pl->grad_buffer();
                         g.leftCols(d).noalias() += dp.transpose() * ph->value;
                         g.rightCols(d).noalias() += dq.transpose() * pt->value;
                       }
                     },
                     "biaffine");
}

}  // namespace tie
