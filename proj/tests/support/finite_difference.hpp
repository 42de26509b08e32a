#ifndef TIE_TESTS_FINITE_DIFFERENCE_HPP
#define TIE_TESTS_FINITE_DIFFERENCE_HPP

// Central-difference oracle. Only evaluates forward values; never touches
// the backward path it is used to check.

#include "tie/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace tie::testing {

inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline double numeric_derivative(const std::function<Tensor()>& f, Tensor& leaf, Index flat,
                                 double step = 1e-5) {
  double* slot = leaf.mutable_value().data() + flat;
  const double saved = *slot;
  *slot = saved + step;
  const double up = f().item();
  *slot = saved - step;
  const double down = f().item();
  *slot = saved;
  return (up - down) / (2.0 * step);
}

/// Largest relative error between backward() and central differences over
/// every entry of every leaf.
inline double max_gradient_error(const std::function<Tensor()>& f, std::vector<Tensor> leaves,
                                 double step = 1e-5, double floor = 1e-6) {
  for (auto& leaf : leaves) leaf.zero_grad();
  backward(f());
  double worst = 0.0;
  for (auto& leaf : leaves) {
    const Matrix analytic = leaf.grad();
    for (Index i = 0; i < leaf.size(); ++i) {
      const double numeric = numeric_derivative(f, leaf, i, step);
      worst = std::max(worst, relative_error(analytic.data()[i], numeric, floor));
    }
  }
  for (auto& leaf : leaves) leaf.zero_grad();
  return worst;
}

}  // namespace tie::testing

#endif
