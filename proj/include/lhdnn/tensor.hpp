#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

namespace lhdnn {

// Dense row-major value holder with an optional gradient slot of the same
// shape.  Parameters are Tensors with requires_grad set; activations and
// batches usually do without.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty unless requires_grad
  bool requires_grad = false;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s, bool needs_grad = false)
      : shape(std::move(s)), requires_grad(needs_grad) {
    values.assign(count(), 0.0);
    if (requires_grad) grad.assign(count(), 0.0);
  }

  std::size_t count() const {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           [](std::size_t a, std::size_t b) { return a * b; });
  }
  std::size_t rank() const { return shape.size(); }

  void zero_grad() {
    if (requires_grad) grad.assign(values.size(), 0.0);
  }

  bool all_finite() const {
    for (double v : values)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

}  // namespace lhdnn
