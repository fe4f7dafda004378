#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "domino/numerics/rng.hpp"
#include "domino/numerics/tensor.hpp"

namespace domino {

struct GradCheckOptions {
  double eps = 1e-5;
  // Coordinates probed per tensor; 0 probes every coordinate.
  std::size_t coords_per_tensor = 0;
  std::uint64_t seed = 0;
};

// Compares reverse-mode gradients of the scalar f() with respect to `wrt`
// against central differences. Returns the max over probed coordinates of
// |autodiff - fd| / max(1, |fd|). f is re-evaluated after each perturbation,
// so it must rebuild its graph from the current tensor values.
double grad_check(const std::function<Tensor()>& f, std::vector<Tensor> wrt,
                  const GradCheckOptions& opts = {});

}  // namespace domino
