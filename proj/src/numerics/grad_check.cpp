#include "domino/numerics/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "domino/numerics/error.hpp"

namespace domino {

double grad_check(const std::function<Tensor()>& f, std::vector<Tensor> wrt,
                  const GradCheckOptions& opts) {
  for (auto& t : wrt) {
    if (!t.requires_grad()) throw ContractError("grad_check: tensor does not require grad");
    t.zero_grad();
  }
  Tensor out = f();
  if (out.size() != 1) throw ShapeError("grad_check: f must be scalar");
  out.backward();

  std::vector<std::vector<double>> analytic;
  for (auto& t : wrt) {
    analytic.emplace_back(t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                                       : std::vector<double>(t.size(), 0.0));
  }

  Rng rng(opts.seed);
  double worst = 0.0;
  for (std::size_t ti = 0; ti < wrt.size(); ++ti) {
    auto values = wrt[ti].mutable_data();
    std::vector<std::size_t> coords(values.size());
    std::iota(coords.begin(), coords.end(), 0);
    if (opts.coords_per_tensor > 0 && opts.coords_per_tensor < coords.size()) {
      for (std::size_t i = 0; i < opts.coords_per_tensor; ++i) {
        std::swap(coords[i], coords[i + rng.uniform_int(coords.size() - i)]);
      }
      coords.resize(opts.coords_per_tensor);
    }
    for (auto c : coords) {
      const double orig = values[c];
      double fp, fm;
      {
        NoGradGuard ng;
        values[c] = orig + opts.eps;
        fp = f().item();
        values[c] = orig - opts.eps;
        fm = f().item();
      }
      values[c] = orig;
      const double fd = (fp - fm) / (2.0 * opts.eps);
      const double err = std::abs(analytic[ti][c] - fd) / std::max(1.0, std::abs(fd));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace domino
