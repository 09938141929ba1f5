#pragma once

// Test-only finite-difference oracle, independent of the reverse sweep.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "laso/rng.hpp"
#include "laso/tensor.hpp"

namespace laso::testing {

/// Central differences of `f` w.r.t. every entry of every tensor.
inline std::vector<double> numeric_grad(const std::function<double()>& f,
                                        const std::vector<Tensor*>& params, double h = 1e-5) {
  std::vector<double> out;
  for (Tensor* p : params) {
    for (std::size_t i = 0; i < p->numel(); ++i) {
      const double saved = (*p)[i];
      (*p)[i] = saved + h;
      const double up = f();
      (*p)[i] = saved - h;
      const double down = f();
      (*p)[i] = saved;
      out.push_back((up - down) / (2 * h));
    }
  }
  return out;
}

inline std::vector<double> flat_grads(const std::vector<Tensor*>& params) {
  std::vector<double> out;
  for (Tensor* p : params) {
    if (p->has_grad()) {
      out.insert(out.end(), p->grad().begin(), p->grad().end());
    } else {
      out.insert(out.end(), p->numel(), 0.0);
    }
  }
  return out;
}

inline double rel_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), 1e-4});
}

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = uniform(rng, lo, hi);
  t.set_requires_grad(true);
  return t;
}

}  // namespace laso::testing
