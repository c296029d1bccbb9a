#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "cmlm/graph.hpp"
#include "cmlm/optim.hpp"
#include "cmlm/rng.hpp"

namespace testutil {

inline cmlm::TensorD rand_tensor(std::vector<int> shape, cmlm::Rng& rng, double lo = -1.0,
                                 double hi = 1.0) {
  cmlm::TensorD t(std::move(shape));
  for (auto& x : t.v) x = lo + (hi - lo) * rng.next_double();
  return t;
}

// Finite-difference check of one op composition: `build` wires the graph
// from the registered parameter nodes down to a scalar.
inline cmlm::GradCheckReport check_graph_grad(
    std::vector<cmlm::TensorD>& params,
    const std::function<int(cmlm::GraphD&, const std::vector<int>&)>& build, double h = 1e-5) {
  std::vector<cmlm::TensorD> grads;
  for (auto& p : params) grads.emplace_back(p.shape);
  auto make = [&](cmlm::GraphD& g) {
    std::vector<int> ids;
    for (size_t i = 0; i < params.size(); ++i) ids.push_back(g.param(&params[i], &grads[i]));
    return build(g, ids);
  };
  {
    cmlm::GraphD g;
    const int loss = make(g);
    g.backward(loss);
  }
  auto forward = [&]() {
    cmlm::GraphD g;
    return g.scalar_value(make(g));
  };
  std::vector<std::pair<std::string, cmlm::TensorD*>> named;
  for (size_t i = 0; i < params.size(); ++i) named.emplace_back("p" + std::to_string(i), &params[i]);
  return cmlm::grad_check(forward, named, grads, h);
}

// Random orthogonal matrix as a product of Givens rotations.
inline std::vector<double> random_orthogonal(int d, cmlm::Rng& rng, int sweeps = 4) {
  std::vector<double> q(static_cast<size_t>(d) * d, 0.0);
  for (int i = 0; i < d; ++i) q[static_cast<size_t>(i) * d + i] = 1.0;
  for (int s = 0; s < sweeps; ++s) {
    for (int i = 0; i < d; ++i) {
      for (int j = i + 1; j < d; ++j) {
        const double t = rng.next_double() * 2.0 * 3.14159265358979323846;
        const double c = std::cos(t), sn = std::sin(t);
        for (int r = 0; r < d; ++r) {
          const double a = q[static_cast<size_t>(r) * d + i];
          const double b = q[static_cast<size_t>(r) * d + j];
          q[static_cast<size_t>(r) * d + i] = c * a - sn * b;
          q[static_cast<size_t>(r) * d + j] = sn * a + c * b;
        }
      }
    }
  }
  return q;
}

}  // namespace testutil
