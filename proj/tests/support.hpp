#pragma once

// Shared helpers for the test suites: finite-difference gradient checking
// and small random fixtures.

#include <catch2/catch_amalgamated.hpp>

#include "irconv/geometry.hpp"
#include "irconv/nn.hpp"
#include "irconv/tape.hpp"

namespace testsup {

using namespace irconv;

// Central finite-difference gradient check.  `build` receives a fresh tape
// and one Var per input tensor and must return a scalar loss; it is invoked
// repeatedly, so it must be a pure function of its inputs.  Every element of
// every input is perturbed.
template <class F>
void check_grad(const std::vector<Tensor<double>> &inputs, F &&build,
                double tol = 1e-5, double guard = 1e-3) {
  Tape<double> tape;
  std::vector<Var<double>> vars;
  vars.reserve(inputs.size());
  for (const auto &t : inputs) vars.push_back(tape.input(t, true));
  Var<double> loss = build(tape, vars);
  tape.backward(loss);
  std::vector<Tensor<double>> grads;
  grads.reserve(vars.size());
  for (auto v : vars) grads.push_back(tape.grad_tensor(v));

  auto eval = [&](const std::vector<Tensor<double>> &mod) {
    Tape<double> t2;
    std::vector<Var<double>> vs;
    vs.reserve(mod.size());
    for (const auto &t : mod) vs.push_back(t2.input(t, true));
    return t2.item(build(t2, vs));
  };

  for (std::size_t vi = 0; vi < inputs.size(); ++vi) {
    for (std::int64_t j = 0; j < inputs[vi].size(); ++j) {
      const double h = 1e-6 * std::max(1.0, std::abs(inputs[vi][j]));
      std::vector<Tensor<double>> mod = inputs;
      mod[vi][j] += h;
      double up = eval(mod);
      mod[vi][j] = inputs[vi][j] - h;
      double down = eval(mod);
      double fd = (up - down) / (2 * h);
      double an = grads[vi][j];
      double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), guard});
      INFO("input " << vi << " element " << j << ": fd=" << fd << " analytic=" << an);
      REQUIRE(rel <= tol);
    }
  }
}

inline Tensor<double> random_positions(Rng &rng, std::int64_t n, double spread = 1.0) {
  return Tensor<double>::uniform({n, 3}, rng, -spread, spread);
}

inline PointCloud<double> random_cloud(Rng &rng, std::int64_t n, std::int64_t c = 0,
                                       double spread = 1.0) {
  PointCloud<double> cl;
  cl.positions = random_positions(rng, n, spread);
  cl.features = Tensor<double>::uniform({n, c}, rng, -1.0, 1.0);
  return cl;
}

} // namespace testsup
