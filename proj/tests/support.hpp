#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "amt/tape.hpp"

namespace amt::testing {

inline Array random_array(std::vector<std::size_t> shape, std::mt19937_64& rng, double lo = -1.0,
                          double hi = 1.0) {
  Array a(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : a.data) v = u(rng);
  return a;
}

inline double rel_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

using LossBuilder = std::function<Var(Tape&, const std::vector<Var>&)>;

/// Largest relative error between tape gradients and central differences,
/// over every entry of every input.
inline double max_grad_error(std::vector<Array> inputs, const LossBuilder& build,
                             double step = 1e-6, double floor = 1e-6) {
  Tape tape;
  std::vector<Var> vars;
  for (const Array& a : inputs) vars.push_back(tape.parameter(a));
  Var loss = build(tape, vars);
  tape.backward(loss);
  std::vector<Array> grads;
  for (const Var& v : vars) {
    grads.push_back(v.grad().data.empty() ? Array(v.value().shape) : v.grad());
  }

  auto eval = [&](const std::vector<Array>& xs) {
    Tape t;
    std::vector<Var> vs;
    for (const Array& a : xs) vs.push_back(t.constant(a));
    return build(t, vs).value().data[0];
  };
  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t j = 0; j < inputs[i].size(); ++j) {
      const double keep = inputs[i].data[j];
      inputs[i].data[j] = keep + step;
      const double up = eval(inputs);
      inputs[i].data[j] = keep - step;
      const double down = eval(inputs);
      inputs[i].data[j] = keep;
      worst = std::max(worst, rel_error(grads[i].data[j], (up - down) / (2 * step), floor));
    }
  }
  return worst;
}

}  // namespace amt::testing
