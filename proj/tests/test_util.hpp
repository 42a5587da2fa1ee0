#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "afp/graph.hpp"
#include "afp/rng.hpp"

namespace testutil {

using afp::num::Graph;
using afp::num::Tensor;
using afp::num::Var;

inline Tensor<double> random_tensor(afp::Pcg32& rng, afp::num::Shape shape, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& x : t.vec()) x = scale * rng.normal();
  return t;
}

/// Worst mixed error |a - n| / max(1, |a|, |n|) between backprop and central
/// differences over every element of every input. `f` maps leaves to a
/// scalar node.
inline double max_grad_error(std::vector<Tensor<double>> inputs,
                             const std::function<Var(Graph<double>&, const std::vector<Var>&)>& f,
                             double h = 1e-6) {
  Graph<double> g;
  std::vector<Var> leaves;
  for (const auto& t : inputs) leaves.push_back(g.leaf(t));
  g.backward(f(g, leaves));
  std::vector<Tensor<double>> analytic;
  for (auto v : leaves) analytic.push_back(g.grad(v));

  auto eval = [&](const std::vector<Tensor<double>>& xs) {
    Graph<double> g2;
    std::vector<Var> ls;
    for (const auto& t : xs) ls.push_back(g2.constant(t));
    return g2.value(f(g2, ls)).item();
  };
  double worst = 0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      auto up = inputs, down = inputs;
      up[k][i] += h;
      down[k][i] -= h;
      const double num = (eval(up) - eval(down)) / (2 * h);
      const double a = analytic[k][i];
      worst = std::max(worst, std::abs(a - num) / std::max({1.0, std::abs(a), std::abs(num)}));
    }
  }
  return worst;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("afp_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testutil
