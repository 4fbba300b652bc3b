#pragma once

// Shared helpers for the test suites.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "egmae/egmae.hpp"

namespace egmae::testing {

using TensorD = Tensor<double>;

inline std::vector<double> random_values(std::size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

inline TensorD random_tensor(const Shape& s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  return TensorD(s, random_values(shape_numel(s), rng, lo, hi), true);
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::string worst;
};

/// Relative error with a floor on the denominator so that entries that are
/// zero analytically are judged by absolute error.
inline double rel_error(double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-3}); }

/// Compares reverse-mode gradients of the scalar `f(inputs)` against central
/// finite differences for every element of every input.
inline GradCheck grad_check(std::vector<TensorD> inputs, const std::function<TensorD(const std::vector<TensorD>&)>& f,
                            double h = 1e-5) {
  for (auto& t : inputs) t.zero_grad();
  f(inputs).backward();
  GradCheck out;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    if (!inputs[k].requires_grad()) continue;
    const auto analytic = inputs[k].grad_or_zero();
    auto data = inputs[k].mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double orig = data[i];
      data[i] = orig + h;
      double fp, fm;
      {
        NoGradGuard g;
        fp = f(inputs).item();
        data[i] = orig - h;
        fm = f(inputs).item();
      }
      data[i] = orig;
      const double numeric = (fp - fm) / (2 * h);
      const double e = rel_error(analytic[i], numeric);
      if (e > out.max_rel_error) {
        out.max_rel_error = e;
        out.worst = "input " + std::to_string(k) + " element " + std::to_string(i) + ": analytic " +
                    std::to_string(analytic[i]) + " numeric " + std::to_string(numeric);
      }
    }
  }
  return out;
}

/// sum(y ⊙ r) for a fixed random r: turns any output into a scalar whose
/// gradient exercises every output element with a distinct weight.
inline TensorD project(const TensorD& y, std::mt19937_64& rng) {
  return sum(mul(y, TensorD(y.shape(), random_values(y.numel(), rng))));
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("egmae_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace egmae::testing
