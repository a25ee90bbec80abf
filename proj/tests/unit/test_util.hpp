#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "sparsefcn/tensor.hpp"

namespace testutil {

using sparsefcn::Dims;
using sparsefcn::Tensor;

// Owning copy, safe to iterate over a temporary tensor.
inline std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

inline Tensor random_tensor(Dims d, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(d);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

inline double inner(const Tensor& a, const Tensor& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i] * b.data()[i];
  return s;
}

inline double rel_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Largest relative error between `grad` and central differences of
// <weights, f(x)> over every coordinate of x.
inline double fd_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, const Tensor& weights,
                       const Tensor& grad, double step = 1e-5) {
  Tensor probe = x;
  double worst = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe.data()[i];
    probe.data()[i] = orig + step;
    const double plus = inner(weights, f(probe));
    probe.data()[i] = orig - step;
    const double minus = inner(weights, f(probe));
    probe.data()[i] = orig;
    worst = std::max(worst, rel_error(grad.data()[i], (plus - minus) / (2 * step)));
  }
  return worst;
}

}  // namespace testutil
