#include "sparsefcn/sparsity.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "sparsefcn/errors.hpp"

namespace sparsefcn {

ConvSpec sparse_head_spec(int in_channels, int tau) {
  ConvSpec s;
  s.in_channels = in_channels;
  s.out_channels = 1;
  s.kernel_h = tau;
  s.kernel_w = tau;
  s.stride = tau;
  return s;
}

Tensor sparse_head(const Tensor& features, const RegionGrid& grid, const ConvParams& kernel) {
  const Dims d = features.dims();
  if (d.h != grid.rows * grid.tau || d.w != grid.cols * grid.tau) {
    throw ParameterError("sparse_head: features " + to_string(d) + " are not " + std::to_string(grid.rows) + "x" +
                         std::to_string(grid.cols) + " blocks of tau=" + std::to_string(grid.tau));
  }
  if (kernel.spec != sparse_head_spec(d.c, grid.tau)) {
    throw ParameterError("sparse_head: kernel must be a single tau x tau, stride-tau filter");
  }
  return conv2d(features, kernel);
}

std::vector<double> rate_per_image(const Tensor& s) {
  const Dims d = s.dims();
  std::vector<double> r(static_cast<std::size_t>(d.n), 0.0);
  const double cells = static_cast<double>(d.c) * static_cast<double>(d.plane());
  for (int n = 0; n < d.n; ++n) {
    double sum = 0.0;
    for (int c = 0; c < d.c; ++c) {
      for (double v : s.plane(n, c)) sum += sigmoid(v);
    }
    r[n] = sum / cells;
  }
  return r;
}

Tensor rate_per_location(const Tensor& s) {
  const Dims d = s.dims();
  Tensor r({1, d.c, d.h, d.w});
  if (d.n == 0) throw ParameterError("rate_per_location: empty batch");
  for (int c = 0; c < d.c; ++c) {
    auto rp = r.plane(0, c);
    for (int n = 0; n < d.n; ++n) {
      auto sp = s.plane(n, c);
      for (std::size_t i = 0; i < sp.size(); ++i) rp[i] += sigmoid(sp[i]);
    }
    for (double& v : rp) v /= d.n;
  }
  return r;
}

double update_q(double q_old, double r, double alpha) {
  const double q = alpha * q_old + (1.0 - alpha) * r;
  return std::clamp(q, kRateClamp, 1.0 - kRateClamp);
}

double sparsity_penalty(double p, double q, double lambda) {
  if (lambda == 0.0) return 0.0;
  q = std::clamp(q, kRateClamp, 1.0 - kRateClamp);
  return lambda * (-p * std::log(q) - (1.0 - p) * std::log(1.0 - q));
}

double sparsity_penalty_grad_q(double p, double q, double lambda) {
  if (lambda == 0.0) return 0.0;
  q = std::clamp(q, kRateClamp, 1.0 - kRateClamp);
  return lambda * ((1.0 - p) / (1.0 - q) - p / q);
}

int wta_count(double p, int cells) {
  if (!(p >= 0.0 && p <= 1.0)) throw ParameterError("wta_count: p must lie in [0, 1]");
  return static_cast<int>(std::floor(p * cells + 1e-9));
}

Tensor select_wta(const Tensor& s, int k) {
  const Dims d = s.dims();
  const int cells = d.c * d.h * d.w;
  if (k < 0 || k > cells) {
    throw ParameterError("select_wta: k=" + std::to_string(k) + " outside [0, " + std::to_string(cells) + "]");
  }
  Tensor mask(d);
  std::vector<int> order(static_cast<std::size_t>(cells));
  for (int n = 0; n < d.n; ++n) {
    const double* v = &s.data()[s.offset(n, 0, 0, 0)];
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [v](int a, int b) { return v[a] > v[b]; });
    double* m = &mask.data()[mask.offset(n, 0, 0, 0)];
    for (int i = 0; i < k; ++i) m[order[i]] = 1.0;
  }
  return mask;
}

std::vector<RegionIndex> active_regions(const Tensor& mask) {
  const Dims d = mask.dims();
  std::vector<RegionIndex> out;
  for (int n = 0; n < d.n; ++n) {
    for (int y = 0; y < d.h; ++y) {
      for (int x = 0; x < d.w; ++x) {
        if (mask.at(n, 0, y, x) != 0.0) out.push_back({n, y, x});
      }
    }
  }
  return out;
}

Tensor broadcast_weights(const Tensor& mask, const Tensor& s, int target_h, int target_w) {
  const Dims d = s.dims();
  if (mask.dims() != d || d.c != 1) {
    throw ParameterError("broadcast_weights: mask " + to_string(mask.dims()) + " vs logits " + to_string(d));
  }
  if (d.h <= 0 || d.w <= 0 || target_h % d.h != 0 || target_w % d.w != 0) {
    throw ParameterError("broadcast_weights: target " + std::to_string(target_h) + "x" + std::to_string(target_w) +
                         " is not a multiple of the " + std::to_string(d.h) + "x" + std::to_string(d.w) + " grid");
  }
  const int fy = target_h / d.h;
  const int fx = target_w / d.w;
  Tensor out({d.n, 1, target_h, target_w});
  for (int n = 0; n < d.n; ++n) {
    for (int y = 0; y < target_h; ++y) {
      for (int x = 0; x < target_w; ++x) {
        const int ry = y / fy;
        const int rx = x / fx;
        out.at(n, 0, y, x) = mask.at(n, 0, ry, rx) * sigmoid(s.at(n, 0, ry, rx));
      }
    }
  }
  return out;
}

Tensor broadcast_weights_adjoint(const Tensor& mask, const Tensor& s, const Tensor& out_grad) {
  const Dims d = s.dims();
  const Dims gd = out_grad.dims();
  if (gd.n != d.n || gd.c != 1 || gd.h % d.h != 0 || gd.w % d.w != 0) {
    throw ParameterError("broadcast_weights_adjoint: out_grad " + to_string(gd));
  }
  const int fy = gd.h / d.h;
  const int fx = gd.w / d.w;
  Tensor g(d);
  for (int n = 0; n < d.n; ++n) {
    for (int y = 0; y < gd.h; ++y) {
      for (int x = 0; x < gd.w; ++x) g.at(n, 0, y / fy, x / fx) += out_grad.at(n, 0, y, x);
    }
    for (int ry = 0; ry < d.h; ++ry) {
      for (int rx = 0; rx < d.w; ++rx) {
        const double sg = sigmoid(s.at(n, 0, ry, rx));
        g.at(n, 0, ry, rx) *= mask.at(n, 0, ry, rx) * sg * (1.0 - sg);
      }
    }
  }
  return g;
}

}  // namespace sparsefcn
