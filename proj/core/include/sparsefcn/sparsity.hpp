#pragma once

#include <vector>

#include "sparsefcn/regions.hpp"
#include "sparsefcn/tensor.hpp"

namespace sparsefcn {

/// Bounds applied to the moving-average rate q so the penalty stays finite.
inline constexpr double kRateClamp = 1e-6;

/// Geometry of the tau x tau, stride-tau head producing one logit per region.
ConvSpec sparse_head_spec(int in_channels, int tau);

/// Region logits s, shape (N, 1, rows, cols). No activation applied.
Tensor sparse_head(const Tensor& features, const RegionGrid& grid, const ConvParams& kernel);

/// r_i = mean over regions of sigmoid(s_i): one rate per image.
std::vector<double> rate_per_image(const Tensor& s);

/// r(y, x) = mean over the batch of sigmoid(s(., y, x)); shape (1, 1, rows, cols).
Tensor rate_per_location(const Tensor& s);

/// q = alpha * q_old + (1 - alpha) * r, clamped to [kRateClamp, 1 - kRateClamp].
double update_q(double q_old, double r, double alpha);

/// lambda * (-p log q - (1 - p) log(1 - q)).
double sparsity_penalty(double p, double q, double lambda);

/// d penalty / d q = lambda * ((1 - p) / (1 - q) - p / q).
double sparsity_penalty_grad_q(double p, double q, double lambda);

/// Number of regions kept per image at target rate p: floor(p * cells), with
/// a 1e-9 guard against representation error (0.25 * 32 -> 8, 0.4 * 32 -> 12).
int wta_count(double p, int cells);

/// Winner-take-all per image: the k largest logits get 1, the rest 0.
/// Ties go to the earlier region in row-major order.
Tensor select_wta(const Tensor& s, int k);

/// Regions whose mask entry is nonzero, image-major row-major.
std::vector<RegionIndex> active_regions(const Tensor& mask);

/// Region-constant weight map of (N, 1, target_h, target_w):
/// out(y, x) = mask(Y, X) * sigmoid(s(Y, X)) for the region (Y, X) containing (y, x).
Tensor broadcast_weights(const Tensor& mask, const Tensor& s, int target_h, int target_w);

/// Gradient w.r.t. s of <out_grad, broadcast_weights(mask, s, ...)>; mask is a constant.
Tensor broadcast_weights_adjoint(const Tensor& mask, const Tensor& s, const Tensor& out_grad);

/// Per-run sparse selection state.
struct SparseState {
  Tensor s;                          // (N, 1, rows, cols) logits
  double q = 0.5;                    // moving-average rate
  Tensor mask;                       // (N, 1, rows, cols), entries 0 or 1
  std::vector<RegionIndex> active;   // regions with mask 1
};

}  // namespace sparsefcn
