#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sparsefcn/graph.hpp"
#include "sparsefcn/scene.hpp"
#include "sparsefcn/tensor.hpp"

namespace sparsefcn {

struct TrainConfig {
  double lr = 0.01;
  double momentum = 0.9;
  int iterations = 500;
  int batch = 4;
  double p = 0.25;        // target rate
  double lambda = 0.01;   // penalty scale
  double alpha = 0.9;     // moving-average momentum of q
  double q0 = 0.5;
  double aux_weight = 0.4;
  double bootstrap_fraction = 1.0;
  double weight_decay = 0.0;
  /// Global gradient-norm clip; 0 disables.
  double clip_norm = 5.0;
  std::uint64_t seed = 1;

  void validate() const;
};

struct PixelLoss {
  double loss = 0;
  Tensor grad;                     // d loss / d scores
  std::vector<double> per_pixel;   // cross-entropy per pixel, 0 where ignored
  std::size_t counted = 0;
};

/// Mean cross-entropy of channel-softmaxed scores over pixels whose label is
/// not `ignore_index`; labels have one entry per (n, y, x) of `scores`.
PixelLoss softmax_pixel_loss(const Tensor& scores, const std::vector<int>& labels, int ignore_index = kIgnoreLabel);

/// Keep flags for the ceil(fraction * P) highest-loss pixels of each image;
/// equal losses keep the earlier pixel.
std::vector<char> bootstrap_filter(const std::vector<double>& per_pixel_losses, int images, double fraction);

/// Label map of (n, h, w) reduced by `factor`, sampling pixel (y*f + f/2, x*f + f/2).
std::vector<int> downsample_labels(const std::vector<int>& labels, int n, int h, int w, int factor);

struct IterationRecord {
  int iteration = 0;
  double loss = 0;
  double main = 0;
  double aux_half = 0;
  double aux_full = 0;
  double penalty = 0;
  double rate = 0;  // batch rate r
  double q = 0;     // after the update
  double pixel_acc = 0;  // batch accuracy of the main scores at 1/4 resolution
};

struct TrainResult {
  std::vector<IterationRecord> history;
  double q = 0.5;
};

using IterationCallback = std::function<void(const IterationRecord&)>;

/// SGD with momentum on main + aux_weight * (aux_half + aux_full) + penalty.
/// Throws DivergenceError when the loss stops being finite.
TrainResult train(ModelGraph& graph, const TrainConfig& config, const std::vector<SceneSample>& data,
                  const IterationCallback& on_iteration = {});

std::string history_csv(const std::vector<IterationRecord>& history);

struct GradcheckOptions {
  int samples_per_tensor = 2;
  double step = 1e-5;
  std::uint64_t seed = 1;
  double p = 0.25;
  double lambda = 0.01;
  double alpha = 0.9;
  double q_prev = 0.5;
  double aux_weight = 0.4;
};

struct GradcheckEntry {
  std::string param;
  std::size_t index = 0;
  double analytic = 0;
  double numeric = 0;
  double rel_error = 0;
};

struct GradcheckResult {
  double max_rel_error = 0;
  std::vector<GradcheckEntry> entries;
};

/// Relative error |a - n| / max(|a|, |n|, 1e-6) between analytic and central
/// difference gradients of the training loss, at sampled coordinates of every
/// trainable tensor. Labels are at image resolution.
GradcheckResult gradcheck(const ModelGraph& graph, const Tensor& image, const std::vector<int>& labels,
                          const GradcheckOptions& options = {});

}  // namespace sparsefcn
