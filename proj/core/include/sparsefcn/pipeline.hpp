#pragma once

#include <vector>

#include "sparsefcn/cost.hpp"
#include "sparsefcn/executor.hpp"
#include "sparsefcn/graph.hpp"
#include "sparsefcn/regions.hpp"
#include "sparsefcn/scene.hpp"
#include "sparsefcn/tensor.hpp"

namespace sparsefcn {

struct InferenceResult {
  /// Per-pixel labels at input resolution, image-major row-major.
  std::vector<int> labels;
  int height = 0;
  int width = 0;
  /// Fused class scores at 1/4 resolution.
  Tensor fused_scores;
  /// Region mask used for the full-resolution column (sparse models).
  Tensor mask;
  std::vector<RegionIndex> active;
  /// Convolution multiply-accumulates actually executed.
  std::int64_t macs = 0;
  /// Model cost of the same evaluation.
  CostReport cost;
};

/// Channel argmax of (N, C, H, W); ties go to the lower class.
std::vector<int> argmax_channels(const Tensor& scores);

/// Nearest upsampling of an (N, H, W) label map by an integer factor.
std::vector<int> upsample_labels(const std::vector<int>& labels, int n, int h, int w, int factor);

/// Reference evaluation: the full-resolution column sees every region. For
/// sparse models the fusion still applies the winner-take-all mask at rate p.
InferenceResult classic_infer(const ModelGraph& graph, const Tensor& image, double p);

/// Half column and sparse head first, then the full-resolution column only
/// on the floor(p * regions) selected regions of each image.
InferenceResult fast_infer(const ModelGraph& graph, const Tensor& image, double p);

InferenceResult infer(const ModelGraph& graph, const Tensor& image, InferMode mode, double p);

/// Confusion matrix of inferred labels against the scenes' ground truth.
ConfusionMatrix evaluate(const ModelGraph& graph, const std::vector<SceneSample>& scenes, InferMode mode, double p);

}  // namespace sparsefcn
