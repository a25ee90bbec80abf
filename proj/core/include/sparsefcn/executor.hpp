#pragma once

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "sparsefcn/graph.hpp"
#include "sparsefcn/regions.hpp"
#include "sparsefcn/tensor.hpp"

namespace sparsefcn {

enum class Phase { Train, Infer };

/// Called for every convolution actually evaluated.
using ConvObserver = std::function<void(int node, const Tensor& input, const ConvParams& params, const Tensor& output)>;

struct ExecOptions {
  Phase phase = Phase::Infer;
  /// Crop every Crop node, including the passthrough ones of the plain sparse model.
  bool fast = false;
  /// Regions evaluated by the per-region column; all regions when unset.
  std::optional<std::vector<RegionIndex>> active;
  /// Region mask consumed by RegionGate, (N, 1, rows, cols); all ones when unset.
  std::optional<Tensor> mask;
  ConvObserver on_conv;
  /// Node values taken as given instead of evaluated. Finite differences pin
  /// the stop-gradient nodes so they see the same objective as backward().
  std::map<int, Tensor> pinned;
};

/// Forward values of one evaluation. Nodes not needed by the requested
/// targets stay empty and `computed` is false for them.
struct Activations {
  ExecOptions options;
  RegionGrid grid;
  Dims image_dims;
  std::vector<Tensor> values;
  std::vector<char> computed;
  std::vector<BatchNormResult> bn;  // statistics only; output left empty
};

/// Region grid implied by the graph's region settings and an image size.
RegionGrid grid_for(const ModelGraph& graph, const Dims& image);

/// Checks the image against the graph's input contract (3 channels, dims divisible).
void validate_image(const ModelGraph& graph, const Dims& image);

/// Evaluates the ancestors of `targets` (every node when empty).
Activations forward(const ModelGraph& graph, const Tensor& image, ExecOptions options,
                    std::span<const int> targets = {});

/// Continues an evaluation, e.g. after setting a mask from already computed logits.
void forward_more(const ModelGraph& graph, Activations& acts, std::span<const int> targets = {});

struct Gradients {
  std::vector<Tensor> params;  // aligned with parameters(graph)
  std::vector<Tensor> nodes;   // d loss / d node output; empty where nothing flowed
};

/// Reverse pass from the given (node, d loss / d output) seeds.
Gradients backward(const ModelGraph& graph, const Activations& acts, const std::vector<std::pair<int, Tensor>>& seeds);

/// Output extents of every node for an image of `image` extents. In fast mode
/// the per-region column runs on `crops_per_image` crops per image.
std::vector<Dims> infer_dims(const ModelGraph& graph, const Dims& image, bool fast, int crops_per_image);

/// Folds the batch statistics of a training-phase evaluation into the running statistics.
void apply_bn_statistics(ModelGraph& graph, const Activations& acts);

}  // namespace sparsefcn
