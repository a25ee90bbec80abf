#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sparsefcn/graph.hpp"
#include "sparsefcn/tensor.hpp"

namespace sparsefcn {

enum class InferMode { Classic, Fast };

std::string_view to_string(InferMode m);
InferMode infer_mode_from_string(std::string_view s);

struct LayerCost {
  std::string layer;
  ColumnTag column = ColumnTag::Shared;
  bool per_region = false;
  std::int64_t macs = 0;
};

/// Convolution multiply-accumulates of one forward pass. Everything that is
/// not a convolution counts zero.
struct CostReport {
  std::vector<LayerCost> per_layer;
  std::int64_t total = 0;
  struct Breakdown {
    std::int64_t half_column = 0;             // half-resolution column, whole image
    std::int64_t full_column_per_region = 0;  // full-resolution column, one crop of one image
    std::int64_t fixed_overhead = 0;          // everything else (heads, dense full column of non-sparse models)
  } breakdown;
  int images = 1;
  int regions_per_image = 0;  // crops evaluated per image (k); 0 for non-sparse models
};

/// n * c_out * h_out * w_out * (c_in / groups) * k_h * k_w.
std::int64_t mac_of_conv(const Dims& input, const ConvSpec& spec);

/// Cost of one evaluation of the `main` output. Classic mode evaluates every
/// region; fast mode evaluates `k` regions per image and needs a sparse model.
/// total == half_column + fixed_overhead + images * k * full_column_per_region.
CostReport mac_of_pipeline(const ModelGraph& graph, const Dims& image, InferMode mode, int k);

/// Human-readable table.
std::string format_text(const CostReport& report);
/// key=value lines; field names are listed in docs/cost_report.md.
std::string format_kv(const CostReport& report);

}  // namespace sparsefcn
