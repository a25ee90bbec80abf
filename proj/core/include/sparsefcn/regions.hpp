#pragma once

#include <optional>
#include <span>
#include <vector>

#include "sparsefcn/tensor.hpp"

namespace sparsefcn {

/// Partition of an image into rows x cols square regions of region_px pixels.
///
/// `feature_stride` is the stride, in full-resolution pixels, of the feature
/// map the sparse head reads; tau = region_px / feature_stride is the side of
/// the tau x tau block of feature vectors that belongs to one region.
struct RegionGrid {
  int region_px = 16;
  int rows = 0;
  int cols = 0;
  int tau = 1;
  int feature_stride = 16;

  int cells() const noexcept { return rows * cols; }
  int image_h() const noexcept { return rows * region_px; }
  int image_w() const noexcept { return cols * region_px; }

  /// Throws ParameterError unless the image divides exactly into regions and
  /// the region side divides exactly by feature_stride.
  static RegionGrid for_image(int image_h, int image_w, int region_px, int feature_stride);

  bool operator==(const RegionGrid&) const = default;
};

/// One region of one image in a batch.
struct RegionIndex {
  int image = 0;
  int row = 0;
  int col = 0;
  auto operator<=>(const RegionIndex&) const = default;
};

/// All regions of `images` images in row-major order, image-major.
std::vector<RegionIndex> all_regions(const RegionGrid& grid, int images);

/// Side of one region in a map whose pixels cover `stride` image pixels.
int region_footprint(const RegionGrid& grid, int stride);

/// Splits (N, C, rows*f, cols*f) into crops of (f x f), f = region_px / stride,
/// stacked along the batch axis. Without `active` every region is emitted in
/// image-major row-major order; with it, only the listed regions, in list order.
Tensor crop_grid(const Tensor& input, const RegionGrid& grid, int stride,
                 std::optional<std::span<const RegionIndex>> active = std::nullopt);

/// Inverse placement of crop_grid. Regions absent from `active` are exact zeros.
Tensor uncrop_grid(const Tensor& crops, const RegionGrid& grid, int stride, int images,
                   std::optional<std::span<const RegionIndex>> active = std::nullopt);

}  // namespace sparsefcn
