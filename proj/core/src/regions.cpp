#include "sparsefcn/regions.hpp"

#include <algorithm>
#include <string>

#include "sparsefcn/errors.hpp"

namespace sparsefcn {

RegionGrid RegionGrid::for_image(int image_h, int image_w, int region_px, int feature_stride) {
  if (region_px <= 0 || feature_stride <= 0) throw ParameterError("region grid: non-positive region or stride");
  if (image_h <= 0 || image_w <= 0 || image_h % region_px != 0 || image_w % region_px != 0) {
    throw ParameterError("region grid: image " + std::to_string(image_h) + "x" + std::to_string(image_w) +
                         " is not divisible into " + std::to_string(region_px) + "-pixel regions");
  }
  if (region_px % feature_stride != 0) {
    throw ParameterError("region grid: region " + std::to_string(region_px) + " not divisible by feature stride " +
                         std::to_string(feature_stride));
  }
  return RegionGrid{region_px, image_h / region_px, image_w / region_px, region_px / feature_stride, feature_stride};
}

std::vector<RegionIndex> all_regions(const RegionGrid& grid, int images) {
  std::vector<RegionIndex> out;
  out.reserve(static_cast<std::size_t>(images) * grid.cells());
  for (int n = 0; n < images; ++n) {
    for (int r = 0; r < grid.rows; ++r) {
      for (int c = 0; c < grid.cols; ++c) out.push_back({n, r, c});
    }
  }
  return out;
}

int region_footprint(const RegionGrid& grid, int stride) {
  if (stride <= 0 || grid.region_px % stride != 0) {
    throw ParameterError("region footprint: stride " + std::to_string(stride) + " does not divide region " +
                         std::to_string(grid.region_px));
  }
  return grid.region_px / stride;
}

Tensor crop_grid(const Tensor& input, const RegionGrid& grid, int stride,
                 std::optional<std::span<const RegionIndex>> active) {
  const int f = region_footprint(grid, stride);
  const Dims d = input.dims();
  if (d.h != grid.rows * f || d.w != grid.cols * f) {
    throw ParameterError("crop_grid: map " + to_string(d) + " does not match a " + std::to_string(grid.rows) + "x" +
                         std::to_string(grid.cols) + " grid of " + std::to_string(f) + "-pixel footprints");
  }
  std::vector<RegionIndex> every;
  std::span<const RegionIndex> list;
  if (active) {
    list = *active;
  } else {
    every = all_regions(grid, d.n);
    list = every;
  }
  Tensor out({static_cast<int>(list.size()), d.c, f, f});
  for (std::size_t k = 0; k < list.size(); ++k) {
    const RegionIndex& ri = list[k];
    if (ri.image < 0 || ri.image >= d.n || ri.row < 0 || ri.row >= grid.rows || ri.col < 0 || ri.col >= grid.cols) {
      throw ParameterError("crop_grid: region index out of range");
    }
    for (int c = 0; c < d.c; ++c) {
      for (int y = 0; y < f; ++y) {
        const double* src = &input.data()[input.offset(ri.image, c, ri.row * f + y, ri.col * f)];
        std::copy(src, src + f, &out.data()[out.offset(static_cast<int>(k), c, y, 0)]);
      }
    }
  }
  return out;
}

Tensor uncrop_grid(const Tensor& crops, const RegionGrid& grid, int stride, int images,
                   std::optional<std::span<const RegionIndex>> active) {
  const int f = region_footprint(grid, stride);
  const Dims d = crops.dims();
  std::vector<RegionIndex> every;
  std::span<const RegionIndex> list;
  if (active) {
    list = *active;
  } else {
    every = all_regions(grid, images);
    list = every;
  }
  if (static_cast<std::size_t>(d.n) != list.size()) {
    throw ParameterError("uncrop_grid: got " + std::to_string(d.n) + " crops, expected " +
                         std::to_string(list.size()));
  }
  if (d.n > 0 && (d.h != f || d.w != f)) {
    throw ParameterError("uncrop_grid: crop dims " + to_string(d) + " do not match footprint " + std::to_string(f));
  }
  Tensor out({images, d.c, grid.rows * f, grid.cols * f});
  for (std::size_t k = 0; k < list.size(); ++k) {
    const RegionIndex& ri = list[k];
    if (ri.image < 0 || ri.image >= images || ri.row < 0 || ri.row >= grid.rows || ri.col < 0 ||
        ri.col >= grid.cols) {
      throw ParameterError("uncrop_grid: region index out of range");
    }
    for (int c = 0; c < d.c; ++c) {
      for (int y = 0; y < f; ++y) {
        const double* src = &crops.data()[crops.offset(static_cast<int>(k), c, y, 0)];
        std::copy(src, src + f, &out.data()[out.offset(ri.image, c, ri.row * f + y, ri.col * f)]);
      }
    }
  }
  return out;
}

}  // namespace sparsefcn
