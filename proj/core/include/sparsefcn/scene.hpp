#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "sparsefcn/tensor.hpp"

namespace sparsefcn {

/// Class layout of generated scenes: three bands, then small object classes.
inline constexpr int kSkyClass = 0;
inline constexpr int kBuildingClass = 1;
inline constexpr int kRoadClass = 2;
inline constexpr int kIgnoreLabel = -1;

struct SceneSample {
  Tensor image;             // (1, 3, h, w), values in [0, 1]
  std::vector<int> labels;  // h * w, row-major
  int height = 0;
  int width = 0;
  std::uint64_t seed = 0;
};

/// Deterministic synthetic street scene: a sky band on top, a road band at
/// the bottom and a building band between them, with rectangular objects of
/// the remaining classes scattered over the middle. Object edges are 4-pixel
/// aligned and some objects are smaller than a 16-pixel region.
SceneSample gen_scene(std::uint64_t seed, int height, int width, int classes);

enum class Split { Train, Val };
std::string_view to_string(Split s);
Split split_from_string(std::string_view s);

/// Seed of the i-th scene of a split. Train and val use disjoint ranges.
std::uint64_t split_seed(Split split, int index);

std::vector<SceneSample> make_dataset(Split split, int count, int height, int width, int classes);

/// Rows are ground truth, columns predictions.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int classes);
  int classes() const noexcept { return classes_; }
  void add(int truth, int predicted, std::int64_t count = 1);
  /// Adds every pixel whose truth label is not kIgnoreLabel.
  void add(const std::vector<int>& truth, const std::vector<int>& predicted);
  std::int64_t at(int truth, int predicted) const;
  std::int64_t total() const noexcept;

 private:
  int classes_;
  std::vector<std::int64_t> counts_;
};

struct Metrics {
  double pixel_acc = 0;
  double mean_acc = 0;
  double mean_iou = 0;
};

/// Class means run over classes with at least one ground-truth pixel.
Metrics metrics(const ConfusionMatrix& m);

// ---------------------------------------------------------------------------
// Image files: binary PPM (P6) images and PGM (P5) label maps, maxval 255.

/// Encodes a (1, 3, h, w) tensor in [0, 1], rounding to 8 bits.
std::string encode_ppm(const Tensor& image);
Tensor decode_ppm(std::string_view bytes);
/// Labels in [0, 255] stored as gray levels.
std::string encode_pgm(const std::vector<int>& labels, int height, int width);
std::vector<int> decode_pgm(std::string_view bytes, int& height, int& width);

void write_file(const std::string& path, std::string_view bytes);
std::string read_file(const std::string& path);

/// Blends active regions of `mask` (1, 1, rows, cols) toward red; inactive
/// regions and an all-zero mask leave the image untouched.
Tensor render_overlay(const Tensor& image, const Tensor& mask, int region_px);

/// Fixed palette rendering of a label map as a (1, 3, h, w) image.
Tensor colorize_labels(const std::vector<int>& labels, int height, int width);

}  // namespace sparsefcn
