#include "sparsefcn/scene.hpp"

#include <algorithm>
#include <array>
#include <random>

#include "sparsefcn/errors.hpp"

namespace sparsefcn {

namespace {

// Base colors; classes beyond the table reuse it with a hue shift.
constexpr std::array<std::array<double, 3>, 8> kPalette{{
    {0.45, 0.65, 0.95},  // sky
    {0.55, 0.45, 0.40},  // building
    {0.30, 0.30, 0.32},  // road
    {0.90, 0.15, 0.15},
    {0.15, 0.80, 0.20},
    {0.95, 0.85, 0.10},
    {0.70, 0.20, 0.85},
    {0.10, 0.85, 0.85},
}};

std::array<double, 3> class_color(int c) {
  auto col = kPalette[static_cast<std::size_t>(c) % kPalette.size()];
  if (c >= static_cast<int>(kPalette.size())) {
    const double shift = 0.37 * (c / static_cast<int>(kPalette.size()));
    for (double& v : col) v = v + shift - static_cast<int>(v + shift);
  }
  return col;
}

int align4(double v) { return static_cast<int>(v / 4.0) * 4; }

}  // namespace

SceneSample gen_scene(std::uint64_t seed, int height, int width, int classes) {
  if (classes < 3) throw ParameterError("scenes need at least 3 classes, got " + std::to_string(classes));
  if (height <= 0 || width <= 0 || height % 32 != 0 || width % 32 != 0) {
    throw ParameterError("scene dims " + std::to_string(height) + "x" + std::to_string(width) +
                         " must be positive multiples of 32");
  }
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + 0x632BE59BD9B4E019ULL);
  std::uniform_real_distribution<double> uni(0.0, 1.0);

  SceneSample s;
  s.height = height;
  s.width = width;
  s.seed = seed;
  s.labels.assign(static_cast<std::size_t>(height) * width, kBuildingClass);

  const int sky_end = align4(height * (0.25 + 0.10 * uni(rng)));
  const int road_begin = align4(height * (0.65 + 0.10 * uni(rng)));
  for (int y = 0; y < height; ++y) {
    const int cls = y < sky_end ? kSkyClass : (y >= road_begin ? kRoadClass : kBuildingClass);
    std::fill_n(s.labels.begin() + static_cast<std::ptrdiff_t>(y) * width, width, cls);
  }

  // Objects stand on the middle band; sizes from one quarter of a region up to
  // one and a half regions at the default 16-pixel region size.
  if (classes > 3) {
    const int objects = 3 + static_cast<int>(uni(rng) * 4);
    for (int o = 0; o < objects; ++o) {
      const int cls = 3 + static_cast<int>(uni(rng) * (classes - 3));
      const int ow = 4 * (1 + static_cast<int>(uni(rng) * 6));
      const int oh = 4 * (1 + static_cast<int>(uni(rng) * 6));
      const int x0 = align4(uni(rng) * (width - ow));
      const int bottom = std::min(height, road_begin + 4 * static_cast<int>(uni(rng) * 3));
      const int y0 = std::max(sky_end, bottom - oh);
      for (int y = y0; y < bottom; ++y) {
        for (int x = x0; x < x0 + ow; ++x) s.labels[static_cast<std::size_t>(y) * width + x] = cls;
      }
    }
  }

  // Per-scene tint plus per-pixel noise keep the color-to-class map imperfect.
  std::array<double, 3> tint{};
  for (double& t : tint) t = 0.08 * (uni(rng) - 0.5);
  s.image = Tensor({1, 3, height, width});
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const auto col = class_color(s.labels[static_cast<std::size_t>(y) * width + x]);
      for (int c = 0; c < 3; ++c) {
        const double v = col[c] + tint[c] + 0.10 * (uni(rng) - 0.5);
        s.image.at(0, c, y, x) = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return s;
}

std::string_view to_string(Split s) { return s == Split::Train ? "train" : "val"; }

Split split_from_string(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  throw ParameterError("unknown split '" + std::string(s) + "' (expected train or val)");
}

std::uint64_t split_seed(Split split, int index) {
  if (index < 0 || index >= 1'000'000) throw ParameterError("scene index out of range");
  return (split == Split::Train ? 0ULL : 1'000'000ULL) + static_cast<std::uint64_t>(index);
}

std::vector<SceneSample> make_dataset(Split split, int count, int height, int width, int classes) {
  std::vector<SceneSample> out;
  out.reserve(static_cast<std::size_t>(std::max(count, 0)));
  for (int i = 0; i < count; ++i) out.push_back(gen_scene(split_seed(split, i), height, width, classes));
  return out;
}

// ---------------------------------------------------------------------------

ConfusionMatrix::ConfusionMatrix(int classes) : classes_(classes) {
  if (classes < 1) throw ParameterError("confusion matrix needs at least one class");
  counts_.assign(static_cast<std::size_t>(classes) * classes, 0);
}

void ConfusionMatrix::add(int truth, int predicted, std::int64_t count) {
  if (truth < 0 || truth >= classes_ || predicted < 0 || predicted >= classes_) {
    throw ParameterError("label pair (" + std::to_string(truth) + ", " + std::to_string(predicted) +
                         ") outside [0, " + std::to_string(classes_) + ")");
  }
  counts_[static_cast<std::size_t>(truth) * classes_ + predicted] += count;
}

void ConfusionMatrix::add(const std::vector<int>& truth, const std::vector<int>& predicted) {
  if (truth.size() != predicted.size()) throw ParameterError("label maps differ in size");
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] != kIgnoreLabel) add(truth[i], predicted[i]);
  }
}

std::int64_t ConfusionMatrix::at(int truth, int predicted) const {
  return counts_.at(static_cast<std::size_t>(truth) * classes_ + predicted);
}

std::int64_t ConfusionMatrix::total() const noexcept {
  std::int64_t t = 0;
  for (auto v : counts_) t += v;
  return t;
}

Metrics metrics(const ConfusionMatrix& m) {
  const std::int64_t total = m.total();
  if (total == 0) throw UsageError("metrics of an empty confusion matrix");
  const int c = m.classes();
  std::int64_t trace = 0;
  double acc_sum = 0;
  double iou_sum = 0;
  int present = 0;
  for (int k = 0; k < c; ++k) {
    std::int64_t row = 0;
    std::int64_t col = 0;
    for (int j = 0; j < c; ++j) {
      row += m.at(k, j);
      col += m.at(j, k);
    }
    const std::int64_t tp = m.at(k, k);
    trace += tp;
    if (row == 0) continue;
    ++present;
    acc_sum += static_cast<double>(tp) / static_cast<double>(row);
    iou_sum += static_cast<double>(tp) / static_cast<double>(row + col - tp);
  }
  Metrics r;
  r.pixel_acc = static_cast<double>(trace) / static_cast<double>(total);
  r.mean_acc = acc_sum / present;
  r.mean_iou = iou_sum / present;
  return r;
}

// ---------------------------------------------------------------------------

Tensor render_overlay(const Tensor& image, const Tensor& mask, int region_px) {
  const Dims d = image.dims();
  const Dims md = mask.dims();
  if (d.n != 1 || d.c != 3) throw ParameterError("overlay expects a (1, 3, h, w) image, got " + to_string(d));
  if (md.n != 1 || md.c != 1 || md.h * region_px != d.h || md.w * region_px != d.w) {
    throw ParameterError("overlay mask " + to_string(md) + " does not tile image " + to_string(d) + " with " +
                         std::to_string(region_px) + "-pixel regions");
  }
  Tensor out = image;
  constexpr std::array<double, 3> kTint{1.0, 0.0, 0.0};
  for (int r = 0; r < md.h; ++r) {
    for (int q = 0; q < md.w; ++q) {
      if (mask.at(0, 0, r, q) == 0.0) continue;
      for (int c = 0; c < 3; ++c) {
        for (int y = r * region_px; y < (r + 1) * region_px; ++y) {
          for (int x = q * region_px; x < (q + 1) * region_px; ++x) {
            out.at(0, c, y, x) = 0.5 * image.at(0, c, y, x) + 0.5 * kTint[c];
          }
        }
      }
    }
  }
  return out;
}

Tensor colorize_labels(const std::vector<int>& labels, int height, int width) {
  if (labels.size() != static_cast<std::size_t>(height) * width) throw ParameterError("label map size mismatch");
  Tensor out({1, 3, height, width});
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const int l = labels[static_cast<std::size_t>(y) * width + x];
      const auto col = l < 0 ? std::array<double, 3>{0, 0, 0} : class_color(l);
      for (int c = 0; c < 3; ++c) out.at(0, c, y, x) = col[c];
    }
  }
  return out;
}

}  // namespace sparsefcn
