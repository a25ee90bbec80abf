#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "sparsefcn/graph.hpp"
#include "sparsefcn/trainer.hpp"

namespace sparsefcn {

/// Settings shared by the command-line tools. Loaded from a flat key=value
/// file ('#' starts a comment); unknown keys are rejected.
struct RunConfig {
  std::string model;       // checkpoint path
  std::string out = ".";   // output directory
  FusionKind fusion = FusionKind::Isctf;
  DecoderVariant decoder = DecoderVariant::SharpMask;
  ResidualStagePlan plan_full{{1, 1, 1, 0}, {16, 32, 64, 128}};
  ResidualStagePlan plan_half{{1, 1, 1, 1}, {16, 32, 64, 128}};
  bool optimized = false;
  int classes = 8;
  int stem_width = 8;
  int region_px = 16;
  int feature_stride = 16;
  int height = 64;
  int width = 128;
  double p = 0.25;
  int train_scenes = 64;
  int val_scenes = 50;
  int trials = 10;
  TrainConfig train;  // lambda, alpha, lr, ... (p and seed mirrored from above)
  std::uint64_t seed = 1;

  /// Applies one key=value setting; throws ParameterError on unknown keys or bad values.
  void set(std::string_view key, std::string_view value);
  void validate() const;
  TwoColumnConfig model_config() const;
};

/// Parses config text; errors name the offending line.
RunConfig parse_run_config(std::string_view text, RunConfig base = {});
RunConfig load_run_config(const std::string& path, RunConfig base = {});

}  // namespace sparsefcn
