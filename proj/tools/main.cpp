// sparsefcn: train, run and inspect two-column sparse segmentation models.
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "sparsefcn/cost.hpp"
#include "sparsefcn/errors.hpp"
#include "sparsefcn/pipeline.hpp"
#include "sparsefcn/run_config.hpp"
#include "sparsefcn/scene.hpp"
#include "sparsefcn/sparsity.hpp"
#include "sparsefcn/trainer.hpp"

namespace fs = std::filesystem;
using namespace sparsefcn;

namespace {

struct Flags {
  std::string config;
  std::string model;
  std::string image;
  std::string mode = "fast";
  std::string split = "val";
  std::optional<double> p;
  std::optional<int> k;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::vector<std::string> set;  // key=value overrides
};

RunConfig resolve(const Flags& f) {
  RunConfig c;
  if (!f.config.empty()) c = load_run_config(f.config);
  for (const auto& kv : f.set) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ParameterError("--set expects key=value, got '" + kv + "'");
    c.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!f.model.empty()) c.model = f.model;
  if (f.p) c.p = *f.p;
  if (f.seed) c.seed = *f.seed;
  if (f.out) c.out = *f.out;
  c.train.p = c.p;
  c.train.seed = c.seed;
  c.validate();
  return c;
}

std::string out_path(const RunConfig& c, const std::string& name) {
  fs::create_directories(c.out);
  return (fs::path(c.out) / name).string();
}

ModelGraph model_or_fresh(const RunConfig& c) {
  if (!c.model.empty()) return load_graph(c.model);
  return build_two_column(c.model_config());
}

void print_kv(const char* key, double v) { std::printf("%s=%.17g\n", key, v); }

int cmd_scene(const RunConfig& c) {
  const SceneSample s = gen_scene(c.seed, c.height, c.width, c.classes);
  const std::string img = out_path(c, "scene_" + std::to_string(c.seed) + ".ppm");
  const std::string lab = out_path(c, "scene_" + std::to_string(c.seed) + "_labels.pgm");
  write_file(img, encode_ppm(s.image));
  write_file(lab, encode_pgm(s.labels, s.height, s.width));
  std::printf("image=%s\nlabels=%s\n", img.c_str(), lab.c_str());
  return 0;
}

int cmd_train(const RunConfig& c) {
  ModelGraph g = build_two_column(c.model_config());
  const auto data = make_dataset(Split::Train, c.train_scenes, c.height, c.width, c.classes);
  const TrainResult r = train(g, c.train, data, [](const IterationRecord& rec) {
    if (rec.iteration % 50 == 0) {
      std::fprintf(stderr, "iteration %d loss %.5f q %.4f\n", rec.iteration, rec.loss, rec.q);
    }
  });
  const std::string model = c.model.empty() ? out_path(c, "model.sfg") : c.model;
  if (!c.model.empty() && fs::path(model).has_parent_path()) fs::create_directories(fs::path(model).parent_path());
  save_graph(g, model);
  const std::string hist = out_path(c, "history.csv");
  write_file(hist, history_csv(r.history));
  std::printf("model=%s\nhistory=%s\n", model.c_str(), hist.c_str());
  print_kv("final_loss", r.history.back().loss);
  print_kv("q", r.q);
  return 0;
}

int cmd_infer(const RunConfig& c, const Flags& f) {
  if (f.image.empty()) throw UsageError("infer needs --image");
  const ModelGraph g = model_or_fresh(c);
  const Tensor image = decode_ppm(read_file(f.image));
  const InferMode mode = infer_mode_from_string(f.mode);
  const InferenceResult r = infer(g, image, mode, c.p);
  write_file(out_path(c, "labels.pgm"), encode_pgm(r.labels, r.height, r.width));
  Tensor overlay = colorize_labels(r.labels, r.height, r.width);
  if (!r.mask.empty()) overlay = render_overlay(image, r.mask, g.info.region_px);
  write_file(out_path(c, "overlay.ppm"), encode_ppm(overlay));
  write_file(out_path(c, "cost.txt"), format_text(r.cost));
  write_file(out_path(c, "cost.kv"), format_kv(r.cost));
  std::printf("labels=%s\nactive_regions=%zu\nmacs=%lld\n", out_path(c, "labels.pgm").c_str(), r.active.size(),
              static_cast<long long>(r.cost.total));
  return 0;
}

int cmd_cost(const RunConfig& c, const Flags& f) {
  const ModelGraph g = model_or_fresh(c);
  const Dims dims{1, 3, c.height, c.width};
  const InferMode mode = infer_mode_from_string(f.mode);
  if (mode == InferMode::Classic) {
    const CostReport r = mac_of_pipeline(g, dims, mode, 0);
    std::printf("%s", format_text(r).c_str());
    return 0;
  }
  const int cells = grid_for(g, dims).cells();
  const int lo = f.k ? *f.k : 0;
  const int hi = f.k ? *f.k : cells;
  std::printf("k,total,half_column,fixed_overhead,full_column_per_region\n");
  for (int k = lo; k <= hi; ++k) {
    const CostReport r = mac_of_pipeline(g, dims, mode, k);
    std::printf("%d,%lld,%lld,%lld,%lld\n", k, static_cast<long long>(r.total),
                static_cast<long long>(r.breakdown.half_column), static_cast<long long>(r.breakdown.fixed_overhead),
                static_cast<long long>(r.breakdown.full_column_per_region));
  }
  return 0;
}

int cmd_eval(const RunConfig& c, const Flags& f) {
  if (c.model.empty()) throw UsageError("eval needs --model");
  const ModelGraph g = load_graph(c.model);
  const Split split = split_from_string(f.split);
  const int count = split == Split::Train ? c.train_scenes : c.val_scenes;
  const auto scenes = make_dataset(split, count, c.height, c.width, c.classes);
  InferMode mode = infer_mode_from_string(f.mode);
  if (!is_sparse(g.info.fusion)) mode = InferMode::Classic;
  const Metrics m = metrics(evaluate(g, scenes, mode, c.p));
  std::printf("split=%s mode=%s pixel_acc=%.6f mean_acc=%.6f mean_iou=%.6f\n", std::string(to_string(split)).c_str(),
              std::string(to_string(mode)).c_str(), m.pixel_acc, m.mean_acc, m.mean_iou);
  return 0;
}

int cmd_equiv(const RunConfig& c) {
  const ModelGraph g = model_or_fresh(c);
  double worst = 0;
  bool labels_equal = true;
  for (int t = 0; t < c.trials; ++t) {
    const SceneSample s = gen_scene(split_seed(Split::Val, t), c.height, c.width, c.classes);
    const InferenceResult a = classic_infer(g, s.image, c.p);
    const InferenceResult b = fast_infer(g, s.image, c.p);
    worst = std::max(worst, max_abs_diff(a.fused_scores, b.fused_scores));
    labels_equal = labels_equal && a.labels == b.labels;
  }
  std::printf("trials=%d p=%g max_abs_diff=%.17g labels_identical=%d\n", c.trials, c.p, worst, labels_equal ? 1 : 0);
  return 0;
}

int cmd_gradcheck(const RunConfig& c) {
  // Small model: 32x64 input, no stride-32 stage in either column.
  TwoColumnConfig mc = c.model_config();
  mc.plan_half.units[3] = 0;
  const ModelGraph g = build_two_column(mc);
  const SceneSample s = gen_scene(c.seed, 32, 64, c.classes);
  GradcheckOptions o;
  o.seed = c.seed;
  o.p = c.p;
  o.lambda = c.train.lambda;
  o.alpha = c.train.alpha;
  o.aux_weight = c.train.aux_weight;
  const GradcheckResult r = gradcheck(g, s.image, s.labels, o);
  std::printf("checked=%zu max_rel_error=%.6g\n", r.entries.size(), r.max_rel_error);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-column sparse segmentation engine"};
  app.require_subcommand(1);
  Flags f;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", f.config, "key=value config file")->check(CLI::ExistingFile);
    sub->add_option("--set", f.set, "override a config key (key=value), repeatable");
    sub->add_option("--model", f.model, "model checkpoint");
    sub->add_option("--seed", f.seed, "random seed");
    sub->add_option("--out", f.out, "output directory");
    sub->add_option("--p", f.p, "target rate of active regions");
  };
  auto* scene = app.add_subcommand("scene", "write a synthetic scene (PPM) and its labels (PGM)");
  auto* train_cmd = app.add_subcommand("train", "train a model; writes a checkpoint and history CSV");
  auto* infer_cmd = app.add_subcommand("infer", "label an image; writes labels, overlay and cost report");
  auto* cost = app.add_subcommand("cost", "multiply-accumulate counts, swept over k in fast mode");
  auto* eval = app.add_subcommand("eval", "pixel accuracy, mean accuracy and mean IoU on a split");
  auto* equiv = app.add_subcommand("equiv", "largest classic-vs-fast fused score difference");
  auto* grad = app.add_subcommand("gradcheck", "analytic vs finite-difference gradients on a small model");
  for (auto* sub : {scene, train_cmd, infer_cmd, cost, eval, equiv, grad}) common(sub);
  infer_cmd->add_option("--image", f.image, "input PPM image")->required();
  for (auto* sub : {infer_cmd, cost, eval}) {
    sub->add_option("--mode", f.mode, "classic or fast")->check(CLI::IsMember({"classic", "fast"}));
  }
  cost->add_option("--k", f.k, "single region count instead of the full sweep");
  eval->add_option("--split", f.split, "train or val")->check(CLI::IsMember({"train", "val"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  try {
    const RunConfig c = resolve(f);
    if (*scene) return cmd_scene(c);
    if (*train_cmd) return cmd_train(c);
    if (*infer_cmd) return cmd_infer(c, f);
    if (*cost) return cmd_cost(c, f);
    if (*eval) return cmd_eval(c, f);
    if (*equiv) return cmd_equiv(c);
    if (*grad) return cmd_gradcheck(c);
  } catch (const sparsefcn::Error& e) {
    std::fprintf(stderr, "error: %s: %s\n", e.kind().c_str(), e.what());
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "error: io: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: internal: %s\n", e.what());
    return 3;
  }
  return 1;
}
