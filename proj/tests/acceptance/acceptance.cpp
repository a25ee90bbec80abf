// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "sparsefcn/cost.hpp"
#include "sparsefcn/errors.hpp"
#include "sparsefcn/executor.hpp"
#include "sparsefcn/pipeline.hpp"
#include "sparsefcn/run_config.hpp"
#include "sparsefcn/scene.hpp"
#include "sparsefcn/sparsity.hpp"
#include "sparsefcn/trainer.hpp"

using namespace sparsefcn;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = true;
  std::string detail;

  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + ("failed: " + what);
    }
  }
  void note(const std::string& s) { detail += (detail.empty() ? "" : "; ") + s; }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

int failures = 0;

void report(int id, const char* name, double limit_s, const std::function<Outcome()>& body) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o.pass = false;
    o.detail = std::string("exception: ") + e.what();
  }
  const double t = seconds_since(t0);
  if (t > limit_s) o.check(false, "runtime " + fmt("%.1f", t) + " s over " + fmt("%.0f", limit_s) + " s");
  if (!o.pass) ++failures;
  std::printf("%s criterion %d (%s): %s [%.1f s of %.0f s]\n", o.pass ? "PASS" : "FAIL", id, name,
              o.detail.c_str(), t, limit_s);
  std::fflush(stdout);
}

// ---------------------------------------------------------------------------
// Shared setup: the default toy run.

const RunConfig& defaults() {
  static const RunConfig c = [] {
    RunConfig r;
    r.train.p = r.p;
    r.train.seed = r.seed;
    return r;
  }();
  return c;
}

const std::vector<SceneSample>& train_scenes() {
  static const auto d = make_dataset(Split::Train, defaults().train_scenes, 64, 128, 8);
  return d;
}

const std::vector<SceneSample>& val_scenes() {
  static const auto d = make_dataset(Split::Val, defaults().val_scenes, 64, 128, 8);
  return d;
}

struct Trained {
  ModelGraph graph;
  TrainResult result;
  double seconds = 0;
};

Trained train_model(FusionKind fusion) {
  TwoColumnConfig mc = defaults().model_config();
  mc.fusion = fusion;
  Trained t{build_two_column(mc), {}, 0};
  const auto t0 = Clock::now();
  t.result = train(t.graph, defaults().train, train_scenes());
  t.seconds = seconds_since(t0);
  return t;
}

std::optional<Trained> g_isctf;  // first run of the default training

const Trained& trained_isctf() {
  if (!g_isctf) g_isctf = train_model(FusionKind::Isctf);
  return *g_isctf;
}

// ---------------------------------------------------------------------------
// Multiply counting oracle: walks the loops of a direct convolution.

std::int64_t loop_count(const Dims& in, const ConvSpec& s) {
  const int oh = (in.h + 2 * s.padding - s.dilation * (s.kernel_h - 1) - 1) / s.stride + 1;
  const int ow = (in.w + 2 * s.padding - s.dilation * (s.kernel_w - 1) - 1) / s.stride + 1;
  std::int64_t n = 0;
  for (int b = 0; b < in.n; ++b)
    for (int oc = 0; oc < s.out_channels; ++oc)
      for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x)
          for (int ic = 0; ic < s.in_channels / s.groups; ++ic)
            for (int ky = 0; ky < s.kernel_h; ++ky)
              for (int kx = 0; kx < s.kernel_w; ++kx) ++n;
  return n;
}

// Counts the convolutions run for `main`, in fast mode on the first k regions of every image.
std::int64_t oracle_macs(const ModelGraph& g, const Dims& d, std::optional<int> fast_k) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor image(d);
  for (double& v : image.data()) v = u(rng);
  std::int64_t n = 0;
  ExecOptions o;
  o.on_conv = [&](int, const Tensor& in, const ConvParams& p, const Tensor&) { n += loop_count(in.dims(), p.spec); };
  if (fast_k) {
    const RegionGrid grid = grid_for(g, d);
    Tensor mask({d.n, 1, grid.rows, grid.cols}, 0.0);
    for (int b = 0; b < d.n; ++b)
      for (int k = 0; k < *fast_k; ++k) mask.at(b, 0, k / grid.cols, k % grid.cols) = 1.0;
    o.fast = true;
    o.active = active_regions(mask);
    o.mask = mask;
  }
  const std::array<int, 1> t{g.require_output("main")};
  forward(g, image, o, t);
  return n;
}

double miou(const ModelGraph& g, InferMode mode) {
  return metrics(evaluate(g, val_scenes(), mode, defaults().p)).mean_iou;
}

double pixel_acc(const ModelGraph& g, const std::vector<SceneSample>& scenes) {
  return metrics(evaluate(g, scenes, InferMode::Classic, defaults().p)).pixel_acc;
}

// ---------------------------------------------------------------------------

Outcome equivalence() {
  Outcome o;
  const ModelGraph fresh = build_two_column(defaults().model_config());
  const ModelGraph& trained = trained_isctf().graph;
  double worst = 0;
  int mismatched = 0;
  for (const ModelGraph* g : {&fresh, &trained}) {
    for (int i = 0; i < 20; ++i) {
      const SceneSample s = gen_scene(900'000 + i, 64, 128, 8);
      for (double p : {0.25, 0.5, 1.0}) {
        const InferenceResult c = classic_infer(*g, s.image, p);
        const InferenceResult f = fast_infer(*g, s.image, p);
        worst = std::max(worst, max_abs_diff(c.fused_scores, f.fused_scores));
        if (encode_pgm(c.labels, 64, 128) != encode_pgm(f.labels, 64, 128)) ++mismatched;
      }
    }
  }
  o.check(worst <= 1e-9, "max abs diff " + fmt("%.3g", worst));
  o.check(mismatched == 0, std::to_string(mismatched) + " label files differ");
  o.note("120 scene/rate pairs per model, max abs diff " + fmt("%.3g", worst) +
         ", label files identical; trained model from criterion 8 (training time not counted here)");
  return o;
}

Outcome boundary_problem() {
  Outcome o;
  const Trained sctf = train_model(FusionKind::Sctf);
  const double sc = miou(sctf.graph, InferMode::Classic);
  const double sf = miou(sctf.graph, InferMode::Fast);
  const ModelGraph& isctf = trained_isctf().graph;
  const double ic = miou(isctf, InferMode::Classic);
  const double iff = miou(isctf, InferMode::Fast);
  o.check(sc - sf > 0.01, "sctf gap " + fmt("%.4f", sc - sf));
  o.check(ic == iff, "isctf gap " + fmt("%.3g", ic - iff));
  o.note("sctf mIoU classic " + fmt("%.4f", sc) + " fast " + fmt("%.4f", sf) + " gap " + fmt("%.4f", sc - sf) +
         "; isctf classic " + fmt("%.4f", ic) + " fast " + fmt("%.4f", iff) + " gap " + fmt("%.3g", ic - iff));
  return o;
}

std::vector<std::pair<std::string, ModelGraph>> cost_graphs() {
  std::vector<std::pair<std::string, ModelGraph>> gs;
  for (FusionKind f : {FusionKind::Sum, FusionKind::Max, FusionKind::Attention, FusionKind::Ctf, FusionKind::Sctf,
                       FusionKind::Isctf}) {
    TwoColumnConfig c;
    c.fusion = f;
    gs.emplace_back(std::string(to_string(f)), build_two_column(c));
  }
  gs.emplace_back("isctf-optimized", optimize_structure(build_two_column({})));
  TwoColumnConfig small;
  small.plan_half = {{1, 1, 1, 0}, {16, 32, 64, 128}};
  gs.emplace_back("isctf-small", build_two_column(small));
  const ModelGraph bb = build_backbone({}, 8);
  for (DecoderVariant v : {DecoderVariant::Classic, DecoderVariant::Dilated, DecoderVariant::Mixed,
                           DecoderVariant::SharpMask}) {
    gs.emplace_back("decoder-" + std::string(to_string(v)), build_decoder(bb, v, 8));
  }
  return gs;
}

Outcome cost_exactness() {
  Outcome o;
  int compared = 0;
  for (const auto& [name, g] : cost_graphs()) {
    const int div = g.info.input_divisor;
    for (const Dims& d : {Dims{1, 3, 64, 128}, Dims{2, 3, 64, 64}, Dims{1, 3, 32, 64}}) {
      if (d.h % div != 0 || d.w % div != 0) continue;
      const auto classic = mac_of_pipeline(g, d, InferMode::Classic, 0).total;
      o.check(classic == oracle_macs(g, d, std::nullopt), name + " classic " + to_string(d));
      ++compared;
      if (!is_sparse(g.info.fusion)) continue;
      const int cells = grid_for(g, d).cells();
      for (int k : {0, 1, cells / 3, cells}) {
        const auto fast = mac_of_pipeline(g, d, InferMode::Fast, k).total;
        o.check(fast == oracle_macs(g, d, k), name + " fast k=" + std::to_string(k) + " " + to_string(d));
        ++compared;
      }
    }
  }
  const ModelGraph g = build_two_column({});
  const Dims d{1, 3, 64, 128};
  std::set<std::int64_t> diffs;
  std::int64_t prev = mac_of_pipeline(g, d, InferMode::Fast, 0).total;
  for (int k = 1; k <= 32; ++k) {
    const std::int64_t cur = mac_of_pipeline(g, d, InferMode::Fast, k).total;
    diffs.insert(cur - prev);
    prev = cur;
  }
  o.check(diffs.size() == 1, "first differences not constant");
  o.note(std::to_string(compared) + " graph/dims/mode cases equal the loop-count oracle; first difference " +
         std::to_string(*diffs.begin()) + " for k=1..32");
  return o;
}

Outcome cost_ratios() {
  Outcome o;
  const Dims d{1, 3, 64, 128};
  auto total = [&](const ModelGraph& g, InferMode m = InferMode::Classic, int k = 0) {
    return mac_of_pipeline(g, d, m, k).total;
  };
  // Half column against the same column and decoder at full resolution.
  TwoColumnConfig same;
  same.fusion = FusionKind::Sum;
  same.plan_full = same.plan_half;
  const CostReport r = mac_of_pipeline(build_two_column(same), d, InferMode::Classic, 0);
  o.check(4 * r.breakdown.half_column == r.breakdown.fixed_overhead, "half column is not a quarter");
  o.note("half " + std::to_string(r.breakdown.half_column) + " x4 = full " + std::to_string(r.breakdown.fixed_overhead));

  const ModelGraph isctf = build_two_column({});
  const double reduction = 1.0 - static_cast<double>(total(isctf, InferMode::Fast, 16)) / total(isctf);
  o.check(reduction >= 0.25 && reduction <= 0.45, "16/32 reduction " + fmt("%.3f", reduction));
  o.note("16/32 regions cut " + fmt("%.1f%%", 100 * reduction));

  const ModelGraph bb = build_backbone({}, 8);
  const auto dil = total(build_decoder(bb, DecoderVariant::Dilated, 8));
  const auto mix = total(build_decoder(bb, DecoderVariant::Mixed, 8));
  const auto jmp = total(build_decoder(bb, DecoderVariant::SharpMask, 8));
  o.check(dil > mix && mix > jmp, "decoder ordering");
  o.note("dilated " + std::to_string(dil) + " > mixed " + std::to_string(mix) + " > jump " + std::to_string(jmp));

  TwoColumnConfig deep;
  deep.plan_full = {{2, 2, 2, 0}, {16, 32, 64, 128}};
  deep.plan_half = {{2, 2, 2, 2}, {16, 32, 64, 128}};
  const ModelGraph g = build_two_column(deep);
  int removals = 0;
  for (const auto& u : identity_units(g)) {
    const ModelGraph cut = remove_residual_unit(g, u);
    o.check(total(cut) < total(g) && total(cut, InferMode::Fast, 8) < total(g, InferMode::Fast, 8), "removing " + u);
    ++removals;
  }
  const ModelGraph opt = optimize_structure(g);
  o.check(total(opt) < total(g), "optimization classic");
  for (int k : {0, 8, 16, 32}) o.check(total(opt, InferMode::Fast, k) < total(g, InferMode::Fast, k), "optimization fast");
  o.note(std::to_string(removals) + " unit removals and structure optimization all reduce cost");
  return o;
}

Outcome gradient_integrity() {
  Outcome o;
  TwoColumnConfig c = defaults().model_config();
  c.plan_half.units[3] = 0;  // 32x64 input needs a stride-16 half column
  const ModelGraph g = build_two_column(c);
  const SceneSample s = gen_scene(11, 32, 64, 8);
  GradcheckOptions go;
  go.samples_per_tensor = 3;
  go.step = 1e-5;
  go.lambda = 1.0;
  go.q_prev = 0.4;
  const GradcheckResult r = gradcheck(g, s.image, s.labels, go);
  std::set<std::string> kinds;
  for (const auto& e : r.entries) {
    const Node& n = g.node(g.require(e.param.substr(0, e.param.rfind('.'))));
    std::string kind(to_string(n.op));
    if (n.op == OpKind::Conv && n.conv.spec.groups > 1) kind += "-grouped";
    if (n.name.find("cross/") != std::string::npos) kind += "-cross";
    if (n.name == "head/sparse") kind = "sparse-head";
    kinds.insert(kind);
  }
  std::string ks;
  for (const auto& k : kinds) ks += (ks.empty() ? "" : ",") + k;
  o.check(r.max_rel_error <= 1e-4, "max rel error " + fmt("%.3g", r.max_rel_error));
  o.check(kinds.count("sparse-head") && kinds.count("batchnorm") && kinds.count("conv-cross"), "layer coverage");
  o.note(std::to_string(r.entries.size()) + " sampled coordinates over {" + ks + "}, max rel error " +
         fmt("%.3g", r.max_rel_error));
  return o;
}

Outcome regularizer() {
  Outcome o;
  const double ln2 = sparsity_penalty(0.5, 0.5, 1.0);
  const double quarter = sparsity_penalty(0.25, 0.25, 1.0);
  o.check(std::abs(ln2 - std::log(2.0)) <= 1e-6, "ln 2 value " + fmt("%.9f", ln2));
  o.check(std::abs(quarter - 0.562335) <= 1e-6, "p=q=0.25 value " + fmt("%.9f", quarter));
  o.check(std::abs(update_q(0.5, 0.3, 0.9) - 0.48) <= 1e-12, "moving average example");
  for (double q : {0.1, 0.37, 0.8}) o.check(update_q(q, q, 0.9) == q, "fixed point at " + fmt("%.2f", q));

  for (double p : {0.25, 0.5}) {
    TrainConfig tc = defaults().train;
    tc.p = p;
    tc.lambda = 10.0;
    tc.batch = 2;
    ModelGraph g = build_two_column(defaults().model_config());
    const TrainResult r = train(g, tc, train_scenes());
    const double q = r.history.back().q;
    o.check(std::abs(q - p) <= 0.05, "p=" + fmt("%.2f", p) + " final q " + fmt("%.4f", q));
    o.note("p=" + fmt("%.2f", p) + ": q=" + fmt("%.4f", q) + " after " + std::to_string(r.history.size()) +
           " iterations (lambda 10)");
  }
  return o;
}

Outcome wta_contract() {
  Outcome o;
  const double rates[] = {0.13, 0.2, 0.25, 0.4, 0.5};
  const int expected[] = {4, 6, 8, 12, 16};
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  Tensor s({4, 1, 4, 8});
  for (double& v : s.data()) v = nd(rng);
  for (int i = 0; i < 5; ++i) {
    const int k = wta_count(rates[i], 32);
    o.check(k == expected[i], "k for p=" + fmt("%.2f", rates[i]));
    const Tensor m = select_wta(s, k);
    for (int n = 0; n < 4; ++n) {
      int ones = 0;
      for (double v : m.plane(n, 0)) ones += v == 1.0;
      o.check(ones == k, "active count");
    }
    Tensor t = s;
    for (double& v : t.data()) v = std::atan(5.0 * v) + 2.0;
    o.check(select_wta(t, k) == m, "monotone invariance");
  }
  Tensor ties({1, 1, 4, 8}, 0.0);
  for (int i = 0; i < 32; ++i) ties.data()[i] = (i % 3 == 0) ? 1.0 : 0.0;  // 11 tied maxima
  const Tensor m = select_wta(ties, 8);
  const auto active = active_regions(m);
  for (std::size_t i = 0; i < active.size(); ++i) {
    const int flat = active[i].row * 8 + active[i].col;
    o.check(flat == static_cast<int>(3 * i), "tie order");
  }
  o.check(select_wta(ties, 8) == m, "tie determinism");
  o.note("k = {4,6,8,12,16} for p = {0.13,0.2,0.25,0.4,0.5}; monotone invariance and earliest-first ties hold");
  return o;
}

Outcome learnability() {
  Outcome o;
  const Trained& a = trained_isctf();
  const Trained b = train_model(FusionKind::Isctf);
  const double val = miou(a.graph, InferMode::Fast);
  const double acc = pixel_acc(a.graph, train_scenes());
  const bool same = serialize(a.graph) == serialize(b.graph) && history_csv(a.result.history) ==
                                                                       history_csv(b.result.history);
  o.check(val >= 0.6, "val mIoU " + fmt("%.4f", val));
  o.check(acc >= 0.9, "train pixel acc " + fmt("%.4f", acc));
  o.check(same, "second run differs");
  o.note("val mIoU " + fmt("%.4f", val) + ", train pixel acc " + fmt("%.4f", acc) +
         ", second run bit-identical; training " + fmt("%.1f", a.seconds) + " s + " + fmt("%.1f", b.seconds) + " s");
  return o;
}

}  // namespace

int main() {
  // Criterion 8 trains the shared model first so that criteria 1 and 2 reuse it.
  std::vector<std::function<void()>> order{
      [] { report(7, "winner-take-all selection", 5, wta_contract); },
      [] { report(3, "cost model exactness", 30, cost_exactness); },
      [] { report(4, "cost ratios", 30, cost_ratios); },
      [] { report(5, "gradient integrity", 120, gradient_integrity); },
      [] { report(8, "end-to-end learnability", 600, learnability); },
      [] { report(1, "lossless sparse inference", 60, equivalence); },
      [] { report(2, "boundary problem of plain sparse model", 600, boundary_problem); },
      [] { report(6, "sparsity regularizer", 300, regularizer); },
  };
  for (auto& f : order) f();
  std::printf("%s: %d of 8 criteria failed\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
