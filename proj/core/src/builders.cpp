#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>

#include "sparsefcn/errors.hpp"
#include "sparsefcn/graph.hpp"
#include "sparsefcn/sparsity.hpp"

namespace sparsefcn {

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

// splitmix64 finalizer
std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

enum class Init { He, Small };

// Static channel count of every node (images have 3 channels).
std::vector<int> node_channels(const ModelGraph& g) {
  std::vector<int> ch(static_cast<std::size_t>(g.size()), 0);
  for (int id = 0; id < g.size(); ++id) {
    const Node& n = g.node(id);
    switch (n.op) {
      case OpKind::Input: ch[id] = 3; break;
      case OpKind::Conv: ch[id] = n.conv.spec.out_channels; break;
      case OpKind::ChannelSlice: ch[id] = n.slice_count; break;
      case OpKind::ScaleByMap: ch[id] = ch[n.inputs.at(1)]; break;
      case OpKind::RegionGate: ch[id] = 1; break;
      default: ch[id] = ch[n.inputs.at(0)]; break;
    }
  }
  return ch;
}

// Appends nodes with a common name prefix and column tag.
class Builder {
 public:
  Builder(ModelGraph& g, std::uint64_t seed) : g_(g), seed_(seed), channels_(node_channels(g)) {}

  std::string prefix;
  ColumnTag column = ColumnTag::Shared;
  bool per_region = false;

  int channels(int id) const { return channels_.at(static_cast<std::size_t>(id)); }

  int add(Node n) {
    n.name = prefix.empty() ? n.name : prefix + "/" + n.name;
    n.column = column;
    n.per_region = per_region;
    const int id = g_.add(std::move(n));
    channels_.push_back(node_channels_one(id));
    return id;
  }

  int input(const std::string& name) {
    Node n;
    n.name = name;
    n.op = OpKind::Input;
    return add(std::move(n));
  }

  int conv(const std::string& name, int in, int out_ch, int k, int stride = 1, int dilation = 1, int groups = 1,
           Init init = Init::He) {
    ConvSpec s;
    s.in_channels = channels(in);
    s.out_channels = out_ch;
    s.kernel_h = k;
    s.kernel_w = k;
    s.stride = stride;
    s.dilation = dilation;
    s.groups = groups;
    s.padding = same_padding(k, dilation);
    return conv_spec(name, in, s, init);
  }

  int conv_spec(const std::string& name, int in, const ConvSpec& s, Init init = Init::He) {
    if (s.groups <= 0 || s.in_channels % s.groups != 0 || s.out_channels % s.groups != 0) {
      throw ConstructionError("layer '" + qualified(name) + "': width " + std::to_string(s.out_channels) +
                              " / input " + std::to_string(s.in_channels) + " not divisible by " +
                              std::to_string(s.groups) + " groups");
    }
    Node n;
    n.name = name;
    n.op = OpKind::Conv;
    n.inputs = {in};
    n.conv = ConvParams::zeros(s);
    std::mt19937_64 rng(mix(seed_, fnv1a(qualified(name))));
    const double fan_in = static_cast<double>(s.in_channels / s.groups) * s.kernel_h * s.kernel_w;
    const double stddev = init == Init::He ? std::sqrt(2.0 / fan_in) : 0.01;
    std::normal_distribution<double> dist(0.0, stddev);
    for (double& v : n.conv.weight.data()) v = dist(rng);
    return add(std::move(n));
  }

  int bn(const std::string& name, int in) {
    Node n;
    n.name = name;
    n.op = OpKind::BatchNorm;
    n.inputs = {in};
    n.bn = BatchNormParams::identity(channels(in));
    return add(std::move(n));
  }

  int unary(const std::string& name, OpKind op, int in) {
    Node n;
    n.name = name;
    n.op = op;
    n.inputs = {in};
    return add(std::move(n));
  }

  int binary(const std::string& name, OpKind op, int a, int b) {
    Node n;
    n.name = name;
    n.op = op;
    n.inputs = {a, b};
    return add(std::move(n));
  }

  int resample(const std::string& name, int in, ScaleFactor f, ResampleMode mode = ResampleMode::Bilinear) {
    Node n;
    n.name = name;
    n.op = OpKind::Resample;
    n.inputs = {in};
    n.factor = f;
    n.resample_mode = mode;
    return add(std::move(n));
  }

  int slice(const std::string& name, int in, int begin, int count) {
    Node n;
    n.name = name;
    n.op = OpKind::ChannelSlice;
    n.inputs = {in};
    n.slice_begin = begin;
    n.slice_count = count;
    return add(std::move(n));
  }

  int region_op(const std::string& name, OpKind op, int in, int stride, bool always) {
    Node n;
    n.name = name;
    n.op = op;
    n.inputs = {in};
    n.crop_stride = stride;
    n.crop_always = always;
    return add(std::move(n));
  }

  std::string qualified(const std::string& name) const { return prefix.empty() ? name : prefix + "/" + name; }

 private:
  int node_channels_one(int id) const {
    const Node& n = g_.node(id);
    switch (n.op) {
      case OpKind::Input: return 3;
      case OpKind::Conv: return n.conv.spec.out_channels;
      case OpKind::ChannelSlice: return n.slice_count;
      case OpKind::ScaleByMap: return channels_.at(n.inputs.at(1));
      case OpKind::RegionGate: return 1;
      default: return channels_.at(n.inputs.at(0));
    }
  }

  ModelGraph& g_;
  std::uint64_t seed_;
  std::vector<int> channels_;
};

struct Tap {
  int stage = 2;   // 2..5
  int stride = 4;  // actual stride relative to the column input
  int node = -1;
};

// dilate_from: first stage index (0-based over stages 2-5) whose downsampling
// is replaced by dilation; 4 disables.
std::vector<Tap> add_column(Builder& b, int input, const ResidualStagePlan& plan, int stem_width, int dilate_from) {
  plan.validate();
  int x = b.conv("stem/conv", input, stem_width, 3, 2);
  x = b.unary("stem/pool", OpKind::AvgPool, x);
  std::vector<Tap> taps;
  int stride = 4;
  int dilation = 1;
  for (int s = 0; s < 4; ++s) {
    if (plan.units[s] == 0) break;
    int stage_stride = s == 0 ? 1 : 2;
    if (s >= dilate_from && s > 0) {
      stage_stride = 1;
      dilation *= 2;
    }
    stride *= stage_stride;
    const int width = plan.widths[s];
    const std::string stage = "s" + std::to_string(s + 2);
    for (int u = 0; u < plan.units[s]; ++u) {
      const std::string unit = stage + "/u" + std::to_string(u) + "/";
      const bool first = u == 0;
      int a = b.bn(unit + "bn1", x);
      a = b.unary(unit + "relu1", OpKind::Relu, a);
      int c = b.conv(unit + "conv1", a, width, 3, first ? stage_stride : 1, dilation);
      c = b.bn(unit + "bn2", c);
      c = b.unary(unit + "relu2", OpKind::Relu, c);
      c = b.conv(unit + "conv2", c, width, 3, 1, dilation);
      const int shortcut = first ? b.conv(unit + "proj", a, width, 1, stage_stride) : x;
      x = b.binary(unit + "add", OpKind::Sum, c, shortcut);
    }
    taps.push_back({s + 2, stride, x});
  }
  return taps;
}

int width_at(const DecoderShape& shape, int stride) {
  if (stride >= 16) return shape.widths[0];
  if (stride == 8) return shape.widths[1];
  return shape.widths[2];
}

int jump_groups_at(const DecoderShape& shape, int stride) {
  if (stride >= 16) return shape.jump_groups[0];
  if (stride == 8) return shape.jump_groups[1];
  return shape.jump_groups[2];
}

const Tap& tap_at(const std::vector<Tap>& taps, int stride) {
  for (const Tap& t : taps) {
    if (t.stride == stride) return t;
  }
  throw ConstructionError("no backbone tap at stride " + std::to_string(stride));
}

struct DecoderOut {
  std::map<int, int> level;  // stride -> feature node
  int final_feature = -1;
  int scores = -1;
};

using CrossSource = std::function<std::optional<int>(int stride, int width)>;

// SharpMask-like top-down path: a layer on the deepest tap, then x2 upsampling
// steps each merged with a 1x1-projected jump connection, down to stride 4.
DecoderOut add_sharpmask(Builder& b, const std::vector<Tap>& taps, const DecoderShape& shape, int top_kernel,
                         int classes, const CrossSource& cross = {}) {
  DecoderOut out;
  const Tap& deepest = taps.back();
  int stride = deepest.stride;
  int f = b.conv("dec/top", deepest.node, width_at(shape, stride), top_kernel, 1, 1, shape.top_groups);
  if (cross) {
    if (auto c = cross(stride, width_at(shape, stride))) f = b.binary("dec/top_cross", OpKind::Sum, f, *c);
  }
  f = b.unary("dec/top_relu", OpKind::Relu, f);
  out.level[stride] = f;
  while (stride > 4) {
    stride /= 2;
    const std::string lvl = "dec/l" + std::to_string(stride) + "/";
    const int width_in = b.channels(f);
    int m = b.resample(lvl + "up", f, kDouble);
    const int jump = b.conv(lvl + "jump", tap_at(taps, stride).node, width_in, 1, 1, 1, jump_groups_at(shape, stride));
    m = b.binary(lvl + "merge", OpKind::Sum, m, jump);
    if (cross) {
      if (auto c = cross(stride, width_in)) m = b.binary(lvl + "cross_merge", OpKind::Sum, m, *c);
    }
    f = b.conv(lvl + "conv", m, width_at(shape, stride), 3);
    f = b.unary(lvl + "relu", OpKind::Relu, f);
    out.level[stride] = f;
  }
  out.final_feature = f;
  out.scores = b.conv("dec/score", f, classes, 1);
  return out;
}

// Classic FCN: score maps predicted from every tap, upsampled to stride 4 and summed.
DecoderOut add_classic(Builder& b, const std::vector<Tap>& taps, int classes) {
  DecoderOut out;
  int acc = -1;
  for (const Tap& t : taps) {
    const std::string lvl = "dec/t" + std::to_string(t.stage) + "/";
    int sc = b.conv(lvl + "score", t.node, classes, 1);
    int stride = t.stride;
    int step = 0;
    while (stride > 4) {
      sc = b.resample(lvl + "up" + std::to_string(step++), sc, kDouble);
      stride /= 2;
    }
    acc = acc < 0 ? sc : b.binary(lvl + "sum", OpKind::Sum, acc, sc);
    out.level[t.stride] = t.node;
  }
  out.final_feature = taps.back().node;
  out.scores = acc;
  return out;
}

int dilate_from_stage(DecoderVariant v, const ResidualStagePlan& plan) {
  if (v == DecoderVariant::Dilated || v == DecoderVariant::Mixed) {
    if (plan.units[3] == 0) {
      throw ConstructionError("decoder '" + std::string(to_string(v)) +
                              "' needs tap32, but stage 5 (stride 32) has no units");
    }
    if (v == DecoderVariant::Dilated && plan.units[2] == 0) {
      throw ConstructionError("decoder 'dilated' needs tap16, but stage 4 has no units");
    }
  }
  if (v == DecoderVariant::Dilated) return 2;
  if (v == DecoderVariant::Mixed) return 3;
  return 4;
}

DecoderOut add_decoder(Builder& b, const std::vector<Tap>& taps, DecoderVariant v, const DecoderShape& shape,
                       int top_kernel, int classes, const CrossSource& cross = {}) {
  if (v == DecoderVariant::Classic) return add_classic(b, taps, classes);
  return add_sharpmask(b, taps, shape, top_kernel, classes, cross);
}

std::vector<Tap> taps_from_outputs(const ModelGraph& g) {
  std::vector<Tap> taps;
  for (int s = 0; s < 4; ++s) {
    if (auto id = g.output("tap" + std::to_string(4 << s))) taps.push_back({s + 2, 4 << s, *id});
  }
  if (taps.empty()) throw ConstructionError("backbone graph has no taps");
  return taps;
}

}  // namespace

// ---------------------------------------------------------------------------

ModelGraph build_backbone(const ResidualStagePlan& plan, int stem_width, std::uint64_t seed) {
  ModelGraph g;
  g.info.fusion = FusionKind::None;
  g.info.plan_full = plan;
  g.info.stem_width = stem_width;
  g.info.seed = seed;
  Builder b(g, seed);
  const int image = b.input("image");
  g.set_output("image", image);
  b.prefix = "col";
  for (const Tap& t : add_column(b, image, plan, stem_width, 4)) {
    g.set_output("tap" + std::to_string(t.stride), t.node);
  }
  g.info.input_divisor = plan.deepest_stride();
  return g;
}

ModelGraph build_decoder(const ModelGraph& backbone, DecoderVariant variant, int classes, const DecoderShape& shape) {
  ModelGraph g = backbone;
  const ResidualStagePlan& plan = g.info.plan_full;
  const int dilate_from = dilate_from_stage(variant, plan);
  std::vector<Tap> taps = taps_from_outputs(g);

  // Trade downsampling for dilation in the affected stages; weights keep their shapes.
  if (dilate_from < 4) {
    int dilation = 1;
    for (int s = dilate_from; s < 4; ++s) {
      dilation *= 2;
      const std::string stage = "col/s" + std::to_string(s + 2) + "/";
      for (Node& n : g.nodes()) {
        if (n.op != OpKind::Conv || n.name.rfind(stage, 0) != 0) continue;
        n.conv.spec.stride = 1;
        if (n.conv.spec.kernel_h == 3) {
          n.conv.spec.dilation = dilation;
          n.conv.spec.padding = same_padding(3, dilation);
        }
      }
    }
    int stride = 4;
    for (Tap& t : taps) {
      if (t.stage > 2 && t.stage - 2 < dilate_from) stride *= 2;
      t.stride = stride;
    }
  }

  Builder b(g, g.info.seed);
  b.prefix = "col";
  const DecoderOut dec = add_decoder(b, taps, variant, shape, 3, classes);
  g.set_output("main", dec.scores);
  g.info.decoder = variant;
  g.info.decoder_shape = shape;
  g.info.classes = classes;
  return g;
}

ModelGraph build_two_column(const TwoColumnConfig& cfg) {
  if (cfg.fusion == FusionKind::None) throw ConstructionError("two-column model needs a fusion kind");
  if (cfg.fusion == FusionKind::Attention && cfg.fast_inference) {
    throw ConstructionError("attention fusion cannot use fast inference: it requires full-resolution features "
                            "everywhere");
  }
  if (cfg.classes < 2) throw ConstructionError("need at least two classes");
  const bool sparse = is_sparse(cfg.fusion);
  const bool improved = cfg.fusion == FusionKind::Isctf;
  if (cfg.optimized && !improved) throw ConstructionError("structure optimization applies to isctf models only");
  cfg.plan_full.validate();
  cfg.plan_half.validate();

  ModelGraph g;
  GraphInfo& info = g.info;
  info.fusion = cfg.fusion;
  info.decoder = cfg.decoder;
  info.classes = cfg.classes;
  info.stem_width = cfg.stem_width;
  info.plan_full = cfg.plan_full;
  info.plan_half = cfg.plan_half;
  info.width_factor = cfg.width_factor;
  info.decoder_shape = cfg.optimized ? DecoderShape::optimized_for(cfg.width_factor)
                                     : DecoderShape::plain(cfg.width_factor);
  info.region_px = cfg.region_px;
  info.feature_stride = cfg.feature_stride;
  info.target_rate = cfg.target_rate;
  info.seed = cfg.seed;
  const DecoderShape& shape = info.decoder_shape;

  const int full_deepest = cfg.plan_full.deepest_stride();
  const int half_deepest = cfg.plan_half.deepest_stride();
  if (sparse) {
    if (cfg.region_px <= 0 || cfg.feature_stride <= 0 || cfg.region_px % cfg.feature_stride != 0) {
      throw ConstructionError("region " + std::to_string(cfg.region_px) + " px is not a multiple of feature stride " +
                              std::to_string(cfg.feature_stride));
    }
    if (cfg.region_px % full_deepest != 0) {
      throw ConstructionError("region " + std::to_string(cfg.region_px) +
                              " px is not divisible by the full column's deepest stride " +
                              std::to_string(full_deepest));
    }
  }
  info.input_divisor = std::lcm(2 * half_deepest, full_deepest);
  if (sparse) info.input_divisor = std::lcm(info.input_divisor, cfg.region_px);

  Builder b(g, cfg.seed);
  const int image = b.input("image");
  g.set_output("image", image);

  // Half-resolution column on the bilinearly downsampled image.
  b.prefix = "half";
  b.column = ColumnTag::Half;
  const int half_in = b.resample("downsample", image, kHalf);
  const auto half_taps = add_column(b, half_in, cfg.plan_half, cfg.stem_width, 4);
  const DecoderOut half = add_decoder(b, half_taps, cfg.decoder, shape, shape.half_top_kernel, cfg.classes);
  const int aux_half = b.resample("scores_up", half.scores, kDouble);

  // Full-resolution column, on region crops for the sparse models.
  b.prefix = "full";
  b.column = ColumnTag::Full;
  int full_in = image;
  if (sparse) {
    b.per_region = true;
    full_in = b.region_op("crop", OpKind::Crop, image, 1, improved);
  }
  const auto full_taps = add_column(b, full_in, cfg.plan_full, cfg.stem_width, 4);

  CrossSource cross;
  if (improved) {
    // Half-column level at half-resolution stride S covers 2S image pixels;
    // upsampled x2 it matches the full column's level at stride S.
    cross = [&](int stride, int width) -> std::optional<int> {
      auto it = half.level.find(stride);
      if (it == half.level.end()) {
        throw ConstructionError("cross-column connection at stride " + std::to_string(stride) +
                                " needs a half-column decoder level at the same stride");
      }
      const std::string lvl = "cross/l" + std::to_string(stride) + "/";
      const ColumnTag saved_col = b.column;
      const bool saved_region = b.per_region;
      b.column = ColumnTag::Half;
      b.per_region = false;
      int src = b.unary(lvl + "stop", OpKind::StopGradient, it->second);
      src = b.resample(lvl + "up", src, kDouble);
      b.column = saved_col;
      b.per_region = true;
      src = b.region_op(lvl + "crop", OpKind::Crop, src, stride, true);
      const int proj = b.conv(lvl + "proj", src, width, 1);
      b.per_region = saved_region;
      return proj;
    };
  }
  const DecoderOut full = add_decoder(b, full_taps, cfg.decoder, shape, shape.full_top_kernel, cfg.classes, cross);
  int aux_full = full.scores;
  if (sparse) aux_full = b.region_op("uncrop", OpKind::Uncrop, full.scores, 4, improved);
  b.per_region = false;

  g.set_output("aux_half", aux_half);
  g.set_output("aux_full", aux_full);

  b.prefix = "head";
  b.column = ColumnTag::Head;
  int main = -1;
  switch (cfg.fusion) {
    case FusionKind::Sum:
      main = b.binary("fuse", OpKind::Sum, aux_half, aux_full);
      break;
    case FusionKind::Max:
      main = b.binary("fuse", OpKind::Max, aux_half, aux_full);
      break;
    default: {
      int zl = b.conv("z/conv_half", half.final_feature, 2, 3);
      zl = b.resample("z/up", zl, kDouble);
      if (cfg.fusion == FusionKind::Attention) {
        const int zf = b.conv("z/conv_full", full.final_feature, 2, 3);
        zl = b.binary("z/sum", OpKind::Sum, zl, zf);
      }
      const int z = b.unary("z/softmax", OpKind::Softmax, zl);
      g.set_output("z", z);
      const int z1 = b.slice("z1", z, 0, 1);
      int w2 = b.slice("z2", z, 1, 1);
      if (sparse) {
        const int half_stride = cfg.feature_stride / 2;
        auto it = half.level.find(half_stride);
        if (cfg.feature_stride % 2 != 0 || it == half.level.end()) {
          throw ConstructionError("sparse head needs half-column features at image stride " +
                                  std::to_string(cfg.feature_stride));
        }
        const int tau = cfg.region_px / cfg.feature_stride;
        const int s = b.conv_spec("sparse", it->second, sparse_head_spec(b.channels(it->second), tau), Init::Small);
        g.set_output("s", s);
        g.set_output("sparse_features", it->second);
        const int gate = b.binary("gate", OpKind::RegionGate, s, w2);
        w2 = b.binary("w2", OpKind::Product, w2, gate);
      }
      const int a = b.binary("fuse_half", OpKind::ScaleByMap, z1, aux_half);
      const int c = b.binary("fuse_full", OpKind::ScaleByMap, w2, aux_full);
      main = b.binary("fuse", OpKind::Sum, a, c);
      break;
    }
  }
  g.set_output("main", main);
  g.set_output("half_final", half.final_feature);
  return g;
}

ModelGraph optimize_structure(const ModelGraph& graph) {
  const GraphInfo& info = graph.info;
  if (info.fusion != FusionKind::Isctf) throw ConstructionError("optimize_structure expects an isctf graph");
  if (info.decoder_shape.optimized) throw ConstructionError("graph is already optimized");
  TwoColumnConfig cfg;
  cfg.fusion = info.fusion;
  cfg.decoder = info.decoder;
  cfg.classes = info.classes;
  cfg.stem_width = info.stem_width;
  cfg.plan_full = info.plan_full;
  cfg.plan_half = info.plan_half;
  cfg.width_factor = info.width_factor;
  cfg.optimized = true;
  cfg.region_px = info.region_px;
  cfg.feature_stride = info.feature_stride;
  cfg.target_rate = info.target_rate;
  cfg.seed = info.seed;
  return build_two_column(cfg);
}

namespace {

bool starts_with(std::string_view s, std::string_view prefix) { return s.substr(0, prefix.size()) == prefix; }

}  // namespace

std::vector<std::string> identity_units(const ModelGraph& graph) {
  std::vector<std::string> out;
  for (const Node& n : graph.nodes()) {
    const auto pos = n.name.rfind("/add");
    if (n.op != OpKind::Sum || pos == std::string::npos || pos + 4 != n.name.size()) continue;
    const std::string unit = n.name.substr(0, pos);
    if (graph.find(unit + "/proj") < 0) out.push_back(unit);
  }
  return out;
}

ModelGraph remove_residual_unit(const ModelGraph& graph, std::string_view unit) {
  const std::string prefix = std::string(unit) + "/";
  const int add = graph.find(prefix + "add");
  const int bn1 = graph.find(prefix + "bn1");
  if (add < 0 || bn1 < 0) throw ConstructionError("no residual unit named '" + std::string(unit) + "'");
  if (graph.find(prefix + "proj") >= 0) {
    throw ConstructionError("residual unit '" + std::string(unit) + "' has a projection shortcut and cannot be removed");
  }
  const int unit_input = graph.node(bn1).inputs.at(0);

  std::vector<int> remap(static_cast<std::size_t>(graph.size()), -1);
  ModelGraph out;
  out.info = graph.info;
  for (int id = 0; id < graph.size(); ++id) {
    const Node& n = graph.node(id);
    if (starts_with(n.name, prefix)) continue;
    Node copy = n;
    for (int& in : copy.inputs) {
      if (in == add) in = unit_input;
      in = remap.at(in);
      if (in < 0) throw ConstructionError("node '" + n.name + "' depends on the removed unit internals");
    }
    remap[id] = out.add(std::move(copy));
  }
  for (const auto& [role, id] : graph.outputs()) {
    const int target = id == add ? unit_input : id;
    out.set_output(role, remap.at(target));
  }

  // Keep the recorded plan in step: "<column>/s<stage>/u<k>".
  const std::string name(unit);
  const auto slash = name.find('/');
  const auto stage_pos = name.find("/s");
  if (slash != std::string::npos && stage_pos != std::string::npos) {
    const std::string column = name.substr(0, slash);
    const int stage = std::stoi(name.substr(stage_pos + 2));
    if (stage >= 2 && stage <= 5) {
      ResidualStagePlan& plan = column == "half" ? out.info.plan_half : out.info.plan_full;
      plan.units[stage - 2] -= 1;
    }
  }
  return out;
}

}  // namespace sparsefcn
