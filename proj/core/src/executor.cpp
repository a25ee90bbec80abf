#include "sparsefcn/executor.hpp"

#include <string>

#include "sparsefcn/errors.hpp"
#include "sparsefcn/sparsity.hpp"

namespace sparsefcn {

namespace {

bool has_regions(const ModelGraph& g) { return is_sparse(g.info.fusion); }

bool passthrough(const Node& n, const ExecOptions& o) { return !n.crop_always && !o.fast; }

std::optional<std::span<const RegionIndex>> active_span(const ExecOptions& o) {
  if (!o.active) return std::nullopt;
  return std::span<const RegionIndex>(*o.active);
}

void accumulate(Tensor& into, Tensor&& g) {
  if (into.empty() && into.dims().count() == 0 && into.dims() == Dims{}) {
    into = std::move(g);
    return;
  }
  if (into.dims() != g.dims()) {
    throw ParameterError("gradient accumulation: " + to_string(into.dims()) + " vs " + to_string(g.dims()));
  }
  auto a = into.data();
  auto b = g.data();
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

std::vector<char> ancestors(const ModelGraph& g, std::span<const int> targets) {
  std::vector<char> need(static_cast<std::size_t>(g.size()), targets.empty() ? 1 : 0);
  if (targets.empty()) return need;
  for (int t : targets) need.at(static_cast<std::size_t>(t)) = 1;
  for (int id = g.size() - 1; id >= 0; --id) {
    if (!need[id]) continue;
    for (int in : g.node(id).inputs) need[in] = 1;
  }
  return need;
}

}  // namespace

RegionGrid grid_for(const ModelGraph& graph, const Dims& image) {
  return RegionGrid::for_image(image.h, image.w, graph.info.region_px, graph.info.feature_stride);
}

void validate_image(const ModelGraph& graph, const Dims& image) {
  if (image.n < 1 || image.c != 3) throw ParameterError("image must be (N>=1, 3, H, W), got " + to_string(image));
  const int div = graph.info.input_divisor;
  if (image.h <= 0 || image.w <= 0 || image.h % div != 0 || image.w % div != 0) {
    throw ParameterError("image " + std::to_string(image.h) + "x" + std::to_string(image.w) +
                         " must have dims divisible by " + std::to_string(div));
  }
}

Activations forward(const ModelGraph& graph, const Tensor& image, ExecOptions options, std::span<const int> targets) {
  validate_image(graph, image.dims());
  Activations a;
  a.options = std::move(options);
  a.image_dims = image.dims();
  if (has_regions(graph)) a.grid = grid_for(graph, image.dims());
  const auto n = static_cast<std::size_t>(graph.size());
  a.values.assign(n, Tensor());
  a.computed.assign(n, 0);
  a.bn.assign(n, BatchNormResult{});
  const int input = graph.require_output("image");
  a.values[input] = image;
  a.computed[input] = 1;
  for (const auto& [id, value] : a.options.pinned) {
    a.values.at(static_cast<std::size_t>(id)) = value;
    a.computed[id] = 1;
  }
  forward_more(graph, a, targets);
  return a;
}

void forward_more(const ModelGraph& graph, Activations& a, std::span<const int> targets) {
  const auto need = ancestors(graph, targets);
  const ExecOptions& o = a.options;
  const bool train = o.phase == Phase::Train;
  for (int id = 0; id < graph.size(); ++id) {
    if (!need[id] || a.computed[id]) continue;
    const Node& n = graph.node(id);
    auto in = [&](int k) -> const Tensor& { return a.values[n.inputs.at(k)]; };
    Tensor out;
    switch (n.op) {
      case OpKind::Input:
        throw UsageError("input node '" + n.name + "' was not provided");
      case OpKind::Conv:
        out = conv2d(in(0), n.conv);
        if (o.on_conv) o.on_conv(id, in(0), n.conv, out);
        break;
      case OpKind::BatchNorm: {
        BatchNormResult r = batchnorm(in(0), n.bn, train);
        out = std::move(r.output);
        r.output = Tensor();
        a.bn[id] = std::move(r);
        break;
      }
      case OpKind::Relu: out = activation(in(0), ActivationKind::Relu); break;
      case OpKind::Sigmoid: out = activation(in(0), ActivationKind::Sigmoid); break;
      case OpKind::Softmax: out = softmax_channels(in(0)); break;
      case OpKind::Resample: out = resample(in(0), n.factor, n.resample_mode); break;
      case OpKind::Sum: out = eltwise(in(0), in(1), EltwiseKind::Sum); break;
      case OpKind::Max: out = eltwise(in(0), in(1), EltwiseKind::Max); break;
      case OpKind::Product: out = eltwise(in(0), in(1), EltwiseKind::Product); break;
      case OpKind::ScaleByMap: out = scale_by_map(in(0), in(1)); break;
      case OpKind::ChannelSlice: out = channel_slice(in(0), n.slice_begin, n.slice_count); break;
      case OpKind::AvgPool: out = pool_avg(in(0)); break;
      case OpKind::Crop:
        out = passthrough(n, o) ? in(0) : crop_grid(in(0), a.grid, n.crop_stride, active_span(o));
        break;
      case OpKind::Uncrop:
        out = passthrough(n, o) ? in(0)
                                : uncrop_grid(in(0), a.grid, n.crop_stride, a.image_dims.n, active_span(o));
        break;
      case OpKind::StopGradient: out = in(0); break;
      case OpKind::RegionGate: {
        const Tensor& s = in(0);
        const Tensor& ref = in(1);
        const Tensor mask = o.mask ? *o.mask : Tensor(s.dims(), 1.0);
        out = broadcast_weights(mask, s, ref.dims().h, ref.dims().w);
        break;
      }
    }
    a.values[id] = std::move(out);
    a.computed[id] = 1;
  }
}

Gradients backward(const ModelGraph& graph, const Activations& a, const std::vector<std::pair<int, Tensor>>& seeds) {
  const auto params = parameters(graph);
  std::vector<int> first_param(static_cast<std::size_t>(graph.size()), -1);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (first_param[params[i].node] < 0) first_param[params[i].node] = static_cast<int>(i);
  }
  Gradients out;
  out.params.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) out.params[i] = Tensor(param_tensor(graph, params[i]).dims());
  out.nodes.assign(static_cast<std::size_t>(graph.size()), Tensor());

  for (const auto& [id, g] : seeds) {
    if (!a.computed.at(id)) throw UsageError("gradient seed on unevaluated node '" + graph.node(id).name + "'");
    if (g.dims() != a.values[id].dims()) {
      throw ParameterError("gradient seed for '" + graph.node(id).name + "' has dims " + to_string(g.dims()));
    }
    Tensor copy = g;
    accumulate(out.nodes[id], std::move(copy));
  }

  const ExecOptions& o = a.options;
  const bool train = o.phase == Phase::Train;
  for (int id = graph.size() - 1; id >= 0; --id) {
    const Tensor& g = out.nodes[id];
    if (g.dims() == Dims{} || !a.computed[id]) continue;
    const Node& n = graph.node(id);
    auto in = [&](int k) -> const Tensor& { return a.values[n.inputs.at(k)]; };
    auto push = [&](int k, Tensor&& t) { accumulate(out.nodes[n.inputs.at(k)], std::move(t)); };
    switch (n.op) {
      case OpKind::Input:
      case OpKind::StopGradient:
        break;
      case OpKind::Conv: {
        ConvGrads cg = conv2d_adjoint(in(0), n.conv, g);
        const int p = first_param[id];
        accumulate(out.params[p], std::move(cg.weight));
        accumulate(out.params[p + 1], std::move(cg.bias));
        push(0, std::move(cg.input));
        break;
      }
      case OpKind::BatchNorm: {
        BatchNormGrads bg = batchnorm_adjoint(in(0), n.bn, train, a.bn[id], g);
        const int p = first_param[id];
        accumulate(out.params[p], std::move(bg.scale));
        accumulate(out.params[p + 1], std::move(bg.shift));
        push(0, std::move(bg.input));
        break;
      }
      case OpKind::Relu: push(0, activation_adjoint(in(0), a.values[id], ActivationKind::Relu, g)); break;
      case OpKind::Sigmoid: push(0, activation_adjoint(in(0), a.values[id], ActivationKind::Sigmoid, g)); break;
      case OpKind::Softmax: push(0, softmax_channels_adjoint(a.values[id], g)); break;
      case OpKind::Resample: push(0, resample_adjoint(in(0).dims(), n.factor, n.resample_mode, g)); break;
      case OpKind::Sum:
      case OpKind::Max:
      case OpKind::Product: {
        const EltwiseKind kind = n.op == OpKind::Sum   ? EltwiseKind::Sum
                                 : n.op == OpKind::Max ? EltwiseKind::Max
                                                       : EltwiseKind::Product;
        PairGrads pg = eltwise_adjoint(in(0), in(1), kind, g);
        push(0, std::move(pg.a));
        push(1, std::move(pg.b));
        break;
      }
      case OpKind::ScaleByMap: {
        PairGrads pg = scale_by_map_adjoint(in(0), in(1), g);
        push(0, std::move(pg.a));
        push(1, std::move(pg.b));
        break;
      }
      case OpKind::ChannelSlice: push(0, channel_slice_adjoint(in(0).dims(), n.slice_begin, g)); break;
      case OpKind::AvgPool: push(0, pool_avg_adjoint(in(0).dims(), g)); break;
      case OpKind::Crop:
        if (passthrough(n, o)) {
          Tensor copy = g;
          push(0, std::move(copy));
        } else {
          push(0, uncrop_grid(g, a.grid, n.crop_stride, in(0).dims().n, active_span(o)));
        }
        break;
      case OpKind::Uncrop:
        if (passthrough(n, o)) {
          Tensor copy = g;
          push(0, std::move(copy));
        } else {
          push(0, crop_grid(g, a.grid, n.crop_stride, active_span(o)));
        }
        break;
      case OpKind::RegionGate: {
        const Tensor& s = in(0);
        const Tensor mask = o.mask ? *o.mask : Tensor(s.dims(), 1.0);
        push(0, broadcast_weights_adjoint(mask, s, g));
        break;
      }
    }
  }
  return out;
}

std::vector<Dims> infer_dims(const ModelGraph& graph, const Dims& image, bool fast, int crops_per_image) {
  validate_image(graph, image);
  RegionGrid grid;
  if (has_regions(graph)) grid = grid_for(graph, image);
  if (fast && (crops_per_image < 0 || crops_per_image > grid.cells())) {
    throw ParameterError("crops per image " + std::to_string(crops_per_image) + " outside [0, " +
                         std::to_string(grid.cells()) + "]");
  }
  ExecOptions o;
  o.fast = fast;
  std::vector<Dims> d(static_cast<std::size_t>(graph.size()));
  for (int id = 0; id < graph.size(); ++id) {
    const Node& n = graph.node(id);
    auto in = [&](int k) -> const Dims& { return d.at(n.inputs.at(k)); };
    switch (n.op) {
      case OpKind::Input: d[id] = image; break;
      case OpKind::Conv: d[id] = conv_output_dims(in(0), n.conv.spec); break;
      case OpKind::Resample: d[id] = resample_output_dims(in(0), n.factor); break;
      case OpKind::ChannelSlice: d[id] = {in(0).n, n.slice_count, in(0).h, in(0).w}; break;
      case OpKind::AvgPool: {
        if (in(0).h % 2 != 0 || in(0).w % 2 != 0) throw ParameterError("pool_avg: odd dims " + to_string(in(0)));
        d[id] = {in(0).n, in(0).c, in(0).h / 2, in(0).w / 2};
        break;
      }
      case OpKind::ScaleByMap: d[id] = in(1); break;
      case OpKind::RegionGate: d[id] = {in(0).n, 1, in(1).h, in(1).w}; break;
      case OpKind::Sum:
      case OpKind::Max:
      case OpKind::Product:
        if (in(0) != in(1)) throw ParameterError("eltwise at '" + n.name + "': " + to_string(in(0)) + " vs " + to_string(in(1)));
        d[id] = in(0);
        break;
      case OpKind::Crop: {
        if (passthrough(n, o)) {
          d[id] = in(0);
        } else {
          const int f = region_footprint(grid, n.crop_stride);
          const int per = fast ? crops_per_image : grid.cells();
          d[id] = {in(0).n * per, in(0).c, f, f};
        }
        break;
      }
      case OpKind::Uncrop: {
        if (passthrough(n, o)) {
          d[id] = in(0);
        } else {
          const int f = region_footprint(grid, n.crop_stride);
          d[id] = {image.n, in(0).c, grid.rows * f, grid.cols * f};
        }
        break;
      }
      default: d[id] = in(0); break;
    }
  }
  return d;
}

void apply_bn_statistics(ModelGraph& graph, const Activations& a) {
  if (a.options.phase != Phase::Train) return;
  for (int id = 0; id < graph.size(); ++id) {
    Node& n = graph.node(id);
    if (n.op != OpKind::BatchNorm || !a.computed[id]) continue;
    const Dims d = a.values[n.inputs.at(0)].dims();
    update_running_stats(n.bn, a.bn[id], static_cast<std::size_t>(d.n) * d.plane());
  }
}

}  // namespace sparsefcn
