#include "sparsefcn/pipeline.hpp"

#include <array>

#include "sparsefcn/errors.hpp"
#include "sparsefcn/sparsity.hpp"

namespace sparsefcn {

namespace {

void check_rate(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw ParameterError("target rate p must lie in [0, 1], got " + std::to_string(p));
}

ExecOptions counting_options(std::int64_t& macs) {
  ExecOptions o;
  o.phase = Phase::Infer;
  o.on_conv = [&macs](int, const Tensor&, const ConvParams& params, const Tensor& out) {
    const ConvSpec& s = params.spec;
    macs += static_cast<std::int64_t>(out.dims().count()) * (s.in_channels / s.groups) * s.kernel_h * s.kernel_w;
  };
  return o;
}

InferenceResult finish(const ModelGraph& graph, const Activations& a, std::int64_t macs) {
  InferenceResult r;
  if (a.options.fast) {
    r.cost = mac_of_pipeline(graph, a.image_dims, InferMode::Fast, a.options.active ? static_cast<int>(a.options.active->size()) / a.image_dims.n : 0);
  } else {
    r.cost = mac_of_pipeline(graph, a.image_dims, InferMode::Classic, 0);
  }
  r.fused_scores = a.values[graph.require_output("main")];
  const Dims d = r.fused_scores.dims();
  const int factor = a.image_dims.h / d.h;
  r.labels = upsample_labels(argmax_channels(r.fused_scores), d.n, d.h, d.w, factor);
  r.height = d.h * factor;
  r.width = d.w * factor;
  r.macs = macs;
  if (a.options.mask) r.mask = *a.options.mask;
  if (a.options.active) r.active = *a.options.active;
  return r;
}

InferenceResult run(const ModelGraph& graph, const Tensor& image, double p, bool fast) {
  check_rate(p);
  const bool sparse = is_sparse(graph.info.fusion);
  if (fast && !sparse) {
    throw UsageError("fast inference needs a sparse model (sctf or isctf), got '" +
                     std::string(to_string(graph.info.fusion)) + "'");
  }
  std::int64_t macs = 0;
  const int main = graph.require_output("main");
  if (!sparse) {
    const std::array<int, 1> t{main};
    const Activations a = forward(graph, image, counting_options(macs), t);
    return finish(graph, a, macs);
  }
  const int s_id = graph.require_output("s");
  const std::array<int, 1> first{s_id};
  Activations a = forward(graph, image, counting_options(macs), first);
  const Tensor& s = a.values[s_id];
  Tensor mask = select_wta(s, wta_count(p, a.grid.cells()));
  if (fast) {
    a.options.active = active_regions(mask);
    a.options.fast = true;
  }
  a.options.mask = std::move(mask);
  const std::array<int, 1> rest{main};
  forward_more(graph, a, rest);
  return finish(graph, a, macs);
}

}  // namespace

std::vector<int> argmax_channels(const Tensor& scores) {
  const Dims d = scores.dims();
  std::vector<int> out(static_cast<std::size_t>(d.n) * d.plane());
  const auto v = scores.data();
  const std::size_t plane = d.plane();
  for (int n = 0; n < d.n; ++n) {
    for (std::size_t i = 0; i < plane; ++i) {
      int best = 0;
      double best_v = v[scores.offset(n, 0, 0, 0) + i];
      for (int c = 1; c < d.c; ++c) {
        const double x = v[scores.offset(n, c, 0, 0) + i];
        if (x > best_v) {
          best_v = x;
          best = c;
        }
      }
      out[n * plane + i] = best;
    }
  }
  return out;
}

std::vector<int> upsample_labels(const std::vector<int>& labels, int n, int h, int w, int factor) {
  if (factor < 1) throw ParameterError("label upsampling factor must be positive");
  if (labels.size() != static_cast<std::size_t>(n) * h * w) throw ParameterError("label map size mismatch");
  const int oh = h * factor;
  const int ow = w * factor;
  std::vector<int> out(static_cast<std::size_t>(n) * oh * ow);
  for (int b = 0; b < n; ++b) {
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        out[(static_cast<std::size_t>(b) * oh + y) * ow + x] = labels[(static_cast<std::size_t>(b) * h + y / factor) * w + x / factor];
      }
    }
  }
  return out;
}

InferenceResult classic_infer(const ModelGraph& graph, const Tensor& image, double p) {
  return run(graph, image, p, false);
}

InferenceResult fast_infer(const ModelGraph& graph, const Tensor& image, double p) {
  return run(graph, image, p, true);
}

InferenceResult infer(const ModelGraph& graph, const Tensor& image, InferMode mode, double p) {
  return run(graph, image, p, mode == InferMode::Fast);
}

ConfusionMatrix evaluate(const ModelGraph& graph, const std::vector<SceneSample>& scenes, InferMode mode, double p) {
  ConfusionMatrix m(graph.info.classes);
  for (const SceneSample& s : scenes) m.add(s.labels, infer(graph, s.image, mode, p).labels);
  return m;
}

}  // namespace sparsefcn
