#include "sparsefcn/cost.hpp"

#include <cstdio>
#include <sstream>

#include "sparsefcn/errors.hpp"
#include "sparsefcn/executor.hpp"
#include "sparsefcn/regions.hpp"

namespace sparsefcn {

std::string_view to_string(InferMode m) { return m == InferMode::Classic ? "classic" : "fast"; }

InferMode infer_mode_from_string(std::string_view s) {
  if (s == "classic") return InferMode::Classic;
  if (s == "fast") return InferMode::Fast;
  throw ParameterError("unknown inference mode '" + std::string(s) + "' (expected classic or fast)");
}

std::int64_t mac_of_conv(const Dims& input, const ConvSpec& spec) {
  const Dims out = conv_output_dims(input, spec);
  return static_cast<std::int64_t>(out.n) * out.c * out.h * out.w * (spec.in_channels / spec.groups) * spec.kernel_h *
         spec.kernel_w;
}

namespace {

std::int64_t per_region_macs(const ModelGraph& graph, const std::vector<Dims>& dims) {
  std::int64_t sum = 0;
  for (int id = 0; id < graph.size(); ++id) {
    const Node& n = graph.node(id);
    if (n.op == OpKind::Conv && n.per_region) sum += mac_of_conv(dims[n.inputs[0]], n.conv.spec);
  }
  return sum;
}

}  // namespace

CostReport mac_of_pipeline(const ModelGraph& graph, const Dims& image, InferMode mode, int k) {
  const bool sparse = is_sparse(graph.info.fusion);
  if (mode == InferMode::Fast && !sparse) {
    throw UsageError("fast-mode cost needs a sparse model (sctf or isctf), got '" +
                     std::string(to_string(graph.info.fusion)) + "'");
  }
  const bool fast = mode == InferMode::Fast;
  if (fast) {
    const int cells = grid_for(graph, image).cells();
    if (k < 0 || k > cells) {
      throw ParameterError("region count " + std::to_string(k) + " outside [0, " + std::to_string(cells) + "]");
    }
  }
  const std::vector<Dims> dims = infer_dims(graph, image, fast, fast ? k : 0);

  // Only layers the `main` output depends on run at inference; auxiliary heads are training-only.
  const int main = graph.require_output("main");
  std::vector<char> need(static_cast<std::size_t>(graph.size()), 0);
  need[main] = 1;
  for (int id = main; id >= 0; --id) {
    if (need[id]) {
      for (int in : graph.node(id).inputs) need[in] = 1;
    }
  }

  CostReport r;
  r.images = image.n;
  if (sparse) r.regions_per_image = fast ? k : grid_for(graph, image).cells();
  for (int id = 0; id < graph.size(); ++id) {
    const Node& n = graph.node(id);
    if (n.op != OpKind::Conv || !need[id]) continue;
    const std::int64_t macs = mac_of_conv(dims[n.inputs[0]], n.conv.spec);
    r.per_layer.push_back({n.name, n.column, n.per_region, macs});
    r.total += macs;
    if (n.per_region) continue;
    if (n.column == ColumnTag::Half) {
      r.breakdown.half_column += macs;
    } else {
      r.breakdown.fixed_overhead += macs;
    }
  }
  if (sparse) {
    // Crops all have the same extent, so one crop per image gives the unit cost.
    const Dims one{1, image.c, image.h, image.w};
    r.breakdown.full_column_per_region = per_region_macs(graph, infer_dims(graph, one, true, 1));
  }
  return r;
}

std::string format_text(const CostReport& r) {
  std::ostringstream os;
  std::size_t width = 5;
  for (const auto& l : r.per_layer) width = std::max(width, l.layer.size());
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s  %-6s  %6s  %14s\n", static_cast<int>(width), "layer", "column", "region",
                "macs");
  os << buf;
  for (const auto& l : r.per_layer) {
    std::snprintf(buf, sizeof buf, "%-*s  %-6s  %6s  %14lld\n", static_cast<int>(width), l.layer.c_str(),
                  std::string(to_string(l.column)).c_str(), l.per_region ? "yes" : "no",
                  static_cast<long long>(l.macs));
    os << buf;
  }
  os << "total " << r.total << " macs (" << r.images << " image(s), " << r.regions_per_image
     << " region(s) per image)\n";
  os << "  half column            " << r.breakdown.half_column << '\n';
  os << "  full column per region " << r.breakdown.full_column_per_region << '\n';
  os << "  fixed overhead         " << r.breakdown.fixed_overhead << '\n';
  return os.str();
}

std::string format_kv(const CostReport& r) {
  std::ostringstream os;
  os << "total=" << r.total << '\n';
  os << "images=" << r.images << '\n';
  os << "regions_per_image=" << r.regions_per_image << '\n';
  os << "half_column=" << r.breakdown.half_column << '\n';
  os << "full_column_per_region=" << r.breakdown.full_column_per_region << '\n';
  os << "fixed_overhead=" << r.breakdown.fixed_overhead << '\n';
  for (const auto& l : r.per_layer) os << "layer." << l.layer << '=' << l.macs << '\n';
  return os.str();
}

}  // namespace sparsefcn
