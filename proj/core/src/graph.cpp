#include "sparsefcn/graph.hpp"

#include <algorithm>
#include <cmath>

#include "sparsefcn/errors.hpp"

namespace sparsefcn {

namespace {

template <typename E, std::size_t N>
E parse_enum(std::string_view s, const std::array<std::pair<E, std::string_view>, N>& table, const char* what) {
  for (const auto& [value, name] : table) {
    if (name == s) return value;
  }
  throw ParameterError(std::string("unknown ") + what + " '" + std::string(s) + "'");
}

template <typename E, std::size_t N>
std::string_view enum_name(E v, const std::array<std::pair<E, std::string_view>, N>& table) {
  for (const auto& [value, name] : table) {
    if (value == v) return name;
  }
  return "?";
}

constexpr std::array<std::pair<OpKind, std::string_view>, 17> kOps{{
    {OpKind::Input, "input"},
    {OpKind::Conv, "conv"},
    {OpKind::BatchNorm, "batchnorm"},
    {OpKind::Relu, "relu"},
    {OpKind::Sigmoid, "sigmoid"},
    {OpKind::Softmax, "softmax"},
    {OpKind::Resample, "resample"},
    {OpKind::Sum, "sum"},
    {OpKind::Max, "max"},
    {OpKind::Product, "product"},
    {OpKind::ScaleByMap, "scale_by_map"},
    {OpKind::ChannelSlice, "channel_slice"},
    {OpKind::AvgPool, "avg_pool"},
    {OpKind::Crop, "crop"},
    {OpKind::Uncrop, "uncrop"},
    {OpKind::StopGradient, "stop_gradient"},
    {OpKind::RegionGate, "region_gate"},
}};

constexpr std::array<std::pair<ColumnTag, std::string_view>, 4> kColumns{{
    {ColumnTag::Shared, "shared"},
    {ColumnTag::Half, "half"},
    {ColumnTag::Full, "full"},
    {ColumnTag::Head, "head"},
}};

constexpr std::array<std::pair<FusionKind, std::string_view>, 7> kFusions{{
    {FusionKind::None, "none"},
    {FusionKind::Sum, "sum"},
    {FusionKind::Max, "max"},
    {FusionKind::Attention, "attention"},
    {FusionKind::Ctf, "ctf"},
    {FusionKind::Sctf, "sctf"},
    {FusionKind::Isctf, "isctf"},
}};

constexpr std::array<std::pair<DecoderVariant, std::string_view>, 4> kDecoders{{
    {DecoderVariant::Classic, "classic"},
    {DecoderVariant::Dilated, "dilated"},
    {DecoderVariant::Mixed, "mixed"},
    {DecoderVariant::SharpMask, "sharpmask"},
}};

}  // namespace

std::string_view to_string(OpKind op) { return enum_name(op, kOps); }
std::string_view to_string(ColumnTag tag) { return enum_name(tag, kColumns); }
std::string_view to_string(FusionKind f) { return enum_name(f, kFusions); }
std::string_view to_string(DecoderVariant v) { return enum_name(v, kDecoders); }
OpKind op_from_string(std::string_view s) { return parse_enum(s, kOps, "op"); }
ColumnTag column_from_string(std::string_view s) { return parse_enum(s, kColumns, "column"); }
FusionKind fusion_from_string(std::string_view s) { return parse_enum(s, kFusions, "fusion"); }
DecoderVariant decoder_from_string(std::string_view s) { return parse_enum(s, kDecoders, "decoder variant"); }

// ---------------------------------------------------------------------------

int ResidualStagePlan::projection_units() const noexcept {
  return static_cast<int>(std::count_if(units.begin(), units.end(), [](int u) { return u > 0; }));
}

int ResidualStagePlan::deepest_stride() const {
  for (int s = 3; s >= 0; --s) {
    if (units[s] > 0) return 4 << s;
  }
  throw ConstructionError("residual plan has no units");
}

void ResidualStagePlan::validate() const {
  for (int s = 0; s < 4; ++s) {
    if (units[s] < 0) throw ConstructionError("residual plan: negative unit count in stage " + std::to_string(s + 2));
    if (widths[s] <= 0) throw ConstructionError("residual plan: non-positive width in stage " + std::to_string(s + 2));
  }
  // A removed stage ends the column: deeper stages would have no input at their stride.
  bool ended = false;
  for (int s = 0; s < 4; ++s) {
    if (units[s] == 0) {
      ended = true;
    } else if (ended) {
      throw ConstructionError("residual plan: stage " + std::to_string(s + 2) + " follows an empty stage");
    }
  }
  if (units[0] == 0) throw ConstructionError("residual plan: stage 2 must keep at least one unit");
}

DecoderShape DecoderShape::plain(double width_factor) {
  const int w = std::max(1, static_cast<int>(std::lround(128 * width_factor)));
  DecoderShape d;
  d.widths = {w, w, w};
  return d;
}

DecoderShape DecoderShape::optimized_for(double width_factor) {
  DecoderShape d;
  d.widths = {std::max(1, static_cast<int>(std::lround(128 * width_factor))),
              std::max(1, static_cast<int>(std::lround(64 * width_factor))),
              std::max(1, static_cast<int>(std::lround(32 * width_factor)))};
  d.top_groups = 8;
  d.jump_groups = {8, 4, 2};
  d.full_top_kernel = 1;
  d.half_top_kernel = 3;
  d.optimized = true;
  return d;
}

// ---------------------------------------------------------------------------

int ModelGraph::add(Node node) {
  const int id = size();
  for (int in : node.inputs) {
    if (in < 0 || in >= id) {
      throw ConstructionError("node '" + node.name + "' references input " + std::to_string(in) +
                              " that does not precede it");
    }
  }
  if (index_.count(node.name) != 0) throw ConstructionError("duplicate node name '" + node.name + "'");
  index_.emplace(node.name, id);
  nodes_.push_back(std::move(node));
  return id;
}

int ModelGraph::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  return it == index_.end() ? -1 : it->second;
}

int ModelGraph::require(std::string_view name) const {
  const int id = find(name);
  if (id < 0) throw ConstructionError("graph has no node '" + std::string(name) + "'");
  return id;
}

void ModelGraph::set_output(const std::string& role, int id) {
  if (id < 0 || id >= size()) throw ConstructionError("output '" + role + "' points outside the graph");
  outputs_[role] = id;
}

std::optional<int> ModelGraph::output(std::string_view role) const {
  auto it = outputs_.find(role);
  if (it == outputs_.end()) return std::nullopt;
  return it->second;
}

int ModelGraph::require_output(std::string_view role) const {
  auto id = output(role);
  if (!id) throw ConstructionError("graph has no '" + std::string(role) + "' output");
  return *id;
}

bool ModelGraph::reachable(int from, int to) const {
  if (from == to) return true;
  if (from > to) return false;
  std::vector<char> hit(static_cast<std::size_t>(size()), 0);
  hit[from] = 1;
  for (int id = from + 1; id <= to; ++id) {
    for (int in : nodes_[id].inputs) {
      if (hit[in]) {
        hit[id] = 1;
        break;
      }
    }
  }
  return hit[to] != 0;
}

void ModelGraph::reindex() {
  index_.clear();
  for (int id = 0; id < size(); ++id) {
    if (!index_.emplace(nodes_[id].name, id).second) {
      throw ConstructionError("duplicate node name '" + nodes_[id].name + "'");
    }
  }
}

// ---------------------------------------------------------------------------

std::vector<ParamRef> parameters(const ModelGraph& graph) {
  std::vector<ParamRef> out;
  for (int id = 0; id < graph.size(); ++id) {
    const Node& n = graph.node(id);
    if (n.op == OpKind::Conv) {
      out.push_back({id, 0, n.name + ".weight"});
      out.push_back({id, 1, n.name + ".bias"});
    } else if (n.op == OpKind::BatchNorm) {
      out.push_back({id, 0, n.name + ".scale"});
      out.push_back({id, 1, n.name + ".shift"});
    }
  }
  return out;
}

Tensor& param_tensor(ModelGraph& graph, const ParamRef& ref) {
  Node& n = graph.node(ref.node);
  if (n.op == OpKind::Conv) return ref.slot == 0 ? n.conv.weight : n.conv.bias;
  if (n.op == OpKind::BatchNorm) return ref.slot == 0 ? n.bn.scale : n.bn.shift;
  throw UsageError("node '" + n.name + "' has no parameters");
}

const Tensor& param_tensor(const ModelGraph& graph, const ParamRef& ref) {
  return param_tensor(const_cast<ModelGraph&>(graph), ref);
}

}  // namespace sparsefcn
