#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "sparsefcn/tensor.hpp"

namespace sparsefcn {

enum class OpKind {
  Input,
  Conv,
  BatchNorm,
  Relu,
  Sigmoid,
  Softmax,       // across channels
  Resample,
  Sum,
  Max,
  Product,
  ScaleByMap,    // (N,1,H,W) weights times (N,C,H,W) features
  ChannelSlice,
  AvgPool,
  Crop,          // image-extent map -> region crops on the batch axis
  Uncrop,        // region crops -> image-extent map, zero where skipped
  StopGradient,  // identity forward, zero adjoint
  RegionGate,    // mask * sigmoid(s), broadcast to the extent of input 1
};

/// Which part of a two-column model a node belongs to. Drives the cost breakdown.
enum class ColumnTag { Shared, Half, Full, Head };

std::string_view to_string(OpKind op);
std::string_view to_string(ColumnTag tag);
OpKind op_from_string(std::string_view s);
ColumnTag column_from_string(std::string_view s);

struct Node {
  std::string name;
  OpKind op = OpKind::Input;
  std::vector<int> inputs;
  ColumnTag column = ColumnTag::Shared;
  /// Batch axis holds region crops (full-resolution column of sparse models).
  bool per_region = false;

  ConvParams conv;                                  // Conv
  BatchNormParams bn;                               // BatchNorm
  ScaleFactor factor{1, 1};                         // Resample
  ResampleMode resample_mode = ResampleMode::Bilinear;
  int slice_begin = 0;                              // ChannelSlice
  int slice_count = 0;
  int crop_stride = 1;                              // Crop/Uncrop: image pixels per map pixel
  /// Crop/Uncrop only: when false the node is a passthrough except during
  /// fast inference (the plain sparse model, which trains on whole images).
  bool crop_always = true;
};

enum class FusionKind { None, Sum, Max, Attention, Ctf, Sctf, Isctf };
enum class DecoderVariant { Classic, Dilated, Mixed, SharpMask };

std::string_view to_string(FusionKind f);
std::string_view to_string(DecoderVariant v);
FusionKind fusion_from_string(std::string_view s);
DecoderVariant decoder_from_string(std::string_view s);

inline bool is_sparse(FusionKind f) { return f == FusionKind::Sctf || f == FusionKind::Isctf; }

/// Kept residual units in stages 2-5 and the stage widths.
struct ResidualStagePlan {
  std::array<int, 4> units{3, 4, 6, 3};
  std::array<int, 4> widths{16, 32, 64, 128};

  int total_units() const noexcept { return units[0] + units[1] + units[2] + units[3]; }
  /// One projection unit per non-empty stage.
  int projection_units() const noexcept;
  int identity_units() const noexcept { return total_units() - projection_units(); }
  /// Stride (relative to the column input) of the deepest non-empty stage.
  int deepest_stride() const;
  void validate() const;
  bool operator==(const ResidualStagePlan&) const = default;
};

/// Decoder width and grouping settings. Widths are indexed by the level
/// they feed: [0] top and 1/16, [1] 1/8, [2] 1/4.
struct DecoderShape {
  std::array<int, 3> widths{32, 32, 32};
  int top_groups = 1;
  std::array<int, 3> jump_groups{1, 1, 1};  // 1/16, 1/8, 1/4 jump connections
  int full_top_kernel = 3;                  // kernel of the full column's top layer
  int half_top_kernel = 3;
  bool optimized = false;

  static DecoderShape plain(double width_factor);
  static DecoderShape optimized_for(double width_factor);
  bool operator==(const DecoderShape&) const = default;
};

/// Construction settings of a model; serialized with the graph.
struct GraphInfo {
  FusionKind fusion = FusionKind::None;
  DecoderVariant decoder = DecoderVariant::SharpMask;
  int classes = 8;
  int stem_width = 8;
  ResidualStagePlan plan_full{{1, 1, 1, 0}, {16, 32, 64, 128}};
  ResidualStagePlan plan_half{{1, 1, 1, 1}, {16, 32, 64, 128}};
  double width_factor = 0.25;
  DecoderShape decoder_shape = DecoderShape::plain(0.25);
  int region_px = 16;
  int feature_stride = 16;
  double target_rate = 0.25;
  std::uint64_t seed = 1;
  /// Image height and width must be divisible by this.
  int input_divisor = 32;
  bool operator==(const GraphInfo&) const = default;
};

/// Directed acyclic graph of layers. Nodes are stored in topological order:
/// every input id is smaller than the consuming node's id.
class ModelGraph {
 public:
  GraphInfo info;

  int add(Node node);
  const std::vector<Node>& nodes() const noexcept { return nodes_; }
  std::vector<Node>& nodes() noexcept { return nodes_; }
  const Node& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  Node& node(int id) { return nodes_.at(static_cast<std::size_t>(id)); }
  int size() const noexcept { return static_cast<int>(nodes_.size()); }

  /// Node id by name, or -1.
  int find(std::string_view name) const;
  /// Node id by name; throws ConstructionError when absent.
  int require(std::string_view name) const;

  /// Named roles: image, main, aux_half, aux_full, z, s, tap4 ... tap32.
  void set_output(const std::string& role, int id);
  std::optional<int> output(std::string_view role) const;
  int require_output(std::string_view role) const;
  const std::map<std::string, int, std::less<>>& outputs() const noexcept { return outputs_; }

  /// True when a directed path leads from `from` to `to`.
  bool reachable(int from, int to) const;

  /// Rebuilds the name index after nodes were edited in place.
  void reindex();

 private:
  std::vector<Node> nodes_;
  std::unordered_map<std::string, int> index_;
  std::map<std::string, int, std::less<>> outputs_;
};

// ---------------------------------------------------------------------------
// Builders

/// Single column: image -> stem (3x3 stride-2 conv + 2x2 average pool) ->
/// residual stages. Taps `tap4` ... `tap32` mark stage outputs; empty stages
/// have no tap.
ModelGraph build_backbone(const ResidualStagePlan& plan, int stem_width, std::uint64_t seed = 1);

/// Adds a decoder and `main` score output at 1/4 resolution to a backbone graph.
/// Dilated removes the downsampling of stages 4 and 5, Mixed only of stage 5.
ModelGraph build_decoder(const ModelGraph& backbone, DecoderVariant variant, int classes,
                         const DecoderShape& shape = DecoderShape::plain(0.25));

struct TwoColumnConfig {
  FusionKind fusion = FusionKind::Isctf;
  DecoderVariant decoder = DecoderVariant::SharpMask;
  int classes = 8;
  int stem_width = 8;
  ResidualStagePlan plan_full{{1, 1, 1, 0}, {16, 32, 64, 128}};
  ResidualStagePlan plan_half{{1, 1, 1, 1}, {16, 32, 64, 128}};
  double width_factor = 0.25;
  bool optimized = false;
  int region_px = 16;
  int feature_stride = 16;
  double target_rate = 0.25;
  /// Requesting fast inference for attention fusion is rejected.
  bool fast_inference = false;
  std::uint64_t seed = 1;
};

ModelGraph build_two_column(const TwoColumnConfig& config);

/// Rebuilds an ISCTF graph with decoder widths (128, 64, 32) * width_factor,
/// group counts 8 (top layers) and 8/4/2 (jump connections), and a 1x1 top
/// layer in the full-resolution column.
ModelGraph optimize_structure(const ModelGraph& graph);

/// Deletes the identity residual unit named like "full/s4/u1", wiring its
/// input straight to its consumers. All other weights are kept.
ModelGraph remove_residual_unit(const ModelGraph& graph, std::string_view unit);

/// Names of identity (removable) residual units, in graph order.
std::vector<std::string> identity_units(const ModelGraph& graph);

// ---------------------------------------------------------------------------
// Parameters

struct ParamRef {
  int node = 0;
  int slot = 0;  // Conv: 0 weight, 1 bias. BatchNorm: 0 scale, 1 shift.
  std::string name;
};

/// Trainable tensors in node order.
std::vector<ParamRef> parameters(const ModelGraph& graph);
Tensor& param_tensor(ModelGraph& graph, const ParamRef& ref);
const Tensor& param_tensor(const ModelGraph& graph, const ParamRef& ref);

// ---------------------------------------------------------------------------
// Serialization

/// Versioned text format; see docs/graph_format.md.
std::string serialize(const ModelGraph& graph);
ModelGraph deserialize(std::string_view text);
void save_graph(const ModelGraph& graph, const std::string& path);
ModelGraph load_graph(const std::string& path);

}  // namespace sparsefcn
