#include <bit>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "sparsefcn/errors.hpp"
#include "sparsefcn/graph.hpp"

namespace sparsefcn {

namespace {

constexpr std::string_view kMagic = "sparsefcn-graph";
constexpr int kVersion = 1;

std::string hex(double v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(std::bit_cast<std::uint64_t>(v)));
  return buf;
}

template <std::size_t N>
std::string join(const std::array<int, N>& a) {
  std::string s;
  for (std::size_t i = 0; i < N; ++i) s += (i ? "," : "") + std::to_string(a[i]);
  return s;
}

void write_tensor(std::ostringstream& os, const std::string& name, const Tensor& t) {
  const Dims d = t.dims();
  os << "tensor " << name << ' ' << d.n << ' ' << d.c << ' ' << d.h << ' ' << d.w;
  for (double v : t.data()) os << ' ' << hex(v);
  os << '\n';
}

// ---------------------------------------------------------------------------

struct Token {
  std::string_view text;
  std::size_t offset;
};

class Reader {
 public:
  explicit Reader(std::string_view text) : text_(text) {}

  // Next non-empty line split into tokens; false at end of input.
  bool next_line(std::vector<Token>& tokens) {
    tokens.clear();
    while (pos_ < text_.size() && tokens.empty()) {
      std::size_t end = text_.find('\n', pos_);
      if (end == std::string_view::npos) end = text_.size();
      std::size_t i = pos_;
      while (i < end) {
        while (i < end && (text_[i] == ' ' || text_[i] == '\t' || text_[i] == '\r')) ++i;
        const std::size_t start = i;
        while (i < end && text_[i] != ' ' && text_[i] != '\t' && text_[i] != '\r') ++i;
        if (i > start) tokens.push_back({text_.substr(start, i - start), start});
      }
      line_offset_ = pos_;
      pos_ = end + 1;
    }
    return !tokens.empty();
  }

  std::size_t line_offset() const { return line_offset_; }
  std::size_t end_offset() const { return text_.size(); }

 private:
  std::string_view text_;
  std::size_t pos_ = 0;
  std::size_t line_offset_ = 0;
};

long long parse_int(const Token& t) {
  long long v = 0;
  auto [p, ec] = std::from_chars(t.text.data(), t.text.data() + t.text.size(), v);
  if (ec != std::errc() || p != t.text.data() + t.text.size()) {
    throw ParseError("expected integer, got '" + std::string(t.text) + "'", t.offset);
  }
  return v;
}

int parse_small_int(std::string_view s, std::size_t offset) {
  return static_cast<int>(parse_int(Token{s, offset}));
}

double parse_hex_double(const Token& t) {
  std::uint64_t bits = 0;
  auto [p, ec] = std::from_chars(t.text.data(), t.text.data() + t.text.size(), bits, 16);
  if (t.text.size() != 16 || ec != std::errc() || p != t.text.data() + t.text.size()) {
    throw ParseError("expected 16 hex digits, got '" + std::string(t.text) + "'", t.offset);
  }
  return std::bit_cast<double>(bits);
}

std::vector<int> parse_int_list(const Token& t, std::string_view value, std::size_t value_offset) {
  std::vector<int> out;
  if (value.empty()) return out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = value.find(',', start);
    const std::string_view part = value.substr(start, comma == std::string_view::npos ? value.size() - start
                                                                                      : comma - start);
    out.push_back(parse_small_int(part, value_offset + start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  (void)t;
  return out;
}

template <std::size_t N>
std::array<int, N> parse_int_array(const Token& t, std::string_view value, std::size_t off) {
  const auto v = parse_int_list(t, value, off);
  if (v.size() != N) throw ParseError("expected " + std::to_string(N) + " comma-separated integers", off);
  std::array<int, N> a{};
  std::copy(v.begin(), v.end(), a.begin());
  return a;
}

struct KeyValue {
  std::string_view key;
  std::string_view value;
  std::size_t value_offset;
};

KeyValue split_kv(const Token& t) {
  const auto eq = t.text.find('=');
  if (eq == std::string_view::npos) throw ParseError("expected key=value, got '" + std::string(t.text) + "'", t.offset);
  return {t.text.substr(0, eq), t.text.substr(eq + 1), t.offset + eq + 1};
}

template <typename F>
auto wrap_enum(F&& f, const KeyValue& kv) {
  try {
    return f(kv.value);
  } catch (const ParameterError& e) {
    throw ParseError(e.what(), kv.value_offset);
  }
}

void parse_info(GraphInfo& info, const std::vector<Token>& tokens) {
  for (std::size_t i = 1; i < tokens.size(); ++i) {
    const KeyValue kv = split_kv(tokens[i]);
    const Token vt{kv.value, kv.value_offset};
    if (kv.key == "fusion") {
      info.fusion = wrap_enum(fusion_from_string, kv);
    } else if (kv.key == "decoder") {
      info.decoder = wrap_enum(decoder_from_string, kv);
    } else if (kv.key == "classes") {
      info.classes = static_cast<int>(parse_int(vt));
    } else if (kv.key == "stem_width") {
      info.stem_width = static_cast<int>(parse_int(vt));
    } else if (kv.key == "plan_full") {
      info.plan_full.units = parse_int_array<4>(vt, kv.value, kv.value_offset);
    } else if (kv.key == "widths_full") {
      info.plan_full.widths = parse_int_array<4>(vt, kv.value, kv.value_offset);
    } else if (kv.key == "plan_half") {
      info.plan_half.units = parse_int_array<4>(vt, kv.value, kv.value_offset);
    } else if (kv.key == "widths_half") {
      info.plan_half.widths = parse_int_array<4>(vt, kv.value, kv.value_offset);
    } else if (kv.key == "width_factor") {
      info.width_factor = parse_hex_double(vt);
    } else if (kv.key == "dec_widths") {
      info.decoder_shape.widths = parse_int_array<3>(vt, kv.value, kv.value_offset);
    } else if (kv.key == "top_groups") {
      info.decoder_shape.top_groups = static_cast<int>(parse_int(vt));
    } else if (kv.key == "jump_groups") {
      info.decoder_shape.jump_groups = parse_int_array<3>(vt, kv.value, kv.value_offset);
    } else if (kv.key == "full_top_kernel") {
      info.decoder_shape.full_top_kernel = static_cast<int>(parse_int(vt));
    } else if (kv.key == "half_top_kernel") {
      info.decoder_shape.half_top_kernel = static_cast<int>(parse_int(vt));
    } else if (kv.key == "optimized") {
      info.decoder_shape.optimized = parse_int(vt) != 0;
    } else if (kv.key == "region_px") {
      info.region_px = static_cast<int>(parse_int(vt));
    } else if (kv.key == "feature_stride") {
      info.feature_stride = static_cast<int>(parse_int(vt));
    } else if (kv.key == "target_rate") {
      info.target_rate = parse_hex_double(vt);
    } else if (kv.key == "seed") {
      info.seed = static_cast<std::uint64_t>(parse_int(vt));
    } else if (kv.key == "input_divisor") {
      info.input_divisor = static_cast<int>(parse_int(vt));
    } else {
      throw ParseError("unknown info key '" + std::string(kv.key) + "'", tokens[i].offset);
    }
  }
}

Node parse_node(const std::vector<Token>& tokens, int id) {
  if (tokens.size() < 2) throw ParseError("node line needs a name", tokens[0].offset);
  Node n;
  n.name = std::string(tokens[1].text);
  ConvSpec spec;
  bool is_conv = false;
  for (std::size_t i = 2; i < tokens.size(); ++i) {
    const KeyValue kv = split_kv(tokens[i]);
    const Token vt{kv.value, kv.value_offset};
    if (kv.key == "op") {
      n.op = wrap_enum(op_from_string, kv);
    } else if (kv.key == "column") {
      n.column = wrap_enum(column_from_string, kv);
    } else if (kv.key == "per_region") {
      n.per_region = parse_int(vt) != 0;
    } else if (kv.key == "inputs") {
      n.inputs = parse_int_list(vt, kv.value, kv.value_offset);
      for (int in : n.inputs) {
        if (in < 0 || in >= id) throw ParseError("input index " + std::to_string(in) + " is not earlier", kv.value_offset);
      }
    } else if (kv.key == "conv") {
      const auto a = parse_int_array<8>(vt, kv.value, kv.value_offset);
      spec = ConvSpec{a[0], a[1], a[2], a[3], a[4], a[5], a[6], a[7]};
      is_conv = true;
    } else if (kv.key == "factor") {
      const auto slash = kv.value.find('/');
      if (slash == std::string_view::npos) throw ParseError("factor must be num/den", kv.value_offset);
      n.factor = {parse_small_int(kv.value.substr(0, slash), kv.value_offset),
                  parse_small_int(kv.value.substr(slash + 1), kv.value_offset + slash + 1)};
    } else if (kv.key == "mode") {
      if (kv.value == "bilinear") {
        n.resample_mode = ResampleMode::Bilinear;
      } else if (kv.value == "nearest") {
        n.resample_mode = ResampleMode::Nearest;
      } else {
        throw ParseError("unknown resample mode", kv.value_offset);
      }
    } else if (kv.key == "slice") {
      const auto a = parse_int_array<2>(vt, kv.value, kv.value_offset);
      n.slice_begin = a[0];
      n.slice_count = a[1];
    } else if (kv.key == "crop_stride") {
      n.crop_stride = static_cast<int>(parse_int(vt));
    } else if (kv.key == "crop_always") {
      n.crop_always = parse_int(vt) != 0;
    } else if (kv.key == "eps") {
      n.bn.eps = parse_hex_double(vt);
    } else if (kv.key == "momentum") {
      n.bn.momentum = parse_hex_double(vt);
    } else {
      throw ParseError("unknown node key '" + std::string(kv.key) + "'", tokens[i].offset);
    }
  }
  if (is_conv) n.conv.spec = spec;
  return n;
}

Tensor* tensor_slot(Node& n, std::string_view slot) {
  if (n.op == OpKind::Conv) {
    if (slot == "weight") return &n.conv.weight;
    if (slot == "bias") return &n.conv.bias;
  } else if (n.op == OpKind::BatchNorm) {
    if (slot == "scale") return &n.bn.scale;
    if (slot == "shift") return &n.bn.shift;
    if (slot == "running_mean") return &n.bn.running_mean;
    if (slot == "running_var") return &n.bn.running_var;
  }
  return nullptr;
}

}  // namespace

std::string serialize(const ModelGraph& g) {
  std::ostringstream os;
  const GraphInfo& i = g.info;
  os << kMagic << ' ' << kVersion << '\n';
  os << "info fusion=" << to_string(i.fusion) << " decoder=" << to_string(i.decoder) << " classes=" << i.classes
     << " stem_width=" << i.stem_width << " plan_full=" << join(i.plan_full.units)
     << " widths_full=" << join(i.plan_full.widths) << " plan_half=" << join(i.plan_half.units)
     << " widths_half=" << join(i.plan_half.widths) << " width_factor=" << hex(i.width_factor)
     << " dec_widths=" << join(i.decoder_shape.widths) << " top_groups=" << i.decoder_shape.top_groups
     << " jump_groups=" << join(i.decoder_shape.jump_groups)
     << " full_top_kernel=" << i.decoder_shape.full_top_kernel
     << " half_top_kernel=" << i.decoder_shape.half_top_kernel << " optimized=" << (i.decoder_shape.optimized ? 1 : 0)
     << " region_px=" << i.region_px << " feature_stride=" << i.feature_stride << " target_rate=" << hex(i.target_rate)
     << " seed=" << i.seed << " input_divisor=" << i.input_divisor << '\n';
  os << "nodes " << g.size() << '\n';
  for (const Node& n : g.nodes()) {
    os << "node " << n.name << " op=" << to_string(n.op) << " column=" << to_string(n.column)
       << " per_region=" << (n.per_region ? 1 : 0) << " inputs=";
    for (std::size_t k = 0; k < n.inputs.size(); ++k) os << (k ? "," : "") << n.inputs[k];
    switch (n.op) {
      case OpKind::Conv: {
        const ConvSpec& s = n.conv.spec;
        os << " conv=" << s.in_channels << ',' << s.out_channels << ',' << s.kernel_h << ',' << s.kernel_w << ','
           << s.stride << ',' << s.dilation << ',' << s.groups << ',' << s.padding;
        break;
      }
      case OpKind::Resample:
        os << " factor=" << n.factor.num << '/' << n.factor.den
           << " mode=" << (n.resample_mode == ResampleMode::Bilinear ? "bilinear" : "nearest");
        break;
      case OpKind::ChannelSlice:
        os << " slice=" << n.slice_begin << ',' << n.slice_count;
        break;
      case OpKind::Crop:
      case OpKind::Uncrop:
        os << " crop_stride=" << n.crop_stride << " crop_always=" << (n.crop_always ? 1 : 0);
        break;
      case OpKind::BatchNorm:
        os << " eps=" << hex(n.bn.eps) << " momentum=" << hex(n.bn.momentum);
        break;
      default:
        break;
    }
    os << '\n';
  }
  for (const Node& n : g.nodes()) {
    if (n.op == OpKind::Conv) {
      write_tensor(os, n.name + ".weight", n.conv.weight);
      write_tensor(os, n.name + ".bias", n.conv.bias);
    } else if (n.op == OpKind::BatchNorm) {
      write_tensor(os, n.name + ".scale", n.bn.scale);
      write_tensor(os, n.name + ".shift", n.bn.shift);
      write_tensor(os, n.name + ".running_mean", n.bn.running_mean);
      write_tensor(os, n.name + ".running_var", n.bn.running_var);
    }
  }
  for (const auto& [role, id] : g.outputs()) os << "output " << role << ' ' << g.node(id).name << '\n';
  os << "end\n";
  return os.str();
}

ModelGraph deserialize(std::string_view text) {
  Reader r(text);
  std::vector<Token> t;
  if (!r.next_line(t) || t[0].text != kMagic) throw ParseError("missing '" + std::string(kMagic) + "' header", 0);
  if (t.size() != 2 || parse_int(t[1]) != kVersion) {
    throw ParseError("unsupported format version", t.size() > 1 ? t[1].offset : t[0].offset);
  }
  ModelGraph g;
  if (!r.next_line(t) || t[0].text != "info") throw ParseError("expected 'info' line", r.line_offset());
  parse_info(g.info, t);
  if (!r.next_line(t) || t[0].text != "nodes" || t.size() != 2) {
    throw ParseError("expected 'nodes <count>' line", r.line_offset());
  }
  const long long count = parse_int(t[1]);
  if (count < 0) throw ParseError("negative node count", t[1].offset);
  for (long long k = 0; k < count; ++k) {
    if (!r.next_line(t) || t[0].text != "node") throw ParseError("expected 'node' line", r.line_offset());
    Node n = parse_node(t, static_cast<int>(k));
    if (n.op == OpKind::Conv) n.conv = ConvParams::zeros(n.conv.spec);
    if (n.op == OpKind::BatchNorm) {
      const double eps = n.bn.eps;
      const double momentum = n.bn.momentum;
      if (n.inputs.empty()) throw ParseError("batchnorm node without input", t[0].offset);
      n.bn = BatchNormParams{};  // sized when its tensors arrive
      n.bn.eps = eps;
      n.bn.momentum = momentum;
    }
    try {
      g.add(std::move(n));
    } catch (const ConstructionError& e) {
      throw ParseError(e.what(), t[0].offset);
    }
  }
  bool ended = false;
  while (r.next_line(t)) {
    if (t[0].text == "end") {
      ended = true;
      break;
    }
    if (t[0].text == "tensor") {
      if (t.size() < 6) throw ParseError("tensor line needs name and four extents", t[0].offset);
      const auto dot = t[1].text.rfind('.');
      if (dot == std::string_view::npos) throw ParseError("tensor name needs node.slot", t[1].offset);
      const int id = g.find(t[1].text.substr(0, dot));
      if (id < 0) throw ParseError("tensor for unknown node", t[1].offset);
      Tensor* slot = tensor_slot(g.node(id), t[1].text.substr(dot + 1));
      if (slot == nullptr) throw ParseError("unknown tensor slot", t[1].offset);
      const Dims d{static_cast<int>(parse_int(t[2])), static_cast<int>(parse_int(t[3])),
                   static_cast<int>(parse_int(t[4])), static_cast<int>(parse_int(t[5]))};
      if (d.n < 0 || d.c < 0 || d.h < 0 || d.w < 0) throw ParseError("negative tensor extent", t[2].offset);
      if (t.size() - 6 != d.count()) {
        throw ParseError("tensor has " + std::to_string(t.size() - 6) + " values, expected " +
                             std::to_string(d.count()),
                         t[1].offset);
      }
      if (g.node(id).op == OpKind::Conv && slot->dims() != d) {
        throw ParseError("tensor extents do not match the convolution", t[2].offset);
      }
      std::vector<double> values(d.count());
      for (std::size_t k = 0; k < values.size(); ++k) values[k] = parse_hex_double(t[6 + k]);
      *slot = Tensor(d, std::move(values));
    } else if (t[0].text == "output") {
      if (t.size() != 3) throw ParseError("output line needs role and node", t[0].offset);
      const int id = g.find(t[2].text);
      if (id < 0) throw ParseError("output references unknown node", t[2].offset);
      g.set_output(std::string(t[1].text), id);
    } else {
      throw ParseError("unexpected line '" + std::string(t[0].text) + "'", t[0].offset);
    }
  }
  if (!ended) throw ParseError("missing 'end' line", r.end_offset());
  for (const Node& n : g.nodes()) {
    if (n.op == OpKind::BatchNorm) {
      const Dims cd = n.bn.scale.dims();
      if (cd.c == 0 || n.bn.shift.dims() != cd || n.bn.running_mean.dims() != cd || n.bn.running_var.dims() != cd) {
        throw ParseError("batchnorm '" + n.name + "' is missing parameters", r.end_offset());
      }
    }
  }
  if (!g.output("image")) throw ParseError("graph has no image output", r.end_offset());
  return g;
}

void save_graph(const ModelGraph& graph, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write '" + path + "'");
  f << serialize(graph);
  if (!f) throw IoError("write failed for '" + path + "'");
}

ModelGraph load_graph(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return deserialize(ss.str());
}

}  // namespace sparsefcn
