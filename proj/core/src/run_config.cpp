#include "sparsefcn/run_config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "sparsefcn/errors.hpp"

namespace sparsefcn {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

[[noreturn]] void bad(std::string_view key, std::string_view value, const char* expected) {
  throw ParameterError("config key '" + std::string(key) + "': '" + std::string(value) + "' is not " + expected);
}

long long to_int(std::string_view key, std::string_view v) {
  long long out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad(key, v, "an integer");
  return out;
}

double to_double(std::string_view key, std::string_view v) {
  const std::string s(v);
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(s, &used);
  } catch (const std::exception&) {
    bad(key, v, "a number");
  }
  if (used != s.size()) bad(key, v, "a number");
  return out;
}

bool to_bool(std::string_view key, std::string_view v) {
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  bad(key, v, "a boolean");
}

std::array<int, 4> to_plan(std::string_view key, std::string_view v) {
  std::array<int, 4> out{};
  std::size_t k = 0;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = v.find(',', start);
    const std::string_view part = trim(v.substr(start, comma == std::string_view::npos ? v.npos : comma - start));
    if (k == 4) bad(key, v, "four comma-separated integers");
    out[k++] = static_cast<int>(to_int(key, part));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  if (k != 4) bad(key, v, "four comma-separated integers");
  return out;
}

template <typename F>
auto enum_value(std::string_view key, std::string_view v, F&& parse) {
  try {
    return parse(v);
  } catch (const ParameterError&) {
    bad(key, v, "a known name");
  }
}

}  // namespace

void RunConfig::set(std::string_view key, std::string_view v) {
  if (key == "model") {
    model = std::string(v);
  } else if (key == "out") {
    out = std::string(v);
  } else if (key == "fusion") {
    fusion = enum_value(key, v, fusion_from_string);
  } else if (key == "decoder") {
    decoder = enum_value(key, v, decoder_from_string);
  } else if (key == "plan_full") {
    plan_full.units = to_plan(key, v);
  } else if (key == "plan_half") {
    plan_half.units = to_plan(key, v);
  } else if (key == "widths") {
    plan_full.widths = to_plan(key, v);
    plan_half.widths = plan_full.widths;
  } else if (key == "optimized") {
    optimized = to_bool(key, v);
  } else if (key == "classes") {
    classes = static_cast<int>(to_int(key, v));
  } else if (key == "stem_width") {
    stem_width = static_cast<int>(to_int(key, v));
  } else if (key == "region_px") {
    region_px = static_cast<int>(to_int(key, v));
  } else if (key == "feature_stride") {
    feature_stride = static_cast<int>(to_int(key, v));
  } else if (key == "height") {
    height = static_cast<int>(to_int(key, v));
  } else if (key == "width") {
    width = static_cast<int>(to_int(key, v));
  } else if (key == "p") {
    p = to_double(key, v);
  } else if (key == "lambda") {
    train.lambda = to_double(key, v);
  } else if (key == "alpha") {
    train.alpha = to_double(key, v);
  } else if (key == "lr") {
    train.lr = to_double(key, v);
  } else if (key == "momentum") {
    train.momentum = to_double(key, v);
  } else if (key == "iterations") {
    train.iterations = static_cast<int>(to_int(key, v));
  } else if (key == "batch") {
    train.batch = static_cast<int>(to_int(key, v));
  } else if (key == "aux_weight") {
    train.aux_weight = to_double(key, v);
  } else if (key == "bootstrap_fraction") {
    train.bootstrap_fraction = to_double(key, v);
  } else if (key == "weight_decay") {
    train.weight_decay = to_double(key, v);
  } else if (key == "clip_norm") {
    train.clip_norm = to_double(key, v);
  } else if (key == "train_scenes") {
    train_scenes = static_cast<int>(to_int(key, v));
  } else if (key == "val_scenes") {
    val_scenes = static_cast<int>(to_int(key, v));
  } else if (key == "trials") {
    trials = static_cast<int>(to_int(key, v));
  } else if (key == "seed") {
    const long long s = to_int(key, v);
    if (s < 0) bad(key, v, "a nonnegative integer");
    seed = static_cast<std::uint64_t>(s);
  } else {
    throw ParameterError("unknown config key '" + std::string(key) + "'");
  }
}

void RunConfig::validate() const {
  if (classes < 3 || classes > 255) throw ParameterError("classes must lie in [3, 255]");
  if (height <= 0 || width <= 0) throw ParameterError("height and width must be positive");
  if (!(p >= 0 && p <= 1)) throw ParameterError("p must lie in [0, 1]");
  if (train_scenes < 1 || val_scenes < 1) throw ParameterError("scene counts must be positive");
  if (trials < 1) throw ParameterError("trials must be positive");
  plan_full.validate();
  plan_half.validate();
}

TwoColumnConfig RunConfig::model_config() const {
  TwoColumnConfig c;
  c.fusion = fusion;
  c.decoder = decoder;
  c.classes = classes;
  c.stem_width = stem_width;
  c.plan_full = plan_full;
  c.plan_half = plan_half;
  c.optimized = optimized;
  c.region_px = region_px;
  c.feature_stride = feature_stride;
  c.target_rate = p;
  c.seed = seed;
  return c;
}

RunConfig parse_run_config(std::string_view text, RunConfig base) {
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ParameterError("config line " + std::to_string(line_no) + ": expected key=value");
    }
    try {
      base.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ParameterError& e) {
      throw ParameterError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return base;
}

RunConfig load_run_config(const std::string& path, RunConfig base) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read config '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_run_config(ss.str(), std::move(base));
}

}  // namespace sparsefcn
