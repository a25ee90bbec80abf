#include <cmath>
#include <fstream>
#include <sstream>

#include "sparsefcn/errors.hpp"
#include "sparsefcn/scene.hpp"

namespace sparsefcn {

namespace {

struct Header {
  int width = 0;
  int height = 0;
  std::size_t data_offset = 0;
};

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

// Netpbm header: magic, width, height, maxval, separated by whitespace and
// '#' comments, then exactly one whitespace byte before the raster.
Header parse_header(std::string_view bytes, std::string_view magic) {
  if (bytes.size() < 2 || bytes.substr(0, 2) != magic) {
    throw ParseError("expected magic '" + std::string(magic) + "'", 0);
  }
  std::size_t pos = 2;
  auto next_int = [&](const char* what) {
    while (pos < bytes.size()) {
      if (is_space(bytes[pos])) {
        ++pos;
      } else if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    long long v = 0;
    while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') {
      v = v * 10 + (bytes[pos] - '0');
      if (v > 1'000'000) throw ParseError(std::string(what) + " too large", start);
      ++pos;
    }
    if (pos == start) throw ParseError(std::string("expected ") + what, start);
    return std::pair<int, std::size_t>(static_cast<int>(v), start);
  };
  Header h;
  auto [w, w_at] = next_int("width");
  auto [ht, h_at] = next_int("height");
  auto [maxval, m_at] = next_int("maxval");
  if (w <= 0) throw ParseError("width must be positive", w_at);
  if (ht <= 0) throw ParseError("height must be positive", h_at);
  if (maxval != 255) throw ParseError("only maxval 255 is supported", m_at);
  if (pos >= bytes.size() || !is_space(bytes[pos])) throw ParseError("expected whitespace after maxval", pos);
  h.width = w;
  h.height = ht;
  h.data_offset = pos + 1;
  return h;
}

void check_raster(std::string_view bytes, const Header& h, int channels) {
  const std::size_t need = static_cast<std::size_t>(h.width) * h.height * channels;
  const std::size_t have = bytes.size() - h.data_offset;
  if (have < need) {
    throw ParseError("raster truncated: " + std::to_string(have) + " of " + std::to_string(need) + " bytes",
                     bytes.size());
  }
  if (have > need) throw ParseError("trailing bytes after raster", h.data_offset + need);
}

std::uint8_t quantize(double v) {
  if (!std::isfinite(v)) throw ParameterError("cannot encode a non-finite pixel value");
  const double c = v < 0 ? 0 : (v > 1 ? 1 : v);
  return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

}  // namespace

std::string encode_ppm(const Tensor& image) {
  const Dims d = image.dims();
  if (d.n != 1 || d.c != 3 || d.h <= 0 || d.w <= 0) throw ParameterError("PPM expects (1, 3, h, w), got " + to_string(d));
  std::string out = "P6\n" + std::to_string(d.w) + " " + std::to_string(d.h) + "\n255\n";
  out.reserve(out.size() + d.count());
  for (int y = 0; y < d.h; ++y) {
    for (int x = 0; x < d.w; ++x) {
      for (int c = 0; c < 3; ++c) out.push_back(static_cast<char>(quantize(image.at(0, c, y, x))));
    }
  }
  return out;
}

Tensor decode_ppm(std::string_view bytes) {
  const Header h = parse_header(bytes, "P6");
  check_raster(bytes, h, 3);
  Tensor out({1, 3, h.height, h.width});
  std::size_t pos = h.data_offset;
  for (int y = 0; y < h.height; ++y) {
    for (int x = 0; x < h.width; ++x) {
      for (int c = 0; c < 3; ++c) out.at(0, c, y, x) = static_cast<std::uint8_t>(bytes[pos++]) / 255.0;
    }
  }
  return out;
}

std::string encode_pgm(const std::vector<int>& labels, int height, int width) {
  if (height <= 0 || width <= 0 || labels.size() != static_cast<std::size_t>(height) * width) {
    throw ParameterError("label map size does not match " + std::to_string(height) + "x" + std::to_string(width));
  }
  std::string out = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  for (int l : labels) {
    if (l < 0 || l > 255) throw ParameterError("label " + std::to_string(l) + " does not fit a gray level");
    out.push_back(static_cast<char>(l));
  }
  return out;
}

std::vector<int> decode_pgm(std::string_view bytes, int& height, int& width) {
  const Header h = parse_header(bytes, "P5");
  check_raster(bytes, h, 1);
  height = h.height;
  width = h.width;
  std::vector<int> out(static_cast<std::size_t>(h.width) * h.height);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<std::uint8_t>(bytes[h.data_offset + i]);
  return out;
}

void write_file(const std::string& path, std::string_view bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write '" + path + "'");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed for '" + path + "'");
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace sparsefcn
