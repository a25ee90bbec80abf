#include "sparsefcn/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "sparsefcn/errors.hpp"

namespace sparsefcn {

std::string to_string(const Dims& d) {
  return "(" + std::to_string(d.n) + "x" + std::to_string(d.c) + "x" + std::to_string(d.h) + "x" +
         std::to_string(d.w) + ")";
}

Tensor::Tensor(Dims dims, double fill) : dims_(dims) {
  if (dims.n < 0 || dims.c < 0 || dims.h < 0 || dims.w < 0) {
    throw ParameterError("negative tensor extent " + to_string(dims));
  }
  data_.assign(dims.count(), fill);
}

Tensor::Tensor(Dims dims, std::vector<double> data) : dims_(dims), data_(std::move(data)) {
  if (data_.size() != dims.count()) {
    throw ParameterError("tensor data length " + std::to_string(data_.size()) + " does not match " +
                         to_string(dims));
  }
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.dims() != b.dims()) {
    throw ParameterError("max_abs_diff: dims " + to_string(a.dims()) + " vs " + to_string(b.dims()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

namespace {

void require_same_dims(const Tensor& a, const Tensor& b, const char* op) {
  if (a.dims() != b.dims()) {
    throw ParameterError(std::string(op) + ": dims " + to_string(a.dims()) + " vs " + to_string(b.dims()));
  }
}

// Range of output columns ox for which ix = ox * stride - pad + offset lies in [0, in_w).
struct ColumnRange {
  int begin;
  int end;
};

ColumnRange valid_columns(int out_w, int in_w, int stride, int pad, int offset) {
  // ox * stride >= pad - offset
  const int lo_num = pad - offset;
  int begin = lo_num <= 0 ? 0 : (lo_num + stride - 1) / stride;
  // ox * stride <= in_w - 1 + pad - offset
  const int hi_num = in_w - 1 + pad - offset;
  int end = hi_num < 0 ? 0 : hi_num / stride + 1;
  begin = std::min(begin, out_w);
  end = std::clamp(end, begin, out_w);
  return {begin, end};
}

}  // namespace

// ---------------------------------------------------------------------------

int same_padding(int kernel, int dilation) noexcept { return dilation * (kernel - 1) / 2; }

ConvParams ConvParams::zeros(const ConvSpec& spec) {
  return ConvParams{spec, Tensor(spec.weight_dims()), Tensor(spec.bias_dims())};
}

Dims conv_output_dims(const Dims& input, const ConvSpec& s) {
  if (s.in_channels <= 0 || s.out_channels <= 0 || s.kernel_h <= 0 || s.kernel_w <= 0 || s.stride <= 0 ||
      s.dilation <= 0 || s.groups <= 0 || s.padding < 0) {
    throw ParameterError("conv2d: non-positive parameter");
  }
  if (s.in_channels % s.groups != 0 || s.out_channels % s.groups != 0) {
    throw ParameterError("conv2d: groups " + std::to_string(s.groups) + " must divide in_channels " +
                         std::to_string(s.in_channels) + " and out_channels " + std::to_string(s.out_channels));
  }
  if (input.c != s.in_channels) {
    throw ParameterError("conv2d: input has " + std::to_string(input.c) + " channels, expected " +
                         std::to_string(s.in_channels));
  }
  const int ph = input.h + 2 * s.padding;
  const int pw = input.w + 2 * s.padding;
  if (s.effective_kh() > ph || s.effective_kw() > pw) {
    throw ParameterError("conv2d: effective kernel exceeds padded input " + to_string(input));
  }
  return {input.n, s.out_channels, (ph - s.effective_kh()) / s.stride + 1, (pw - s.effective_kw()) / s.stride + 1};
}

namespace {

void check_params(const ConvParams& p) {
  if (p.weight.dims() != p.spec.weight_dims()) {
    throw ParameterError("conv2d: weight dims " + to_string(p.weight.dims()) + ", expected " +
                         to_string(p.spec.weight_dims()));
  }
  if (p.bias.dims() != p.spec.bias_dims()) {
    throw ParameterError("conv2d: bias dims " + to_string(p.bias.dims()));
  }
}

}  // namespace

namespace {

// Column matrix of one group: row k = (icl, ky, kx), column j = (n, oy, ox).
// Taps that fall into the padding hold zero.
void im2col(const Tensor& input, const ConvSpec& s, const Dims& od, int group, std::vector<double>& cols) {
  const Dims id = input.dims();
  const int in_per_group = s.in_channels / s.groups;
  const std::size_t plane = od.plane();
  const std::size_t width = static_cast<std::size_t>(od.n) * plane;
  cols.assign(static_cast<std::size_t>(in_per_group) * s.kernel_h * s.kernel_w * width, 0.0);
  const double* in_data = input.data().data();
  std::size_t row = 0;
  for (int icl = 0; icl < in_per_group; ++icl) {
    const int ic = group * in_per_group + icl;
    for (int ky = 0; ky < s.kernel_h; ++ky) {
      for (int kx = 0; kx < s.kernel_w; ++kx, ++row) {
        const ColumnRange xs = valid_columns(od.w, id.w, s.stride, s.padding, kx * s.dilation);
        const int x0 = kx * s.dilation - s.padding;
        for (int n = 0; n < od.n; ++n) {
          const double* ip = in_data + input.offset(n, ic, 0, 0);
          double* dst = cols.data() + row * width + n * plane;
          for (int oy = 0; oy < od.h; ++oy) {
            const int iy = oy * s.stride - s.padding + ky * s.dilation;
            if (iy < 0 || iy >= id.h) continue;
            const double* irow = ip + static_cast<std::size_t>(iy) * id.w;
            double* drow = dst + static_cast<std::size_t>(oy) * od.w;
            if (s.stride == 1) {
              for (int ox = xs.begin; ox < xs.end; ++ox) drow[ox] = irow[ox + x0];
            } else {
              for (int ox = xs.begin; ox < xs.end; ++ox) drow[ox] = irow[ox * s.stride + x0];
            }
          }
        }
      }
    }
  }
}

// Scatter-add inverse of im2col.
void col2im(const std::vector<double>& cols, const ConvSpec& s, const Dims& od, int group, Tensor& input_grad) {
  const Dims id = input_grad.dims();
  const int in_per_group = s.in_channels / s.groups;
  const std::size_t plane = od.plane();
  const std::size_t width = static_cast<std::size_t>(od.n) * plane;
  double* ig = input_grad.data().data();
  std::size_t row = 0;
  for (int icl = 0; icl < in_per_group; ++icl) {
    const int ic = group * in_per_group + icl;
    for (int ky = 0; ky < s.kernel_h; ++ky) {
      for (int kx = 0; kx < s.kernel_w; ++kx, ++row) {
        const ColumnRange xs = valid_columns(od.w, id.w, s.stride, s.padding, kx * s.dilation);
        const int x0 = kx * s.dilation - s.padding;
        for (int n = 0; n < od.n; ++n) {
          double* ip = ig + input_grad.offset(n, ic, 0, 0);
          const double* src = cols.data() + row * width + n * plane;
          for (int oy = 0; oy < od.h; ++oy) {
            const int iy = oy * s.stride - s.padding + ky * s.dilation;
            if (iy < 0 || iy >= id.h) continue;
            double* irow = ip + static_cast<std::size_t>(iy) * id.w;
            const double* srow = src + static_cast<std::size_t>(oy) * od.w;
            for (int ox = xs.begin; ox < xs.end; ++ox) irow[ox * s.stride + x0] += srow[ox];
          }
        }
      }
    }
  }
}

double dot(const double* a, const double* b, std::size_t n) {
  double acc[4] = {0, 0, 0, 0};
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc[0] += a[i] * b[i];
    acc[1] += a[i + 1] * b[i + 1];
    acc[2] += a[i + 2] * b[i + 2];
    acc[3] += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) acc[0] += a[i] * b[i];
  return (acc[0] + acc[1]) + (acc[2] + acc[3]);
}

}  // namespace

// Every output value is bias + sum over (icl, ky, kx) in that order, so a
// value does not depend on the batch it was computed in.
Tensor conv2d(const Tensor& input, const ConvParams& p) {
  const ConvSpec& s = p.spec;
  const Dims od = conv_output_dims(input.dims(), s);
  check_params(p);
  Tensor out(od);
  if (od.count() == 0) return out;
  const int out_per_group = s.out_channels / s.groups;
  const std::size_t k_len = static_cast<std::size_t>(s.in_channels / s.groups) * s.kernel_h * s.kernel_w;
  const std::size_t plane = od.plane();
  const std::size_t width = static_cast<std::size_t>(od.n) * plane;
  const double* w_data = p.weight.data().data();
  std::vector<double> cols;
  std::vector<double> acc(width);
  for (int g = 0; g < s.groups; ++g) {
    im2col(input, s, od, g, cols);
    for (int ocl = 0; ocl < out_per_group; ++ocl) {
      const int oc = g * out_per_group + ocl;
      std::fill(acc.begin(), acc.end(), p.bias.data()[oc]);
      const double* wrow = w_data + static_cast<std::size_t>(oc) * k_len;
      for (std::size_t k = 0; k < k_len; ++k) {
        const double wv = wrow[k];
        const double* crow = cols.data() + k * width;
        double* a = acc.data();
        for (std::size_t j = 0; j < width; ++j) a[j] += wv * crow[j];
      }
      for (int n = 0; n < od.n; ++n) {
        std::copy_n(acc.data() + n * plane, plane, out.data().data() + out.offset(n, oc, 0, 0));
      }
    }
  }
  return out;
}

ConvGrads conv2d_adjoint(const Tensor& input, const ConvParams& p, const Tensor& out_grad) {
  const ConvSpec& s = p.spec;
  const Dims od = conv_output_dims(input.dims(), s);
  check_params(p);
  if (out_grad.dims() != od) {
    throw ParameterError("conv2d_adjoint: out_grad dims " + to_string(out_grad.dims()) + ", expected " +
                         to_string(od));
  }
  ConvGrads g{Tensor(input.dims()), Tensor(s.weight_dims()), Tensor(s.bias_dims())};
  if (od.count() == 0) return g;
  const int out_per_group = s.out_channels / s.groups;
  const std::size_t k_len = static_cast<std::size_t>(s.in_channels / s.groups) * s.kernel_h * s.kernel_w;
  const std::size_t plane = od.plane();
  const std::size_t width = static_cast<std::size_t>(od.n) * plane;
  const double* w_data = p.weight.data().data();
  double* wg_data = g.weight.data().data();
  std::vector<double> cols;
  std::vector<double> dcols;
  std::vector<double> grow(width);
  for (int grp = 0; grp < s.groups; ++grp) {
    im2col(input, s, od, grp, cols);
    dcols.assign(cols.size(), 0.0);
    for (int ocl = 0; ocl < out_per_group; ++ocl) {
      const int oc = grp * out_per_group + ocl;
      for (int n = 0; n < od.n; ++n) {
        const auto src = out_grad.plane(n, oc);
        std::copy(src.begin(), src.end(), grow.begin() + static_cast<std::ptrdiff_t>(n * plane));
      }
      double bsum = 0.0;
      for (double v : grow) bsum += v;
      g.bias.data()[oc] += bsum;
      const double* wrow = w_data + static_cast<std::size_t>(oc) * k_len;
      double* wgrow = wg_data + static_cast<std::size_t>(oc) * k_len;
      for (std::size_t k = 0; k < k_len; ++k) {
        const double* crow = cols.data() + k * width;
        wgrow[k] += dot(grow.data(), crow, width);
        const double wv = wrow[k];
        double* drow = dcols.data() + k * width;
        const double* gr = grow.data();
        for (std::size_t j = 0; j < width; ++j) drow[j] += wv * gr[j];
      }
    }
    col2im(dcols, s, od, grp, g.input);
  }
  return g;
}

// ---------------------------------------------------------------------------

namespace {

void check_factor(ScaleFactor f) {
  const bool ok = (f.num == 1 && f.den == 2) || (f.num == 2 && f.den == 1) || (f.num == 4 && f.den == 1);
  if (!ok) {
    throw ParameterError("resample: unsupported factor " + std::to_string(f.num) + "/" + std::to_string(f.den));
  }
}

struct Tap {
  int i0;
  int i1;
  double w0;
  double w1;
};

std::vector<Tap> axis_taps(int in, int out, ScaleFactor f, ResampleMode mode) {
  std::vector<Tap> taps(static_cast<std::size_t>(out));
  const double inv = static_cast<double>(f.den) / static_cast<double>(f.num);
  for (int d = 0; d < out; ++d) {
    if (mode == ResampleMode::Nearest) {
      int src = static_cast<int>(std::floor((d + 0.5) * inv));
      src = std::clamp(src, 0, in - 1);
      taps[d] = {src, src, 1.0, 0.0};
    } else {
      double src = (d + 0.5) * inv - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(in - 1));
      const int i0 = static_cast<int>(std::floor(src));
      const int i1 = std::min(i0 + 1, in - 1);
      const double t = src - i0;
      taps[d] = {i0, i1, 1.0 - t, t};
    }
  }
  return taps;
}

}  // namespace

Dims resample_output_dims(const Dims& input, ScaleFactor f) {
  check_factor(f);
  if (f.den == 2 && (input.h % 2 != 0 || input.w % 2 != 0)) {
    throw ParameterError("resample: factor 1/2 requires even dims, got " + to_string(input));
  }
  return {input.n, input.c, input.h * f.num / f.den, input.w * f.num / f.den};
}

Tensor resample(const Tensor& input, ScaleFactor f, ResampleMode mode) {
  const Dims od = resample_output_dims(input.dims(), f);
  const Dims id = input.dims();
  Tensor out(od);
  const auto ty = axis_taps(id.h, od.h, f, mode);
  const auto tx = axis_taps(id.w, od.w, f, mode);
  for (int n = 0; n < od.n; ++n) {
    for (int c = 0; c < od.c; ++c) {
      auto ip = input.plane(n, c);
      auto op = out.plane(n, c);
      for (int y = 0; y < od.h; ++y) {
        const Tap& a = ty[y];
        const double* r0 = ip.data() + static_cast<std::size_t>(a.i0) * id.w;
        const double* r1 = ip.data() + static_cast<std::size_t>(a.i1) * id.w;
        for (int x = 0; x < od.w; ++x) {
          const Tap& b = tx[x];
          const double top = b.w0 * r0[b.i0] + b.w1 * r0[b.i1];
          const double bot = b.w0 * r1[b.i0] + b.w1 * r1[b.i1];
          op[static_cast<std::size_t>(y) * od.w + x] = a.w0 * top + a.w1 * bot;
        }
      }
    }
  }
  return out;
}

Tensor resample_adjoint(const Dims& id, ScaleFactor f, ResampleMode mode, const Tensor& out_grad) {
  const Dims od = resample_output_dims(id, f);
  if (out_grad.dims() != od) {
    throw ParameterError("resample_adjoint: out_grad dims " + to_string(out_grad.dims()));
  }
  Tensor g(id);
  const auto ty = axis_taps(id.h, od.h, f, mode);
  const auto tx = axis_taps(id.w, od.w, f, mode);
  for (int n = 0; n < od.n; ++n) {
    for (int c = 0; c < od.c; ++c) {
      auto gp = out_grad.plane(n, c);
      auto ip = g.plane(n, c);
      for (int y = 0; y < od.h; ++y) {
        const Tap& a = ty[y];
        double* r0 = ip.data() + static_cast<std::size_t>(a.i0) * id.w;
        double* r1 = ip.data() + static_cast<std::size_t>(a.i1) * id.w;
        for (int x = 0; x < od.w; ++x) {
          const Tap& b = tx[x];
          const double v = gp[static_cast<std::size_t>(y) * od.w + x];
          r0[b.i0] += a.w0 * b.w0 * v;
          r0[b.i1] += a.w0 * b.w1 * v;
          r1[b.i0] += a.w1 * b.w0 * v;
          r1[b.i1] += a.w1 * b.w1 * v;
        }
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------

Tensor eltwise(const Tensor& a, const Tensor& b, EltwiseKind kind) {
  require_same_dims(a, b, "eltwise");
  Tensor out(a.dims());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  switch (kind) {
    case EltwiseKind::Sum:
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
      break;
    case EltwiseKind::Max:
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] >= y[i] ? x[i] : y[i];
      break;
    case EltwiseKind::Product:
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
      break;
  }
  return out;
}

PairGrads eltwise_adjoint(const Tensor& a, const Tensor& b, EltwiseKind kind, const Tensor& out_grad) {
  require_same_dims(a, b, "eltwise_adjoint");
  require_same_dims(a, out_grad, "eltwise_adjoint");
  PairGrads g{Tensor(a.dims()), Tensor(b.dims())};
  auto ga = g.a.data();
  auto gb = g.b.data();
  auto og = out_grad.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < og.size(); ++i) {
    switch (kind) {
      case EltwiseKind::Sum:
        ga[i] = og[i];
        gb[i] = og[i];
        break;
      case EltwiseKind::Max:
        if (x[i] >= y[i]) {
          ga[i] = og[i];
        } else {
          gb[i] = og[i];
        }
        break;
      case EltwiseKind::Product:
        ga[i] = og[i] * y[i];
        gb[i] = og[i] * x[i];
        break;
    }
  }
  return g;
}

double sigmoid(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor activation(const Tensor& input, ActivationKind kind) {
  Tensor out(input.dims());
  auto o = out.data();
  auto x = input.data();
  if (kind == ActivationKind::Relu) {
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] > 0.0 ? x[i] : 0.0;
  } else {
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = sigmoid(x[i]);
  }
  return out;
}

Tensor activation_adjoint(const Tensor& input, const Tensor& output, ActivationKind kind, const Tensor& out_grad) {
  require_same_dims(input, out_grad, "activation_adjoint");
  Tensor g(input.dims());
  auto gi = g.data();
  auto og = out_grad.data();
  if (kind == ActivationKind::Relu) {
    auto x = input.data();
    for (std::size_t i = 0; i < gi.size(); ++i) gi[i] = x[i] > 0.0 ? og[i] : 0.0;
  } else {
    require_same_dims(output, out_grad, "activation_adjoint");
    auto y = output.data();
    for (std::size_t i = 0; i < gi.size(); ++i) gi[i] = og[i] * y[i] * (1.0 - y[i]);
  }
  return g;
}

Tensor softmax_channels(const Tensor& input) {
  const Dims d = input.dims();
  Tensor out(d);
  const std::size_t plane = d.plane();
  std::vector<double> e(static_cast<std::size_t>(d.c));
  for (int n = 0; n < d.n; ++n) {
    for (std::size_t i = 0; i < plane; ++i) {
      double m = input.data()[input.offset(n, 0, 0, 0) + i];
      for (int c = 1; c < d.c; ++c) m = std::max(m, input.data()[input.offset(n, c, 0, 0) + i]);
      double sum = 0.0;
      for (int c = 0; c < d.c; ++c) {
        e[c] = std::exp(input.data()[input.offset(n, c, 0, 0) + i] - m);
        sum += e[c];
      }
      for (int c = 0; c < d.c; ++c) out.data()[out.offset(n, c, 0, 0) + i] = e[c] / sum;
    }
  }
  return out;
}

Tensor softmax_channels_adjoint(const Tensor& output, const Tensor& out_grad) {
  require_same_dims(output, out_grad, "softmax_channels_adjoint");
  const Dims d = output.dims();
  Tensor g(d);
  const std::size_t plane = d.plane();
  for (int n = 0; n < d.n; ++n) {
    for (std::size_t i = 0; i < plane; ++i) {
      double dot = 0.0;
      for (int c = 0; c < d.c; ++c) {
        const std::size_t k = output.offset(n, c, 0, 0) + i;
        dot += output.data()[k] * out_grad.data()[k];
      }
      for (int c = 0; c < d.c; ++c) {
        const std::size_t k = output.offset(n, c, 0, 0) + i;
        g.data()[k] = output.data()[k] * (out_grad.data()[k] - dot);
      }
    }
  }
  return g;
}

Tensor scale_by_map(const Tensor& weights, const Tensor& x) {
  const Dims wd = weights.dims();
  const Dims xd = x.dims();
  if (wd.c != 1 || wd.n != xd.n || wd.h != xd.h || wd.w != xd.w) {
    throw ParameterError("scale_by_map: weights " + to_string(wd) + " incompatible with " + to_string(xd));
  }
  Tensor out(xd);
  for (int n = 0; n < xd.n; ++n) {
    auto wp = weights.plane(n, 0);
    for (int c = 0; c < xd.c; ++c) {
      auto xp = x.plane(n, c);
      auto op = out.plane(n, c);
      for (std::size_t i = 0; i < op.size(); ++i) op[i] = wp[i] * xp[i];
    }
  }
  return out;
}

PairGrads scale_by_map_adjoint(const Tensor& weights, const Tensor& x, const Tensor& out_grad) {
  require_same_dims(x, out_grad, "scale_by_map_adjoint");
  PairGrads g{Tensor(weights.dims()), Tensor(x.dims())};
  const Dims xd = x.dims();
  for (int n = 0; n < xd.n; ++n) {
    auto wp = weights.plane(n, 0);
    auto gw = g.a.plane(n, 0);
    for (int c = 0; c < xd.c; ++c) {
      auto xp = x.plane(n, c);
      auto gp = out_grad.plane(n, c);
      auto gx = g.b.plane(n, c);
      for (std::size_t i = 0; i < gp.size(); ++i) {
        gw[i] += gp[i] * xp[i];
        gx[i] = gp[i] * wp[i];
      }
    }
  }
  return g;
}

Tensor channel_slice(const Tensor& input, int begin, int count) {
  const Dims d = input.dims();
  if (begin < 0 || count < 0 || begin + count > d.c) {
    throw ParameterError("channel_slice: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") outside " + std::to_string(d.c) + " channels");
  }
  Tensor out({d.n, count, d.h, d.w});
  for (int n = 0; n < d.n; ++n) {
    for (int c = 0; c < count; ++c) {
      auto src = input.plane(n, begin + c);
      std::copy(src.begin(), src.end(), out.plane(n, c).begin());
    }
  }
  return out;
}

Tensor channel_slice_adjoint(const Dims& input_dims, int begin, const Tensor& out_grad) {
  Tensor g(input_dims);
  const Dims od = out_grad.dims();
  if (od.n != input_dims.n || od.h != input_dims.h || od.w != input_dims.w || begin + od.c > input_dims.c) {
    throw ParameterError("channel_slice_adjoint: incompatible dims");
  }
  for (int n = 0; n < od.n; ++n) {
    for (int c = 0; c < od.c; ++c) {
      auto src = out_grad.plane(n, c);
      std::copy(src.begin(), src.end(), g.plane(n, begin + c).begin());
    }
  }
  return g;
}

// ---------------------------------------------------------------------------

Tensor pool_avg(const Tensor& input) {
  const Dims d = input.dims();
  if (d.h % 2 != 0 || d.w % 2 != 0) throw ParameterError("pool_avg: odd dims " + to_string(d));
  Tensor out({d.n, d.c, d.h / 2, d.w / 2});
  for (int n = 0; n < d.n; ++n) {
    for (int c = 0; c < d.c; ++c) {
      for (int y = 0; y < d.h / 2; ++y) {
        for (int x = 0; x < d.w / 2; ++x) {
          const double s = input.at(n, c, 2 * y, 2 * x) + input.at(n, c, 2 * y, 2 * x + 1) +
                           input.at(n, c, 2 * y + 1, 2 * x) + input.at(n, c, 2 * y + 1, 2 * x + 1);
          out.at(n, c, y, x) = 0.25 * s;
        }
      }
    }
  }
  return out;
}

Tensor pool_avg_adjoint(const Dims& d, const Tensor& out_grad) {
  if (d.h % 2 != 0 || d.w % 2 != 0) throw ParameterError("pool_avg_adjoint: odd dims " + to_string(d));
  if (out_grad.dims() != Dims{d.n, d.c, d.h / 2, d.w / 2}) {
    throw ParameterError("pool_avg_adjoint: out_grad dims " + to_string(out_grad.dims()));
  }
  Tensor g(d);
  for (int n = 0; n < d.n; ++n) {
    for (int c = 0; c < d.c; ++c) {
      for (int y = 0; y < d.h; ++y) {
        for (int x = 0; x < d.w; ++x) g.at(n, c, y, x) = 0.25 * out_grad.at(n, c, y / 2, x / 2);
      }
    }
  }
  return g;
}

BatchNormParams BatchNormParams::identity(int channels) {
  const Dims cd{1, channels, 1, 1};
  return BatchNormParams{Tensor(cd, 1.0), Tensor(cd, 0.0), Tensor(cd, 0.0), Tensor(cd, 1.0)};
}

namespace {

void check_bn(const Tensor& input, const BatchNormParams& p) {
  const Dims cd{1, input.dims().c, 1, 1};
  if (p.scale.dims() != cd || p.shift.dims() != cd || p.running_mean.dims() != cd || p.running_var.dims() != cd) {
    throw ParameterError("batchnorm: parameter dims do not match " + std::to_string(input.dims().c) + " channels");
  }
}

}  // namespace

BatchNormResult batchnorm(const Tensor& input, const BatchNormParams& p, bool train) {
  check_bn(input, p);
  const Dims d = input.dims();
  BatchNormResult r{Tensor(d), std::vector<double>(d.c), std::vector<double>(d.c)};
  const double m = static_cast<double>(d.n) * static_cast<double>(d.plane());
  if (train && m == 0.0) throw ParameterError("batchnorm: training mode on an empty batch");
  for (int c = 0; c < d.c; ++c) {
    double mean = p.running_mean.data()[c];
    double var = p.running_var.data()[c];
    if (train) {
      double sum = 0.0;
      for (int n = 0; n < d.n; ++n) {
        for (double v : input.plane(n, c)) sum += v;
      }
      mean = sum / m;
      double sq = 0.0;
      for (int n = 0; n < d.n; ++n) {
        for (double v : input.plane(n, c)) sq += (v - mean) * (v - mean);
      }
      var = sq / m;
    }
    r.mean[c] = mean;
    r.var[c] = var;
    const double inv_std = 1.0 / std::sqrt(var + p.eps);
    const double g = p.scale.data()[c];
    const double b = p.shift.data()[c];
    for (int n = 0; n < d.n; ++n) {
      auto ip = input.plane(n, c);
      auto op = r.output.plane(n, c);
      for (std::size_t i = 0; i < ip.size(); ++i) op[i] = g * ((ip[i] - mean) * inv_std) + b;
    }
  }
  return r;
}

BatchNormGrads batchnorm_adjoint(const Tensor& input, const BatchNormParams& p, bool train,
                                 const BatchNormResult& fwd, const Tensor& out_grad) {
  check_bn(input, p);
  require_same_dims(input, out_grad, "batchnorm_adjoint");
  const Dims d = input.dims();
  const Dims cd{1, d.c, 1, 1};
  BatchNormGrads g{Tensor(d), Tensor(cd), Tensor(cd)};
  const double m = static_cast<double>(d.n) * static_cast<double>(d.plane());
  for (int c = 0; c < d.c; ++c) {
    const double mean = fwd.mean[c];
    const double inv_std = 1.0 / std::sqrt(fwd.var[c] + p.eps);
    double sum_dy = 0.0;
    double sum_dy_xhat = 0.0;
    for (int n = 0; n < d.n; ++n) {
      auto ip = input.plane(n, c);
      auto gp = out_grad.plane(n, c);
      for (std::size_t i = 0; i < ip.size(); ++i) {
        sum_dy += gp[i];
        sum_dy_xhat += gp[i] * (ip[i] - mean) * inv_std;
      }
    }
    g.shift.data()[c] = sum_dy;
    g.scale.data()[c] = sum_dy_xhat;
    const double gamma = p.scale.data()[c];
    for (int n = 0; n < d.n; ++n) {
      auto ip = input.plane(n, c);
      auto gp = out_grad.plane(n, c);
      auto gi = g.input.plane(n, c);
      for (std::size_t i = 0; i < ip.size(); ++i) {
        if (train) {
          const double xhat = (ip[i] - mean) * inv_std;
          gi[i] = gamma * inv_std * (gp[i] - sum_dy / m - xhat * sum_dy_xhat / m);
        } else {
          gi[i] = gamma * inv_std * gp[i];
        }
      }
    }
  }
  return g;
}

void update_running_stats(BatchNormParams& p, const BatchNormResult& fwd, std::size_t values_per_channel) {
  const double m = static_cast<double>(values_per_channel);
  const double correction = values_per_channel > 1 ? m / (m - 1.0) : 1.0;
  for (std::size_t c = 0; c < fwd.mean.size(); ++c) {
    p.running_mean.data()[c] = p.momentum * p.running_mean.data()[c] + (1.0 - p.momentum) * fwd.mean[c];
    p.running_var.data()[c] = p.momentum * p.running_var.data()[c] + (1.0 - p.momentum) * fwd.var[c] * correction;
  }
}

}  // namespace sparsefcn
