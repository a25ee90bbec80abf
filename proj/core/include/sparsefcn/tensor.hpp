#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace sparsefcn {

/// Extents of a batch x channel x height x width tensor.
struct Dims {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t count() const noexcept {
    return static_cast<std::size_t>(n) * static_cast<std::size_t>(c) * static_cast<std::size_t>(h) *
           static_cast<std::size_t>(w);
  }
  std::size_t plane() const noexcept { return static_cast<std::size_t>(h) * static_cast<std::size_t>(w); }
  bool operator==(const Dims&) const = default;
};

std::string to_string(const Dims& d);

/// Dense NCHW tensor of doubles. A plain value type: copies are deep.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Dims dims, double fill = 0.0);
  Tensor(Dims dims, std::vector<double> data);

  const Dims& dims() const noexcept { return dims_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  std::size_t offset(int n, int c, int y, int x) const noexcept {
    return ((static_cast<std::size_t>(n) * dims_.c + c) * dims_.h + y) * dims_.w + x;
  }
  double& at(int n, int c, int y, int x) noexcept { return data_[offset(n, c, y, x)]; }
  double at(int n, int c, int y, int x) const noexcept { return data_[offset(n, c, y, x)]; }

  /// One H x W plane.
  std::span<double> plane(int n, int c) noexcept {
    return std::span<double>(data_).subspan(offset(n, c, 0, 0), dims_.plane());
  }
  std::span<const double> plane(int n, int c) const noexcept {
    return std::span<const double>(data_).subspan(offset(n, c, 0, 0), dims_.plane());
  }

  void fill(double v);
  bool all_finite() const noexcept;
  bool operator==(const Tensor&) const = default;

 private:
  Dims dims_{};
  std::vector<double> data_;
};

/// Largest |a - b| over all entries; dims must match.
double max_abs_diff(const Tensor& a, const Tensor& b);

// ---------------------------------------------------------------------------
// Convolution

/// Geometry of a 2-D convolution. Weight layout: (out, in / groups, kh, kw).
struct ConvSpec {
  int in_channels = 1;
  int out_channels = 1;
  int kernel_h = 1;
  int kernel_w = 1;
  int stride = 1;
  int dilation = 1;
  int groups = 1;
  int padding = 0;

  int effective_kh() const noexcept { return dilation * (kernel_h - 1) + 1; }
  int effective_kw() const noexcept { return dilation * (kernel_w - 1) + 1; }
  Dims weight_dims() const noexcept { return {out_channels, in_channels / groups, kernel_h, kernel_w}; }
  Dims bias_dims() const noexcept { return {1, out_channels, 1, 1}; }
  bool operator==(const ConvSpec&) const = default;
};

/// "Same" padding for an odd kernel: dilation * (k - 1) / 2.
int same_padding(int kernel, int dilation) noexcept;

struct ConvParams {
  ConvSpec spec;
  Tensor weight;
  Tensor bias;

  /// Zero-initialized weights and bias sized from `spec`.
  static ConvParams zeros(const ConvSpec& spec);
};

/// Validates `spec` against the input extents and returns the output extents.
/// Throws ParameterError on any inconsistency.
Dims conv_output_dims(const Dims& input, const ConvSpec& spec);

Tensor conv2d(const Tensor& input, const ConvParams& p);

struct ConvGrads {
  Tensor input;
  Tensor weight;
  Tensor bias;
};

/// Gradients of <out_grad, conv2d(input, p)> w.r.t. input, weights and bias.
ConvGrads conv2d_adjoint(const Tensor& input, const ConvParams& p, const Tensor& out_grad);

// ---------------------------------------------------------------------------
// Resampling

enum class ResampleMode { Bilinear, Nearest };

/// Supported scale factors: 1/2, 2 and 4.
struct ScaleFactor {
  int num = 1;
  int den = 1;
  bool operator==(const ScaleFactor&) const = default;
};

inline constexpr ScaleFactor kHalf{1, 2};
inline constexpr ScaleFactor kDouble{2, 1};
inline constexpr ScaleFactor kQuadruple{4, 1};

Dims resample_output_dims(const Dims& input, ScaleFactor factor);

/// Bilinear sampling uses half-pixel centers with edge clamping; nearest picks
/// floor((dst + 0.5) / factor).
Tensor resample(const Tensor& input, ScaleFactor factor, ResampleMode mode);
Tensor resample_adjoint(const Dims& input_dims, ScaleFactor factor, ResampleMode mode, const Tensor& out_grad);

// ---------------------------------------------------------------------------
// Pointwise

enum class EltwiseKind { Sum, Max, Product };

Tensor eltwise(const Tensor& a, const Tensor& b, EltwiseKind kind);

struct PairGrads {
  Tensor a;
  Tensor b;
};

/// For Max, ties route the gradient to `a`.
PairGrads eltwise_adjoint(const Tensor& a, const Tensor& b, EltwiseKind kind, const Tensor& out_grad);

enum class ActivationKind { Relu, Sigmoid };

double sigmoid(double x) noexcept;

Tensor activation(const Tensor& input, ActivationKind kind);
/// Needs the forward input for Relu and the forward output for Sigmoid; both are passed.
Tensor activation_adjoint(const Tensor& input, const Tensor& output, ActivationKind kind, const Tensor& out_grad);

/// Softmax across the channel axis at every (n, y, x), max-subtracted.
Tensor softmax_channels(const Tensor& input);
Tensor softmax_channels_adjoint(const Tensor& output, const Tensor& out_grad);

/// weights (N, 1, H, W) broadcast over the channels of x (N, C, H, W).
Tensor scale_by_map(const Tensor& weights, const Tensor& x);
PairGrads scale_by_map_adjoint(const Tensor& weights, const Tensor& x, const Tensor& out_grad);

/// Channels [begin, begin + count).
Tensor channel_slice(const Tensor& input, int begin, int count);
Tensor channel_slice_adjoint(const Dims& input_dims, int begin, const Tensor& out_grad);

// ---------------------------------------------------------------------------
// Pooling and normalization

/// 2x2 average pooling with stride 2.
Tensor pool_avg(const Tensor& input);
Tensor pool_avg_adjoint(const Dims& input_dims, const Tensor& out_grad);

struct BatchNormParams {
  Tensor scale;         // (1, C, 1, 1)
  Tensor shift;         // (1, C, 1, 1)
  Tensor running_mean;  // (1, C, 1, 1)
  Tensor running_var;   // (1, C, 1, 1)
  double eps = 1e-7;
  double momentum = 0.9;

  static BatchNormParams identity(int channels);
};

struct BatchNormResult {
  Tensor output;
  std::vector<double> mean;  // statistics actually used
  std::vector<double> var;
};

/// Training mode normalizes with batch statistics (biased variance);
/// inference mode uses the frozen running statistics.
BatchNormResult batchnorm(const Tensor& input, const BatchNormParams& p, bool train);

struct BatchNormGrads {
  Tensor input;
  Tensor scale;
  Tensor shift;
};

BatchNormGrads batchnorm_adjoint(const Tensor& input, const BatchNormParams& p, bool train,
                                 const BatchNormResult& forward, const Tensor& out_grad);

/// Running-statistics update: running = momentum * running + (1 - momentum) * batch.
/// The batch variance is bias-corrected when more than one value per channel exists.
void update_running_stats(BatchNormParams& p, const BatchNormResult& forward, std::size_t values_per_channel);

}  // namespace sparsefcn
