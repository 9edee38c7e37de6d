#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "downscale/tensor.hpp"

namespace downscale::nn {

/// Kernel [kh, kw, c_in, c_out], bias [c_out]. Zero-padded SAME convolution:
/// the kernel is centered with (k - 1) / 2 taps of padding on the leading side.
struct Conv2DParams {
  Tensor kernel;
  Tensor bias;
  int stride = 1;
};

/// Output extent ceil(H / stride) x ceil(W / stride); odd kernels only.
Tensor conv2d(const Tensor& x, const Conv2DParams& p);

/// Adjoint of a stride-`factor` conv2d: spatial extents grow by `factor`.
/// Even kernels are accepted here. x has c_in channels, output has c_out.
Tensor transposed_conv2d(const Tensor& x, const Conv2DParams& p, int factor);

/// [n, h, w, r*r*c] -> [n, r*h, r*w, c] with
/// out[n, r*i + di, r*j + dj, k] = x[n, i, j, (di*r + dj)*c + k].
Tensor pixel_shuffle(const Tensor& x, int r);
Tensor inverse_pixel_shuffle(const Tensor& x, int r);

enum class UpscaleMethod { kBilinear, kBicubic, kDeconv, kPixelShuffle };

UpscaleMethod parse_upscale_method(std::string_view name);
std::string to_string(UpscaleMethod method);

struct ResampleSpec {
  UpscaleMethod method = UpscaleMethod::kBilinear;
  int factor = 1;
};

/// Fixed interpolation (bilinear, or Catmull-Rom bicubic with a = -0.5),
/// half-pixel centers (align_corners = false), edge-clamped borders.
/// Differentiable w.r.t. x. Learned methods are rejected here.
Tensor resample(const Tensor& x, const ResampleSpec& spec);

/// One-dimensional interpolation weights for upscaling `in_len` samples by
/// `factor`: for each output index, (source index, weight) pairs.
struct Tap {
  std::int64_t src;
  double weight;
};
std::vector<std::vector<Tap>> interpolation_taps(UpscaleMethod method, std::int64_t in_len, int factor);

double cubic_kernel(double t, double a = -0.5);

enum class Pool { kGlobalMax, kGlobalAvg, kChannelMax, kChannelAvg };

/// global_* -> [n, 1, 1, c]; channel_* -> [n, h, w, 1].
Tensor pool(Pool kind, const Tensor& x);

/// x [n, in] * w [in, out] + b [out].
Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b);

}  // namespace downscale::nn
