#include "downscale/layers.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <Eigen/Core>

#include "downscale/ops.hpp"
#include "op_support.hpp"

namespace downscale::nn {

using detail::TensorImpl;

namespace {

struct ConvGeometry {
  std::int64_t n, h, w, cin;    // input
  std::int64_t kh, kw, cout;    // kernel
  std::int64_t oh, ow;          // output
  std::int64_t pad_y, pad_x;
  std::int64_t stride;
};

void check_conv_params(const Tensor& x, const Conv2DParams& p) {
  if (x.rank() != 4) throw ShapeError("conv input must be NHWC, got " + shape_str(x.shape()));
  if (p.kernel.rank() != 4) throw ShapeError("conv kernel must be [kh, kw, c_in, c_out]");
  if (p.bias.rank() != 1 || p.bias.dim(0) != p.kernel.dim(3)) {
    throw ShapeError("conv bias length must equal c_out");
  }
  if (x.dim(3) != p.kernel.dim(2)) {
    throw ShapeError("conv channel mismatch: input has " + std::to_string(x.dim(3)) + ", kernel expects " +
                     std::to_string(p.kernel.dim(2)));
  }
}

// Convolutions run as im2col + GEMM.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

// Images per im2col block; bounds the scratch buffer for large batches.
std::int64_t block_images(const ConvGeometry& g) {
  const std::int64_t per_image = g.oh * g.ow * g.kh * g.kw * g.cin;
  return std::max<std::int64_t>(1, std::min<std::int64_t>(g.n, (std::int64_t{1} << 21) / std::max<std::int64_t>(per_image, 1)));
}

// col[p, (u, v, ci)] = x[n, oy*s+u-py, ox*s+v-px, ci] for images [n0, n0 + count)
void im2col(const ConvGeometry& g, const double* x, std::int64_t n0, std::int64_t count, std::vector<double>& col) {
  const std::int64_t k = g.kh * g.kw * g.cin;
  col.assign(static_cast<std::size_t>(count * g.oh * g.ow * k), 0.0);
  double* dst = col.data();
  for (std::int64_t n = n0; n < n0 + count; ++n)
    for (std::int64_t oy = 0; oy < g.oh; ++oy)
      for (std::int64_t ox = 0; ox < g.ow; ++ox, dst += k) {
        for (std::int64_t u = 0; u < g.kh; ++u) {
          const std::int64_t iy = oy * g.stride + u - g.pad_y;
          if (iy < 0 || iy >= g.h) continue;
          for (std::int64_t v = 0; v < g.kw; ++v) {
            const std::int64_t ix = ox * g.stride + v - g.pad_x;
            if (ix < 0 || ix >= g.w) continue;
            std::copy_n(x + ((n * g.h + iy) * g.w + ix) * g.cin, g.cin, dst + (u * g.kw + v) * g.cin);
          }
        }
      }
}

// Scatter-adds col rows back onto the input grid (adjoint of im2col).
void col2im(const ConvGeometry& g, const RowMatrix& col, std::int64_t n0, std::int64_t count, double* dx) {
  const std::int64_t k = g.kh * g.kw * g.cin;
  const double* src = col.data();
  for (std::int64_t n = n0; n < n0 + count; ++n)
    for (std::int64_t oy = 0; oy < g.oh; ++oy)
      for (std::int64_t ox = 0; ox < g.ow; ++ox, src += k) {
        for (std::int64_t u = 0; u < g.kh; ++u) {
          const std::int64_t iy = oy * g.stride + u - g.pad_y;
          if (iy < 0 || iy >= g.h) continue;
          for (std::int64_t v = 0; v < g.kw; ++v) {
            const std::int64_t ix = ox * g.stride + v - g.pad_x;
            if (ix < 0 || ix >= g.w) continue;
            double* d = dx + ((n * g.h + iy) * g.w + ix) * g.cin;
            const double* s = src + (u * g.kw + v) * g.cin;
            for (std::int64_t ci = 0; ci < g.cin; ++ci) d[ci] += s[ci];
          }
        }
      }
}

// Core correlation: out[n, oy, ox, co] = b[co] + sum x[n, oy*s+u-py, ox*s+v-px, ci] w[u, v, ci, co]
void conv_forward(const ConvGeometry& g, const double* x, const double* w, const double* b, double* out) {
  const std::int64_t k = g.kh * g.kw * g.cin;
  const RowMatrix wm = ConstMatMap(w, k, g.cout);
  const Eigen::RowVectorXd bias = Eigen::Map<const Eigen::RowVectorXd>(b, g.cout);
  std::vector<double> col;
  RowMatrix acc;
  const std::int64_t step = block_images(g);
  for (std::int64_t n0 = 0; n0 < g.n; n0 += step) {
    const std::int64_t count = std::min(step, g.n - n0);
    const std::int64_t rows = count * g.oh * g.ow;
    im2col(g, x, n0, count, col);
    acc.noalias() = ConstMatMap(col.data(), rows, k) * wm;
    acc.rowwise() += bias;
    MatMap(out + n0 * g.oh * g.ow * g.cout, rows, g.cout) = acc;
  }
}

// dx += adjoint of conv_forward applied to dy (no bias).
void conv_backward_input(const ConvGeometry& g, const double* dy, const double* w, double* dx) {
  const std::int64_t k = g.kh * g.kw * g.cin;
  const RowMatrix wm = ConstMatMap(w, k, g.cout);
  RowMatrix col;
  const std::int64_t step = block_images(g);
  for (std::int64_t n0 = 0; n0 < g.n; n0 += step) {
    const std::int64_t count = std::min(step, g.n - n0);
    const std::int64_t rows = count * g.oh * g.ow;
    col.noalias() = ConstMatMap(dy + n0 * g.oh * g.ow * g.cout, rows, g.cout) * wm.transpose();
    col2im(g, col, n0, count, dx);
  }
}

// dw[u, v, ci, co] += sum x * dy
void conv_backward_kernel(const ConvGeometry& g, const double* x, const double* dy, std::vector<double>& dw) {
  const std::int64_t k = g.kh * g.kw * g.cin;
  std::vector<double> col;
  MatMap acc(dw.data(), k, g.cout);
  const std::int64_t step = block_images(g);
  for (std::int64_t n0 = 0; n0 < g.n; n0 += step) {
    const std::int64_t count = std::min(step, g.n - n0);
    const std::int64_t rows = count * g.oh * g.ow;
    im2col(g, x, n0, count, col);
    acc.noalias() += ConstMatMap(col.data(), rows, k).transpose() *
                     ConstMatMap(dy + n0 * g.oh * g.ow * g.cout, rows, g.cout);
  }
}

void add_bias_grad(const double* dy, std::int64_t pixels, std::int64_t cout, std::vector<double>& db) {
  std::vector<double> acc(static_cast<std::size_t>(cout), 0.0);
  for (std::int64_t p = 0; p < pixels; ++p)
    for (std::int64_t co = 0; co < cout; ++co) acc[static_cast<std::size_t>(co)] += dy[p * cout + co];
  for (std::int64_t co = 0; co < cout; ++co) db[static_cast<std::size_t>(co)] += acc[static_cast<std::size_t>(co)];
}

void flush_kernel_grad(const std::vector<double>& acc, std::vector<double>& grad) {
  for (std::size_t i = 0; i < acc.size(); ++i) grad[i] += acc[i];
}

}  // namespace

Tensor conv2d(const Tensor& x, const Conv2DParams& p) {
  check_conv_params(x, p);
  if (p.stride < 1) throw ShapeError("conv stride must be >= 1");
  const auto kh = p.kernel.dim(0), kw = p.kernel.dim(1);
  if (kh % 2 == 0 || kw % 2 == 0) throw ShapeError("conv2d kernel extents must be odd");
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), kh, kw, p.kernel.dim(3),
                 (x.dim(1) + p.stride - 1) / p.stride, (x.dim(2) + p.stride - 1) / p.stride,
                 (kh - 1) / 2, (kw - 1) / 2, p.stride};
  std::vector<double> out(static_cast<std::size_t>(g.n * g.oh * g.ow * g.cout));
  conv_forward(g, x.data().data(), p.kernel.data().data(), p.bias.data().data(), out.data());

  const bool tracked = needs_tape({&x, &p.kernel, &p.bias});
  Tensor result = make_result({g.n, g.oh, g.ow, g.cout}, std::move(out), tracked);
  if (!tracked) return result;
  auto xi = x.impl(), wi = p.kernel.impl(), bi = p.bias.impl(), oi = result.impl();
  record_node("conv2d", {xi, wi, bi}, oi, [g, xi, wi, bi, oi]() {
    const double* dy = oi->grad.data();
    if (xi->requires_grad) {
      xi->ensure_grad();
      conv_backward_input(g, dy, wi->data.data(), xi->grad.data());
    }
    if (wi->requires_grad) {
      wi->ensure_grad();
      std::vector<double> acc(wi->data.size(), 0.0);
      conv_backward_kernel(g, xi->data.data(), dy, acc);
      flush_kernel_grad(acc, wi->grad);
    }
    if (bi->requires_grad) {
      bi->ensure_grad();
      add_bias_grad(dy, g.n * g.oh * g.ow, g.cout, bi->grad);
    }
  });
  return result;
}

Tensor transposed_conv2d(const Tensor& x, const Conv2DParams& p, int factor) {
  if (factor < 1) throw std::invalid_argument("transposed_conv2d factor must be >= 1");
  check_conv_params(x, p);
  const auto kh = p.kernel.dim(0), kw = p.kernel.dim(1);
  const auto cin = p.kernel.dim(2), cout = p.kernel.dim(3);
  // Reuse the conv kernels with the roles of input and output swapped: the
  // "conv" maps the large [n, h*f, w*f, cout] grid onto x's grid, with the
  // channel axes of the kernel exchanged.
  ConvGeometry g{x.dim(0), x.dim(1) * factor, x.dim(2) * factor, cout, kh, kw, cin,
                 x.dim(1), x.dim(2), (kh - 1) / 2, (kw - 1) / 2, factor};
  std::vector<double> swapped(static_cast<std::size_t>(kh * kw * cin * cout));
  const auto& w = p.kernel.impl()->data;
  for (std::int64_t t = 0; t < kh * kw; ++t)
    for (std::int64_t ci = 0; ci < cin; ++ci)
      for (std::int64_t co = 0; co < cout; ++co)
        swapped[static_cast<std::size_t>((t * cout + co) * cin + ci)] = w[static_cast<std::size_t>((t * cin + ci) * cout + co)];

  std::vector<double> out(static_cast<std::size_t>(g.n * g.h * g.w * cout), 0.0);
  conv_backward_input(g, x.data().data(), swapped.data(), out.data());
  const auto& b = p.bias.impl()->data;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i % static_cast<std::size_t>(cout)];

  const bool tracked = needs_tape({&x, &p.kernel, &p.bias});
  Tensor result = make_result({g.n, g.h, g.w, cout}, std::move(out), tracked);
  if (!tracked) return result;
  auto xi = x.impl(), wi = p.kernel.impl(), bi = p.bias.impl(), oi = result.impl();
  record_node("transposed_conv2d", {xi, wi, bi}, oi, [g, xi, wi, bi, oi, swapped = std::move(swapped), kh, kw, cin, cout]() {
    const double* dy = oi->grad.data();
    if (xi->requires_grad) {
      // adjoint of the adjoint: a strided correlation of dy
      std::vector<double> zero_bias(static_cast<std::size_t>(cin), 0.0);
      std::vector<double> dx(xi->data.size());
      conv_forward(g, dy, swapped.data(), zero_bias.data(), dx.data());
      xi->ensure_grad();
      for (std::size_t i = 0; i < dx.size(); ++i) xi->grad[i] += dx[i];
    }
    if (wi->requires_grad) {
      // d swapped[u, v, co, ci] = sum dy[.., co] * x[.., ci]
      std::vector<double> acc(swapped.size(), 0.0);
      conv_backward_kernel(g, dy, xi->data.data(), acc);
      wi->ensure_grad();
      for (std::int64_t t = 0; t < kh * kw; ++t)
        for (std::int64_t ci = 0; ci < cin; ++ci)
          for (std::int64_t co = 0; co < cout; ++co)
            wi->grad[static_cast<std::size_t>((t * cin + ci) * cout + co)] +=
                acc[static_cast<std::size_t>((t * cout + co) * cin + ci)];
    }
    if (bi->requires_grad) {
      bi->ensure_grad();
      add_bias_grad(dy, g.n * g.h * g.w, cout, bi->grad);
    }
  });
  return result;
}

namespace {

// Permutation shared by shuffle and its inverse: index in the shuffled
// layout -> index in the channel-packed layout.
std::vector<std::int64_t> shuffle_permutation(std::int64_t n, std::int64_t h, std::int64_t w, std::int64_t c, int r) {
  std::vector<std::int64_t> perm(static_cast<std::size_t>(n * h * w * c * r * r));
  const std::int64_t oh = h * r, ow = w * r, cc = c * r * r;
  std::size_t dst = 0;
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t y = 0; y < oh; ++y)
      for (std::int64_t x = 0; x < ow; ++x) {
        const std::int64_t i = y / r, di = y % r, j = x / r, dj = x % r;
        for (std::int64_t k = 0; k < c; ++k) {
          perm[dst++] = ((b * h + i) * w + j) * cc + (di * r + dj) * c + k;
        }
      }
  return perm;
}

Tensor permute(const Tensor& x, Shape out_shape, const std::vector<std::int64_t>& perm, bool gather, std::string_view name) {
  const auto& src = x.impl()->data;
  std::vector<double> out(src.size());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    if (gather) out[i] = src[static_cast<std::size_t>(perm[i])];
    else out[static_cast<std::size_t>(perm[i])] = src[i];
  }
  const bool tracked = needs_tape({&x});
  Tensor result = make_result(std::move(out_shape), std::move(out), tracked);
  if (!tracked) return result;
  auto xi = x.impl(), oi = result.impl();
  record_node(name, {xi}, oi, [xi, oi, perm, gather]() {
    xi->ensure_grad();
    for (std::size_t i = 0; i < perm.size(); ++i) {
      if (gather) xi->grad[static_cast<std::size_t>(perm[i])] += oi->grad[i];
      else xi->grad[i] += oi->grad[static_cast<std::size_t>(perm[i])];
    }
  });
  return result;
}

}  // namespace

Tensor pixel_shuffle(const Tensor& x, int r) {
  if (x.rank() != 4) throw ShapeError("pixel_shuffle needs NHWC input");
  if (r < 1) throw std::invalid_argument("pixel_shuffle factor must be >= 1");
  const auto channels = x.dim(3);
  if (channels % (r * r) != 0) {
    throw ShapeError("pixel_shuffle: channels " + std::to_string(channels) + " not divisible by r^2 = " +
                     std::to_string(r * r));
  }
  const auto c = channels / (r * r);
  auto perm = shuffle_permutation(x.dim(0), x.dim(1), x.dim(2), c, r);
  return permute(x, {x.dim(0), x.dim(1) * r, x.dim(2) * r, c}, perm, true, "pixel_shuffle");
}

Tensor inverse_pixel_shuffle(const Tensor& x, int r) {
  if (x.rank() != 4) throw ShapeError("inverse_pixel_shuffle needs NHWC input");
  if (r < 1) throw std::invalid_argument("inverse_pixel_shuffle factor must be >= 1");
  if (x.dim(1) % r != 0 || x.dim(2) % r != 0) throw ShapeError("inverse_pixel_shuffle: extents not divisible by r");
  const auto h = x.dim(1) / r, w = x.dim(2) / r, c = x.dim(3);
  auto perm = shuffle_permutation(x.dim(0), h, w, c, r);
  return permute(x, {x.dim(0), h, w, c * r * r}, perm, false, "inverse_pixel_shuffle");
}

UpscaleMethod parse_upscale_method(std::string_view name) {
  if (name == "bilinear") return UpscaleMethod::kBilinear;
  if (name == "bicubic") return UpscaleMethod::kBicubic;
  if (name == "deconv") return UpscaleMethod::kDeconv;
  if (name == "shuffle" || name == "pixel_shuffle") return UpscaleMethod::kPixelShuffle;
  throw std::invalid_argument("unknown upscale method '" + std::string(name) + "'");
}

std::string to_string(UpscaleMethod method) {
  switch (method) {
    case UpscaleMethod::kBilinear: return "bilinear";
    case UpscaleMethod::kBicubic: return "bicubic";
    case UpscaleMethod::kDeconv: return "deconv";
    case UpscaleMethod::kPixelShuffle: return "shuffle";
  }
  return "?";
}

double cubic_kernel(double t, double a) {
  t = std::fabs(t);
  if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
  if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
  return 0.0;
}

std::vector<std::vector<Tap>> interpolation_taps(UpscaleMethod method, std::int64_t in_len, int factor) {
  if (method != UpscaleMethod::kBilinear && method != UpscaleMethod::kBicubic) {
    throw std::invalid_argument("interpolation_taps: method has learned parameters");
  }
  if (factor < 1) throw std::invalid_argument("resample factor must be >= 1");
  auto clamp = [in_len](std::int64_t i) { return std::clamp<std::int64_t>(i, 0, in_len - 1); };
  std::vector<std::vector<Tap>> taps(static_cast<std::size_t>(in_len * factor));
  for (std::int64_t o = 0; o < in_len * factor; ++o) {
    const double src = (static_cast<double>(o) + 0.5) / factor - 0.5;
    const auto i0 = static_cast<std::int64_t>(std::floor(src));
    const double t = src - static_cast<double>(i0);
    auto& list = taps[static_cast<std::size_t>(o)];
    if (method == UpscaleMethod::kBilinear) {
      list.push_back({clamp(i0), 1.0 - t});
      list.push_back({clamp(i0 + 1), t});
    } else {
      for (std::int64_t k = -1; k <= 2; ++k) list.push_back({clamp(i0 + k), cubic_kernel(t - static_cast<double>(k))});
    }
  }
  return taps;
}

namespace {

Tensor interpolate_axis(const Tensor& x, int axis, const std::vector<std::vector<Tap>>& taps) {
  Shape out_shape = x.shape();
  const auto in_len = out_shape[static_cast<std::size_t>(axis)];
  const auto out_len = static_cast<std::int64_t>(taps.size());
  out_shape[static_cast<std::size_t>(axis)] = out_len;
  std::int64_t outer = 1, inner = 1;
  for (int k = 0; k < axis; ++k) outer *= out_shape[static_cast<std::size_t>(k)];
  for (int k = axis + 1; k < x.rank(); ++k) inner *= out_shape[static_cast<std::size_t>(k)];
  const auto& src = x.impl()->data;
  std::vector<double> out(static_cast<std::size_t>(outer * out_len * inner));
  std::vector<double> acc(static_cast<std::size_t>(inner));
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t t = 0; t < out_len; ++t) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (const auto& tap : taps[static_cast<std::size_t>(t)]) {
        const double* s = &src[static_cast<std::size_t>((o * in_len + tap.src) * inner)];
        for (std::int64_t q = 0; q < inner; ++q) acc[static_cast<std::size_t>(q)] += tap.weight * s[q];
      }
      double* d = &out[static_cast<std::size_t>((o * out_len + t) * inner)];
      for (std::int64_t q = 0; q < inner; ++q) d[q] = acc[static_cast<std::size_t>(q)];
    }
  }
  const bool tracked = needs_tape({&x});
  Tensor result = make_result(out_shape, std::move(out), tracked);
  if (!tracked) return result;
  auto xi = x.impl(), oi = result.impl();
  record_node("resample", {xi}, oi, [xi, oi, taps, outer, inner, in_len, out_len]() {
    xi->ensure_grad();
    for (std::int64_t o = 0; o < outer; ++o)
      for (std::int64_t t = 0; t < out_len; ++t) {
        const double* g = &oi->grad[static_cast<std::size_t>((o * out_len + t) * inner)];
        for (const auto& tap : taps[static_cast<std::size_t>(t)]) {
          double* d = &xi->grad[static_cast<std::size_t>((o * in_len + tap.src) * inner)];
          const auto w = tap.weight;
          for (std::int64_t q = 0; q < inner; ++q) d[q] += w * g[q];
        }
      }
  });
  return result;
}

}  // namespace

Tensor resample(const Tensor& x, const ResampleSpec& spec) {
  if (spec.method != UpscaleMethod::kBilinear && spec.method != UpscaleMethod::kBicubic) {
    throw std::invalid_argument("resample supports bilinear and bicubic only, got " + to_string(spec.method));
  }
  if (spec.factor < 1) throw std::invalid_argument("resample factor must be >= 1");
  if (x.rank() != 4) throw ShapeError("resample needs NHWC input");
  if (spec.factor == 1) return x;
  auto rows = interpolate_axis(x, 1, interpolation_taps(spec.method, x.dim(1), spec.factor));
  return interpolate_axis(rows, 2, interpolation_taps(spec.method, x.dim(2), spec.factor));
}

Tensor pool(Pool kind, const Tensor& x) {
  if (x.rank() != 4) throw ShapeError("pool needs a rank-4 NHWC input");
  switch (kind) {
    case Pool::kGlobalMax: return ops::max(x, {1, 2});
    case Pool::kGlobalAvg: return ops::mean(x, {1, 2});
    case Pool::kChannelMax: return ops::max(x, {3});
    case Pool::kChannelAvg: return ops::mean(x, {3});
  }
  throw std::invalid_argument("unknown pool kind");
}

Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (b.rank() != 1 || b.dim(0) != w.dim(1)) throw ShapeError("dense bias length must equal output width");
  return ops::add(ops::matmul(x, w), ops::reshape(b, {1, b.dim(0)}));
}

}  // namespace downscale::nn
