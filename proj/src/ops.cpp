#include "downscale/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "op_support.hpp"

namespace downscale::ops {

using detail::TensorImpl;

namespace {

// Calls fn(i, j) for every flat index i of `out_shape` and the matching flat
// index j of a tensor of shape `in_shape` broadcast to it (extent-1 axes).
template <typename Fn>
void for_each_broadcast(const Shape& out_shape, const Shape& in_shape, Fn&& fn) {
  const std::size_t rank = out_shape.size();
  std::vector<std::int64_t> in_stride(rank, 0);
  std::int64_t stride = 1;
  for (std::size_t k = rank; k-- > 0;) {
    in_stride[k] = in_shape[k] == 1 ? 0 : stride;
    stride *= in_shape[k];
  }
  const std::int64_t total = shape_numel(out_shape);
  if (rank == 0) return;
  const std::int64_t inner = out_shape[rank - 1];
  const std::int64_t inner_stride = in_stride[rank - 1];
  std::vector<std::int64_t> idx(rank, 0);
  std::int64_t j_base = 0;
  for (std::int64_t i = 0; i < total; i += inner) {
    for (std::int64_t t = 0; t < inner; ++t) fn(i + t, j_base + t * inner_stride);
    // advance the odometer over the outer axes
    for (std::size_t k = rank - 1; k-- > 0;) {
      ++idx[k];
      j_base += in_stride[k];
      if (idx[k] < out_shape[k]) break;
      j_base -= in_stride[k] * idx[k];
      idx[k] = 0;
    }
  }
}

void check_broadcastable(const Shape& a, const Shape& b) {
  bool ok = a.size() == b.size();
  for (std::size_t k = 0; ok && k < a.size(); ++k) ok = b[k] == a[k] || b[k] == 1;
  if (!ok) throw ShapeError("cannot broadcast " + shape_str(b) + " to " + shape_str(a));
}

bool is_binary(Elementwise kind) {
  return kind == Elementwise::kAdd || kind == Elementwise::kSub || kind == Elementwise::kMul;
}

std::string_view op_name(Elementwise kind) {
  switch (kind) {
    case Elementwise::kAdd: return "add";
    case Elementwise::kSub: return "sub";
    case Elementwise::kMul: return "mul";
    case Elementwise::kRelu: return "relu";
    case Elementwise::kSigmoid: return "sigmoid";
    case Elementwise::kLog1p: return "log1p";
    case Elementwise::kExpm1: return "expm1";
  }
  return "?";
}

Tensor binary(Elementwise kind, const Tensor& a, const Tensor& b) {
  check_broadcastable(a.shape(), b.shape());
  const auto& av = a.impl()->data;
  const auto& bv = b.impl()->data;
  std::vector<double> out(av.size());
  const bool same = a.shape() == b.shape();
  auto apply = [&](auto&& f) {
    if (same) {
      for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i], bv[i]);
    } else {
      for_each_broadcast(a.shape(), b.shape(), [&](std::int64_t i, std::int64_t j) {
        out[static_cast<std::size_t>(i)] = f(av[static_cast<std::size_t>(i)], bv[static_cast<std::size_t>(j)]);
      });
    }
  };
  switch (kind) {
    case Elementwise::kAdd: apply([](double x, double y) { return x + y; }); break;
    case Elementwise::kSub: apply([](double x, double y) { return x - y; }); break;
    case Elementwise::kMul: apply([](double x, double y) { return x * y; }); break;
    default: break;
  }
  const bool tracked = needs_tape({&a, &b});
  Tensor result = make_result(a.shape(), std::move(out), tracked);
  if (!tracked) return result;

  auto ai = a.impl();
  auto bi = b.impl();
  auto oi = result.impl();
  record_node(op_name(kind), {ai, bi}, oi, [kind, ai, bi, oi, same]() {
    const auto& g = oi->grad;
    if (ai->requires_grad) {
      ai->ensure_grad();
      if (kind == Elementwise::kMul) {
        if (same) {
          for (std::size_t i = 0; i < g.size(); ++i) ai->grad[i] += g[i] * bi->data[i];
        } else {
          for_each_broadcast(oi->shape, bi->shape, [&](std::int64_t i, std::int64_t j) {
            ai->grad[static_cast<std::size_t>(i)] += g[static_cast<std::size_t>(i)] * bi->data[static_cast<std::size_t>(j)];
          });
        }
      } else {
        for (std::size_t i = 0; i < g.size(); ++i) ai->grad[i] += g[i];
      }
    }
    if (bi->requires_grad) {
      bi->ensure_grad();
      std::vector<double> acc(bi->data.size(), 0.0);
      auto contrib = [&](std::int64_t i) -> double {
        auto ui = static_cast<std::size_t>(i);
        switch (kind) {
          case Elementwise::kAdd: return g[ui];
          case Elementwise::kSub: return -g[ui];
          default: return g[ui] * ai->data[ui];
        }
      };
      if (same) {
        for (std::size_t i = 0; i < g.size(); ++i) acc[i] += contrib(static_cast<std::int64_t>(i));
      } else {
        for_each_broadcast(oi->shape, bi->shape, [&](std::int64_t i, std::int64_t j) {
          acc[static_cast<std::size_t>(j)] += contrib(i);
        });
      }
      for (std::size_t j = 0; j < acc.size(); ++j) bi->grad[j] += acc[j];
    }
  });
  return result;
}

Tensor unary(Elementwise kind, const Tensor& a) {
  const auto& av = a.impl()->data;
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double x = av[i];
    switch (kind) {
      case Elementwise::kRelu: out[i] = x > 0.0 ? x : 0.0; break;
      case Elementwise::kSigmoid:
        out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
        break;
      case Elementwise::kLog1p:
        if (!(x > -1.0)) throw DomainError("log1p of value <= -1: " + std::to_string(x));
        out[i] = std::log1p(x);
        break;
      case Elementwise::kExpm1: out[i] = std::expm1(x); break;
      default: break;
    }
  }
  if (auto* rec = BranchRecorder::active(); rec != nullptr && kind == Elementwise::kRelu) {
    for (std::size_t i = 0; i < av.size(); ++i) rec->note(av[i] > 0.0 ? i : ~i);
  }
  const bool tracked = needs_tape({&a});
  Tensor result = make_result(a.shape(), std::move(out), tracked);
  if (!tracked) return result;
  auto ai = a.impl();
  auto oi = result.impl();
  record_node(op_name(kind), {ai}, oi, [kind, ai, oi]() {
    ai->ensure_grad();
    const auto& g = oi->grad;
    const auto& x = ai->data;
    const auto& y = oi->data;
    for (std::size_t i = 0; i < g.size(); ++i) {
      double d = 0.0;
      switch (kind) {
        case Elementwise::kRelu: d = x[i] > 0.0 ? 1.0 : 0.0; break;
        case Elementwise::kSigmoid: d = y[i] * (1.0 - y[i]); break;
        case Elementwise::kLog1p: d = 1.0 / (1.0 + x[i]); break;
        case Elementwise::kExpm1: d = y[i] + 1.0; break;
        default: break;
      }
      ai->grad[i] += g[i] * d;
    }
  });
  return result;
}

}  // namespace

Tensor elementwise(Elementwise kind, const Tensor& a, const std::optional<Tensor>& b) {
  if (is_binary(kind)) {
    if (!b || !b->defined()) throw ShapeError("binary elementwise op needs two operands");
    return binary(kind, a, *b);
  }
  return unary(kind, a);
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(Elementwise::kAdd, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(Elementwise::kSub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(Elementwise::kMul, a, b); }
Tensor relu(const Tensor& a) { return unary(Elementwise::kRelu, a); }
Tensor sigmoid(const Tensor& a) { return unary(Elementwise::kSigmoid, a); }
Tensor log1p(const Tensor& a) { return unary(Elementwise::kLog1p, a); }
Tensor expm1(const Tensor& a) { return unary(Elementwise::kExpm1, a); }

Tensor scale(const Tensor& a, double factor) {
  Shape ones(a.shape().size(), 1);
  return mul(a, Tensor::full(ones, factor));
}

Tensor reduce(Reduction kind, const Tensor& a, const std::vector<int>& axes) {
  const int rank = a.rank();
  std::vector<bool> reduced(static_cast<std::size_t>(rank), false);
  for (int ax : axes) {
    int k = ax < 0 ? ax + rank : ax;
    if (k < 0 || k >= rank) throw ShapeError("invalid reduction axis " + std::to_string(ax));
    if (reduced[static_cast<std::size_t>(k)]) throw ShapeError("duplicate reduction axis " + std::to_string(ax));
    reduced[static_cast<std::size_t>(k)] = true;
  }
  Shape out_shape = a.shape();
  std::int64_t group = 1;
  for (int k = 0; k < rank; ++k) {
    if (reduced[static_cast<std::size_t>(k)]) {
      group *= out_shape[static_cast<std::size_t>(k)];
      out_shape[static_cast<std::size_t>(k)] = 1;
    }
  }
  const auto out_n = static_cast<std::size_t>(shape_numel(out_shape));
  const auto& x = a.impl()->data;
  std::vector<double> acc(out_n, kind == Reduction::kMax ? -INFINITY : 0.0);
  std::vector<std::int64_t> argmax(kind == Reduction::kMax ? out_n : 0, -1);
  // map input index -> output index through the broadcast relation
  for_each_broadcast(a.shape(), out_shape, [&](std::int64_t i, std::int64_t j) {
    auto uj = static_cast<std::size_t>(j);
    const double v = x[static_cast<std::size_t>(i)];
    if (kind == Reduction::kMax) {
      if (v > acc[uj]) {
        acc[uj] = v;
        argmax[uj] = i;
      }
    } else {
      acc[uj] += v;
    }
  });
  if (auto* rec = BranchRecorder::active(); rec != nullptr) {
    for (auto i : argmax) rec->note(static_cast<std::uint64_t>(i));
  }
  std::vector<double> out(out_n);
  for (std::size_t j = 0; j < out_n; ++j) {
    out[j] = kind == Reduction::kMean ? acc[j] / static_cast<double>(group) : acc[j];
  }
  const bool tracked = needs_tape({&a});
  Tensor result = make_result(out_shape, std::move(out), tracked);
  if (!tracked) return result;
  auto ai = a.impl();
  auto oi = result.impl();
  std::string_view name = kind == Reduction::kSum ? "sum" : kind == Reduction::kMean ? "mean" : "max";
  record_node(name, {ai}, oi, [kind, ai, oi, group, argmax = std::move(argmax)]() {
    ai->ensure_grad();
    const auto& g = oi->grad;
    if (kind == Reduction::kMax) {
      for (std::size_t j = 0; j < g.size(); ++j) ai->grad[static_cast<std::size_t>(argmax[j])] += g[j];
      return;
    }
    const double s = kind == Reduction::kMean ? 1.0 / static_cast<double>(group) : 1.0;
    for_each_broadcast(ai->shape, oi->shape, [&](std::int64_t i, std::int64_t j) {
      ai->grad[static_cast<std::size_t>(i)] += g[static_cast<std::size_t>(j)] * s;
    });
  });
  return result;
}

Tensor sum(const Tensor& a, const std::vector<int>& axes) { return reduce(Reduction::kSum, a, axes); }
Tensor mean(const Tensor& a, const std::vector<int>& axes) { return reduce(Reduction::kMean, a, axes); }
Tensor max(const Tensor& a, const std::vector<int>& axes) { return reduce(Reduction::kMax, a, axes); }

Tensor sum_all(const Tensor& a) {
  std::vector<int> axes(static_cast<std::size_t>(a.rank()));
  std::iota(axes.begin(), axes.end(), 0);
  return reshape(sum(a, axes), {1});
}

Tensor mean_all(const Tensor& a) {
  std::vector<int> axes(static_cast<std::size_t>(a.rank()));
  std::iota(axes.begin(), axes.end(), 0);
  return reshape(mean(a, axes), {1});
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) throw ShapeError("matmul needs rank-2 operands");
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul inner dimension mismatch: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const auto& A = a.impl()->data;
  const auto& B = b.impl()->data;
  std::vector<double> out(static_cast<std::size_t>(m * n));
  std::vector<double> row(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < m; ++i) {
    std::fill(row.begin(), row.end(), 0.0);
    for (std::int64_t p = 0; p < k; ++p) {
      const double av = A[static_cast<std::size_t>(i * k + p)];
      const double* brow = &B[static_cast<std::size_t>(p * n)];
      for (std::int64_t j = 0; j < n; ++j) row[static_cast<std::size_t>(j)] += av * brow[j];
    }
    for (std::int64_t j = 0; j < n; ++j) out[static_cast<std::size_t>(i * n + j)] = row[static_cast<std::size_t>(j)];
  }
  const bool tracked = needs_tape({&a, &b});
  Tensor result = make_result({m, n}, std::move(out), tracked);
  if (!tracked) return result;
  auto ai = a.impl();
  auto bi = b.impl();
  auto oi = result.impl();
  record_node("matmul", {ai, bi}, oi, [ai, bi, oi, m, k, n]() {
    const auto& G = oi->grad;
    if (ai->requires_grad) {
      ai->ensure_grad();
      // dA = G * B^T
      for (std::int64_t i = 0; i < m; ++i) {
        for (std::int64_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::int64_t j = 0; j < n; ++j) {
            s += G[static_cast<std::size_t>(i * n + j)] * bi->data[static_cast<std::size_t>(p * n + j)];
          }
          ai->grad[static_cast<std::size_t>(i * k + p)] += s;
        }
      }
    }
    if (bi->requires_grad) {
      bi->ensure_grad();
      // dB = A^T * G
      std::vector<double> acc(static_cast<std::size_t>(k * n), 0.0);
      for (std::int64_t i = 0; i < m; ++i) {
        for (std::int64_t p = 0; p < k; ++p) {
          const double av = ai->data[static_cast<std::size_t>(i * k + p)];
          for (std::int64_t j = 0; j < n; ++j) {
            acc[static_cast<std::size_t>(p * n + j)] += av * G[static_cast<std::size_t>(i * n + j)];
          }
        }
      }
      for (std::size_t t = 0; t < acc.size(); ++t) bi->grad[t] += acc[t];
    }
  });
  return result;
}

Tensor concat(const std::vector<Tensor>& tensors, int axis) {
  if (tensors.empty()) throw ShapeError("concat of zero tensors");
  const int rank = tensors.front().rank();
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw ShapeError("invalid concat axis");
  Shape out_shape = tensors.front().shape();
  out_shape[static_cast<std::size_t>(axis)] = 0;
  for (const auto& t : tensors) {
    if (t.rank() != rank) throw ShapeError("concat rank mismatch");
    for (int k = 0; k < rank; ++k) {
      if (k != axis && t.dim(k) != tensors.front().dim(k)) {
        throw ShapeError("concat shape mismatch off-axis: " + shape_str(t.shape()) + " vs " +
                         shape_str(tensors.front().shape()));
      }
    }
    out_shape[static_cast<std::size_t>(axis)] += t.dim(axis);
  }
  std::int64_t outer = 1, inner = 1;
  for (int k = 0; k < axis; ++k) outer *= out_shape[static_cast<std::size_t>(k)];
  for (int k = axis + 1; k < rank; ++k) inner *= out_shape[static_cast<std::size_t>(k)];
  const std::int64_t out_row = out_shape[static_cast<std::size_t>(axis)] * inner;

  std::vector<double> out(static_cast<std::size_t>(shape_numel(out_shape)));
  std::vector<std::int64_t> offsets;
  std::int64_t offset = 0;
  for (const auto& t : tensors) {
    const std::int64_t row = t.dim(axis) * inner;
    const auto& src = t.impl()->data;
    for (std::int64_t o = 0; o < outer; ++o) {
      std::copy_n(src.begin() + o * row, row, out.begin() + o * out_row + offset);
    }
    offsets.push_back(offset);
    offset += row;
  }
  std::vector<const Tensor*> ptrs;
  bool tracked = false;
  for (const auto& t : tensors) tracked = tracked || needs_tape({&t});
  Tensor result = make_result(out_shape, std::move(out), tracked);
  if (!tracked) return result;
  std::vector<std::shared_ptr<TensorImpl>> ins;
  for (const auto& t : tensors) ins.push_back(t.impl());
  auto oi = result.impl();
  record_node("concat", ins, oi, [ins, oi, offsets, outer, inner, out_row, axis]() {
    for (std::size_t t = 0; t < ins.size(); ++t) {
      auto& in = ins[t];
      if (!in->requires_grad) continue;
      in->ensure_grad();
      const std::int64_t row = in->shape[static_cast<std::size_t>(axis)] * inner;
      for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t q = 0; q < row; ++q) {
          in->grad[static_cast<std::size_t>(o * row + q)] += oi->grad[static_cast<std::size_t>(o * out_row + offsets[t] + q)];
        }
      }
    }
  });
  return result;
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("cannot reshape " + shape_str(a.shape()) + " to " + shape_str(shape));
  }
  const bool tracked = needs_tape({&a});
  Tensor result = make_result(std::move(shape), a.impl()->data, tracked);
  if (!tracked) return result;
  auto ai = a.impl();
  auto oi = result.impl();
  record_node("reshape", {ai}, oi, [ai, oi]() {
    ai->ensure_grad();
    for (std::size_t i = 0; i < oi->grad.size(); ++i) ai->grad[i] += oi->grad[i];
  });
  return result;
}

Tensor repeat_batch(const Tensor& a, std::int64_t n) {
  if (a.rank() < 1 || a.dim(0) != 1) throw ShapeError("repeat_batch needs a batch-1 tensor");
  if (n < 1) throw ShapeError("repeat_batch count must be positive");
  Shape shape = a.shape();
  shape[0] = n;
  const auto& src = a.impl()->data;
  std::vector<double> out;
  out.reserve(src.size() * static_cast<std::size_t>(n));
  for (std::int64_t b = 0; b < n; ++b) out.insert(out.end(), src.begin(), src.end());
  const bool tracked = needs_tape({&a});
  Tensor result = make_result(shape, std::move(out), tracked);
  if (!tracked) return result;
  auto ai = a.impl();
  auto oi = result.impl();
  record_node("repeat_batch", {ai}, oi, [ai, oi, n]() {
    ai->ensure_grad();
    const std::size_t m = ai->data.size();
    for (std::int64_t b = 0; b < n; ++b) {
      for (std::size_t i = 0; i < m; ++i) ai->grad[i] += oi->grad[static_cast<std::size_t>(b) * m + i];
    }
  });
  return result;
}

Tensor crop_center(const Tensor& x, std::int64_t height, std::int64_t width) {
  if (x.rank() != 4) throw ShapeError("crop_center needs an NHWC tensor");
  if (height < 1 || width < 1) throw ShapeError("crop_center target must be positive");
  const auto n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  // src = dst + offset; negative offsets pad with zeros
  const std::int64_t oy = h >= height ? (h - height) / 2 : -((height - h) / 2);
  const std::int64_t ox = w >= width ? (w - width) / 2 : -((width - w) / 2);
  std::vector<double> out(static_cast<std::size_t>(n * height * width * c), 0.0);
  const auto& src = x.impl()->data;
  auto visit = [=](auto&& fn) {
    for (std::int64_t b = 0; b < n; ++b)
      for (std::int64_t y = 0; y < height; ++y) {
        const std::int64_t sy = y + oy;
        if (sy < 0 || sy >= h) continue;
        for (std::int64_t xx = 0; xx < width; ++xx) {
          const std::int64_t sx = xx + ox;
          if (sx < 0 || sx >= w) continue;
          const std::int64_t d = ((b * height + y) * width + xx) * c;
          const std::int64_t s = ((b * h + sy) * w + sx) * c;
          for (std::int64_t k = 0; k < c; ++k) fn(static_cast<std::size_t>(d + k), static_cast<std::size_t>(s + k));
        }
      }
  };
  visit([&](std::size_t d, std::size_t s) { out[d] = src[s]; });
  const bool tracked = needs_tape({&x});
  Tensor result = make_result({n, height, width, c}, std::move(out), tracked);
  if (!tracked) return result;
  auto xi = x.impl();
  auto oi = result.impl();
  record_node("crop_center", {xi}, oi, [xi, oi, visit]() {
    xi->ensure_grad();
    visit([&](std::size_t d, std::size_t s) { xi->grad[s] += oi->grad[d]; });
  });
  return result;
}

}  // namespace downscale::ops
