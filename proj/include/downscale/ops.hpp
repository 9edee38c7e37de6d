#pragma once

#include <optional>
#include <vector>

#include "downscale/tensor.hpp"

namespace downscale::ops {

enum class Elementwise { kAdd, kSub, kMul, kRelu, kSigmoid, kLog1p, kExpm1 };
enum class Reduction { kSum, kMean, kMax };

/// Binary kinds take `b` of the same rank as `a`, with extent 1 on any axis
/// where it differs (broadcast). Unary kinds ignore `b`.
Tensor elementwise(Elementwise kind, const Tensor& a, const std::optional<Tensor>& b = std::nullopt);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor log1p(const Tensor& a);
Tensor expm1(const Tensor& a);
Tensor scale(const Tensor& a, double factor);

/// Reduced axes keep extent 1.
Tensor reduce(Reduction kind, const Tensor& a, const std::vector<int>& axes);
Tensor sum(const Tensor& a, const std::vector<int>& axes);
Tensor mean(const Tensor& a, const std::vector<int>& axes);
Tensor max(const Tensor& a, const std::vector<int>& axes);
/// Sum / mean of every element as a shape-[1] tensor.
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor concat(const std::vector<Tensor>& tensors, int axis);
Tensor reshape(const Tensor& a, Shape shape);

/// Tiles a batch-1 tensor along axis 0.
Tensor repeat_batch(const Tensor& a, std::int64_t n);

/// Center-crops (or zero-pads) axes 1 and 2 of an NHWC tensor.
Tensor crop_center(const Tensor& x, std::int64_t height, std::int64_t width);

}  // namespace downscale::ops
