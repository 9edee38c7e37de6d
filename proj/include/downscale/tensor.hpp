#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace downscale {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  bool is_leaf = true;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

}  // namespace detail

/// Dense row-major float64 array with optional gradient tracking.
///
/// A Tensor is a shared handle: copies alias the same storage, like the
/// handles of most autodiff frameworks. Use clone() for a deep copy.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  std::int64_t dim(int axis) const;
  std::int64_t numel() const { return static_cast<std::int64_t>(impl_->data.size()); }

  std::span<double> data() { return impl_->data; }
  std::span<const double> data() const { return impl_->data; }
  double item() const;
  double at(std::initializer_list<std::int64_t> index) const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on) { impl_->requires_grad = on; }
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const { return impl_->grad; }
  std::span<double> mutable_grad();
  void zero_grad();

  /// Deep copy with no gradient history.
  Tensor clone() const;
  /// Same values viewed with a new shape; shares no tape history.
  Tensor detach() const { return clone(); }

  std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }
  const detail::TensorImpl* id() const { return impl_.get(); }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  friend Tensor make_result(Shape, std::vector<double>, bool);

  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Creates an op output; marks it non-leaf when it participates in a tape.
Tensor make_result(Shape shape, std::vector<double> values, bool tracked);

struct TapeNode {
  std::string_view op;
  std::vector<std::shared_ptr<detail::TensorImpl>> inputs;
  std::shared_ptr<detail::TensorImpl> output;
  std::function<void()> backward;
};

/// Records differentiable operations issued on the current thread while it
/// is alive. Tapes nest; operations record onto the innermost one.
class GradientTape {
 public:
  GradientTape();
  ~GradientTape();
  GradientTape(const GradientTape&) = delete;
  GradientTape& operator=(const GradientTape&) = delete;

  static GradientTape* active();

  void record(TapeNode node);
  /// Accumulates d(loss)/d(t) into every tracked leaf t. Leaves accumulate
  /// across calls; intermediate gradients are recomputed each call.
  void backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }
  std::string_view op_at(std::size_t i) const { return nodes_[i].op; }

 private:
  std::vector<TapeNode> nodes_;
  GradientTape* parent_;
};

/// Observes the discrete choices (ReLU active sets, max winners) made by
/// piecewise-linear operations on the current thread while alive. Two forward
/// passes with equal digests were evaluated on the same smooth piece.
class BranchRecorder {
 public:
  BranchRecorder();
  ~BranchRecorder();
  BranchRecorder(const BranchRecorder&) = delete;
  BranchRecorder& operator=(const BranchRecorder&) = delete;

  static BranchRecorder* active();

  void note(std::uint64_t choice);
  std::uint64_t digest() const { return digest_; }

 private:
  std::uint64_t digest_ = 14695981039346656037ull;
  BranchRecorder* parent_;
};

/// True when an op over these inputs must be recorded.
bool needs_tape(std::initializer_list<const Tensor*> inputs);

}  // namespace downscale
