#include "downscale/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace downscale {

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d <= 0) throw ShapeError("non-positive extent in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor() = default;

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : impl_(std::make_shared<detail::TensorImpl>()) {
  if (shape_numel(shape) != static_cast<std::int64_t>(values.size())) {
    throw ShapeError("shape " + shape_str(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = static_cast<std::size_t>(shape_numel(shape));
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor({1}, {value}, requires_grad);
}

std::int64_t Tensor::dim(int axis) const {
  if (axis < 0) axis += rank();
  if (axis < 0 || axis >= rank()) throw ShapeError("axis out of range for " + shape_str(shape()));
  return impl_->shape[static_cast<std::size_t>(axis)];
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

double Tensor::at(std::initializer_list<std::int64_t> index) const {
  if (static_cast<int>(index.size()) != rank()) throw ShapeError("index rank mismatch");
  std::int64_t offset = 0;
  int axis = 0;
  for (auto i : index) {
    auto extent = impl_->shape[static_cast<std::size_t>(axis)];
    if (i < 0 || i >= extent) throw std::out_of_range("tensor index out of range");
    offset = offset * extent + i;
    ++axis;
  }
  return impl_->data[static_cast<std::size_t>(offset)];
}

std::span<double> Tensor::mutable_grad() {
  impl_->ensure_grad();
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::clone() const {
  return Tensor(impl_->shape, impl_->data, false);
}

Tensor make_result(Shape shape, std::vector<double> values, bool tracked) {
  Tensor out(std::move(shape), std::move(values), tracked);
  out.impl_->is_leaf = !tracked;
  return out;
}

namespace {
thread_local GradientTape* g_active_tape = nullptr;
}

GradientTape::GradientTape() : parent_(g_active_tape) { g_active_tape = this; }

GradientTape::~GradientTape() { g_active_tape = parent_; }

GradientTape* GradientTape::active() { return g_active_tape; }

namespace {
thread_local BranchRecorder* g_active_recorder = nullptr;
}  // namespace

BranchRecorder::BranchRecorder() : parent_(g_active_recorder) { g_active_recorder = this; }
BranchRecorder::~BranchRecorder() { g_active_recorder = parent_; }
BranchRecorder* BranchRecorder::active() { return g_active_recorder; }

void BranchRecorder::note(std::uint64_t choice) {
  digest_ = (digest_ ^ choice) * 1099511628211ull;
}

void GradientTape::record(TapeNode node) { nodes_.push_back(std::move(node)); }

void GradientTape::backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward() needs a scalar loss, got " + shape_str(loss.shape()));
  }
  for (auto& node : nodes_) {
    if (!node.output->grad.empty()) {
      std::fill(node.output->grad.begin(), node.output->grad.end(), 0.0);
    }
  }
  auto root = loss.impl();
  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->backward();
  }
}

bool needs_tape(std::initializer_list<const Tensor*> inputs) {
  if (GradientTape::active() == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t != nullptr && t->defined() && t->requires_grad(); });
}

}  // namespace downscale
