#include "downscale/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "downscale/ops.hpp"
#include "downscale/random.hpp"

namespace downscale::train {

void TrainConfig::validate() const {
  if (epochs_max < 1) throw std::invalid_argument("epochs_max must be at least 1");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be at least 1");
  if (patience < 0 || patience >= epochs_max) throw std::invalid_argument("patience must lie in [0, epochs_max)");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("Adam betas must lie in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw std::invalid_argument("Adam epsilon must be positive");
}

Tensor mse_loss(const Tensor& pred, const Tensor& truth) {
  if (pred.shape() != truth.shape()) {
    throw ShapeError("mse_loss: " + shape_str(pred.shape()) + " vs " + shape_str(truth.shape()));
  }
  const auto diff = ops::sub(pred, truth);
  return ops::mean_all(ops::mul(diff, diff));
}

void adam_step(std::span<model::NamedParameter> params, AdamState& state, const TrainConfig& c) {
  for (const auto& p : params) {
    if (!p.value.has_grad()) throw std::invalid_argument("parameter " + p.name + " has no gradient");
  }
  if (state.m.size() != params.size()) {
    state.m.clear();
    state.v.clear();
    for (const auto& p : params) {
      state.m.emplace_back(static_cast<std::size_t>(p.value.numel()), 0.0);
      state.v.emplace_back(static_cast<std::size_t>(p.value.numel()), 0.0);
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correct1 = 1.0 - std::pow(c.beta1, t);
  const double correct2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto value = params[k].value.data();
    const auto grad = params[k].value.grad();
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = grad[i];
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
      value[i] -= c.learning_rate * (m[i] / correct1) / (std::sqrt(v[i] / correct2) + c.epsilon);
    }
  }
}

Tensor gather(const Tensor& stacked, std::span<const std::size_t> index) {
  Shape shape = stacked.shape();
  const auto row = static_cast<std::size_t>(stacked.numel() / shape[0]);
  std::vector<double> out(row * index.size());
  const auto src = stacked.data();
  for (std::size_t k = 0; k < index.size(); ++k) {
    if (index[k] >= static_cast<std::size_t>(shape[0])) throw std::out_of_range("gather index out of range");
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(index[k] * row), row,
                out.begin() + static_cast<std::ptrdiff_t>(k * row));
  }
  shape[0] = static_cast<std::int64_t>(index.size());
  return Tensor(std::move(shape), std::move(out));
}

std::string History::to_csv() const {
  std::string out = "epoch,train_loss,val_loss\n";
  char buf[96];
  for (const auto& e : epochs) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g\n", e.epoch, e.train_loss, e.val_loss);
    out += buf;
  }
  return out;
}

void History::write_csv(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << to_csv();
}

double evaluate_mse(const model::AttentionSRModel& model, const TensorPairs& pairs, const Tensor& elevation,
                    int batch_size) {
  const auto n = static_cast<std::size_t>(pairs.size());
  if (n == 0) throw std::invalid_argument("validation set is empty");
  double total = 0.0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(batch_size)) {
    idx.clear();
    for (std::size_t i = start; i < std::min(n, start + static_cast<std::size_t>(batch_size)); ++i) idx.push_back(i);
    const Tensor pred = model.forward(gather(pairs.x, idx), elevation);
    total += mse_loss(pred, gather(pairs.y, idx)).item() * static_cast<double>(idx.size());
  }
  return total / static_cast<double>(n);
}

History train(model::AttentionSRModel& model, const TensorPairs& train_set, const TensorPairs& val_set,
              const Tensor& elevation, const TrainConfig& config, const TrainHooks& hooks) {
  config.validate();
  if (train_set.size() == 0) throw std::invalid_argument("training split is empty");
  if (val_set.size() == 0 && !hooks.validation) throw std::invalid_argument("validation split is empty");

  const auto n = static_cast<std::size_t>(train_set.size());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(config.seed);
  TrainState state;
  auto best = model.snapshot();
  History history;
  auto& params = model.parameters();

  while (state.epoch < config.epochs_max) {
    ++state.epoch;
    for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
    double train_total = 0.0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(config.batch_size)) {
      const auto end = std::min(n, start + static_cast<std::size_t>(config.batch_size));
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      for (auto& p : params) p.value.zero_grad();
      GradientTape tape;
      const Tensor loss = mse_loss(model.forward(gather(train_set.x, idx), elevation), gather(train_set.y, idx));
      tape.backward(loss);
      adam_step(params, state.adam, config);
      train_total += loss.item() * static_cast<double>(idx.size());
    }
    EpochRecord rec;
    rec.epoch = state.epoch;
    rec.train_loss = train_total / static_cast<double>(n);
    rec.val_loss = hooks.validation ? hooks.validation(model, state.epoch)
                                    : evaluate_mse(model, val_set, elevation, config.batch_size);
    history.epochs.push_back(rec);
    if (hooks.on_epoch) hooks.on_epoch(rec);

    if (rec.val_loss < state.best_val) {
      state.best_val = rec.val_loss;
      state.best_epoch = state.epoch;
      state.since_improvement = 0;
      best = model.snapshot();
    } else {
      ++state.since_improvement;
    }
    if (state.since_improvement >= config.patience) {
      history.early_stopped = true;
      break;
    }
  }
  model.restore(best);
  history.best_epoch = state.best_epoch;
  history.best_val = state.best_val;
  return history;
}

}  // namespace downscale::train
