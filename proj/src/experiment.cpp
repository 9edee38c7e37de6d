#include "downscale/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "downscale/ops.hpp"
#include "downscale/preprocess.hpp"
#include "downscale/stat.hpp"

namespace downscale::experiment {

using data::GridField;
using data::PairedSample;

namespace {

Tensor stack(std::span<const PairedSample> samples, const GridField PairedSample::*member) {
  const GridField& first = samples.front().*member;
  std::vector<double> v;
  v.reserve(samples.size() * first.size());
  for (const auto& s : samples) {
    const GridField& f = s.*member;
    if (!f.same_extent(first)) throw std::invalid_argument("samples do not share one grid");
    for (float x : f.values) {
      if (x < 0.0f) throw std::domain_error("negative precipitation in sample " + format_date(s.date));
      v.push_back(std::log1p(static_cast<double>(x)));
    }
  }
  return Tensor({static_cast<std::int64_t>(samples.size()), first.height, first.width, 1}, std::move(v));
}

}  // namespace

train::TensorPairs to_tensors(std::span<const PairedSample> samples) {
  if (samples.empty()) return {};
  return {stack(samples, &PairedSample::x_lr), stack(samples, &PairedSample::y_hr)};
}

Tensor elevation_input(const GridField& elevation_m) {
  const GridField e = data::normalize(data::mask_elevation(elevation_m));
  std::vector<double> v(e.values.begin(), e.values.end());
  const double peak = v.empty() ? 0.0 : *std::max_element(v.begin(), v.end());
  if (peak > 0.0) {
    for (double& x : v) x /= peak;
  }
  return Tensor({1, e.height, e.width, 1}, std::move(v));
}

model::ModelConfig fit_to_data(model::ModelConfig config, const PairedSample& example) {
  config.input_height = static_cast<int>(example.x_lr.height);
  config.input_width = static_cast<int>(example.x_lr.width);
  config.target_height = static_cast<int>(example.y_hr.height);
  config.target_width = static_cast<int>(example.y_hr.width);
  config.validate();
  return config;
}

std::vector<GridField> predict(const model::AttentionSRModel& model, std::span<const PairedSample> samples,
                               const Tensor& elevation, int batch_size) {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be at least 1");
  std::vector<GridField> out;
  out.reserve(samples.size());
  for (std::size_t start = 0; start < samples.size(); start += static_cast<std::size_t>(batch_size)) {
    const auto chunk = samples.subspan(start, std::min(samples.size() - start, static_cast<std::size_t>(batch_size)));
    const Tensor pred = model.forward(to_tensors(chunk).x, elevation);
    const auto data = pred.data();
    std::size_t offset = 0;
    for (const auto& s : chunk) {
      GridField f = s.y_hr;
      if (static_cast<std::int64_t>(f.size()) != pred.dim(1) * pred.dim(2)) {
        throw ShapeError("model output " + shape_str(pred.shape()) + " does not match the truth grid");
      }
      for (auto& v : f.values) v = static_cast<float>(std::max(std::expm1(data[offset++]), 0.0));
      out.push_back(std::move(f));
    }
  }
  return out;
}

GridField upscale(const GridField& x_lr, const GridField& hr_grid, int scale, nn::UpscaleMethod method) {
  const auto up = stat::upsample_crop(x_lr, {method, scale}, hr_grid.height, hr_grid.width);
  GridField out = hr_grid;
  for (std::size_t i = 0; i < out.size(); ++i) out.values[i] = static_cast<float>(std::max(up[i], 0.0));
  return out;
}

GridField degrade(const GridField& y_hr, const GridField& lr_grid, int scale) {
  y_hr.validate();
  lr_grid.validate();
  if (y_hr.height > lr_grid.height * scale || y_hr.width > lr_grid.width * scale) {
    throw std::invalid_argument("high-resolution grid exceeds the upsampled low-resolution grid");
  }
  const auto oy = (lr_grid.height * scale - y_hr.height) / 2, ox = (lr_grid.width * scale - y_hr.width) / 2;
  GridField out = lr_grid;
  out.units = y_hr.units;
  for (std::int64_t r = 0; r < out.height; ++r)
    for (std::int64_t c = 0; c < out.width; ++c) {
      double s = 0.0;
      int n = 0;
      for (std::int64_t dy = 0; dy < scale; ++dy)
        for (std::int64_t dx = 0; dx < scale; ++dx) {
          const auto hr_r = r * scale + dy - oy, hr_c = c * scale + dx - ox;
          if (hr_r < 0 || hr_r >= y_hr.height || hr_c < 0 || hr_c >= y_hr.width || !y_hr.valid(hr_r, hr_c)) continue;
          s += y_hr.at(hr_r, hr_c);
          ++n;
        }
      out.at(r, c) = n ? static_cast<float>(s / n) : 0.0f;
      out.mask[out.index(r, c)] = n ? 1 : 0;
    }
  return out;
}

Climatology fit_climatology(std::span<const PairedSample> train, int scale, int half_width) {
  if (train.empty()) throw std::invalid_argument("no training days for the climatology");
  Climatology c;
  c.scale = scale;
  c.half_width = half_width;
  for (const auto& s : train) {
    c.dates.push_back(s.date);
    c.biased_lr.push_back(s.x_lr);
    c.reference_lr.push_back(degrade(s.y_hr, s.x_lr, scale));
    c.reference_hr.push_back(s.y_hr);
  }
  return c;
}

namespace {

stat::WindowIndex window_for(const PairedSample& day, const Climatology& clim) {
  return {cycle_day(day.date), clim.half_width, {}};
}

}  // namespace

GridField qm_lr(const PairedSample& day, const Climatology& clim) {
  const auto w = window_for(day, clim);
  const auto f_bias = stat::build_point_ecdfs(clim.biased_lr, clim.dates, w);
  const auto f_ref = stat::build_point_ecdfs(clim.reference_lr, clim.dates, w);
  return stat::qm_correct(day.x_lr, f_bias, f_ref);
}

GridField qm_baseline(const PairedSample& day, const Climatology& clim) {
  return upscale(qm_lr(day, clim), day.y_hr, clim.scale);
}

GridField bcsd_baseline(const PairedSample& day, const Climatology& clim) {
  const auto w = window_for(day, clim);
  const GridField y_l = stat::window_mean(clim.reference_lr, clim.dates, w);
  const GridField y_h = stat::window_mean(clim.reference_hr, clim.dates, w);
  GridField z = stat::bcsd(qm_lr(day, clim), y_l, y_h, {nn::UpscaleMethod::kBilinear, clim.scale});
  z.mask = day.y_hr.mask;
  return z;
}

metrics::MetricsReport evaluate(std::span<const GridField> predictions, std::span<const PairedSample> samples,
                                double threshold) {
  if (predictions.size() != samples.size()) throw std::invalid_argument("prediction and sample counts differ");
  metrics::MetricsReport report;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& truth = samples[i].y_hr;
    report.add(metrics::evaluate_day(format_date(samples[i].date), predictions[i], truth, truth.mask, threshold));
  }
  return report;
}

}  // namespace downscale::experiment
