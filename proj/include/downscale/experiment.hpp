#pragma once

#include <span>
#include <vector>

#include "downscale/dataset.hpp"
#include "downscale/layers.hpp"
#include "downscale/metrics.hpp"
#include "downscale/model.hpp"
#include "downscale/training.hpp"

namespace downscale::experiment {

/// log1p-normalized stacks of the pairs.
train::TensorPairs to_tensors(std::span<const data::PairedSample> samples);

/// Masked, log1p-normalized elevation divided by its maximum, as [1, H, W, 1].
Tensor elevation_input(const data::GridField& elevation_m);

/// Copies the input and target extents of the data into `config`.
model::ModelConfig fit_to_data(model::ModelConfig config, const data::PairedSample& example);

/// Model output back in mm/day (expm1, negatives set to 0) on the truth grid.
std::vector<data::GridField> predict(const model::AttentionSRModel& model, std::span<const data::PairedSample> samples,
                                     const Tensor& elevation, int batch_size = 16);

/// Interpolated low-resolution field, center-cropped onto `hr_grid`.
data::GridField upscale(const data::GridField& x_lr, const data::GridField& hr_grid, int scale,
                        nn::UpscaleMethod method = nn::UpscaleMethod::kBilinear);

/// Land-point mean of the high-resolution field over each low-resolution
/// cell. Cells without land are 0 and masked.
data::GridField degrade(const data::GridField& y_hr, const data::GridField& lr_grid, int scale);

/// Dated training fields used to fit the statistical baselines.
struct Climatology {
  int scale = 1;
  int half_width = 15;
  std::vector<Date> dates;
  std::vector<data::GridField> biased_lr;
  std::vector<data::GridField> reference_lr;
  std::vector<data::GridField> reference_hr;
};

Climatology fit_climatology(std::span<const data::PairedSample> train, int scale, int half_width = 15);

/// Quantile-mapped low-resolution field for the sample's calendar window.
data::GridField qm_lr(const data::PairedSample& day, const Climatology& clim);
/// QM corrected field interpolated onto the high-resolution grid.
data::GridField qm_baseline(const data::PairedSample& day, const Climatology& clim);
/// QM followed by spatial disaggregation.
data::GridField bcsd_baseline(const data::PairedSample& day, const Climatology& clim);

/// Per-day metrics of predictions against each sample's truth over its land mask.
metrics::MetricsReport evaluate(std::span<const data::GridField> predictions, std::span<const data::PairedSample> samples,
                                double threshold = 0.1);

}  // namespace downscale::experiment
