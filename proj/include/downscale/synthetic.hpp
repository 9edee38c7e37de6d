#pragma once

#include <cstdint>
#include <string>

#include "downscale/dataset.hpp"

namespace downscale::data {

/// Synthetic heterogeneous pairs. Truth lives on a fine grid of
/// (lr_height * scale) x (lr_width * scale) points; the high-resolution
/// field is its centered crop. Cell sizes and shifts are in fine-grid points.
struct SynthConfig {
  std::uint64_t seed = 1;
  int n_days = 400;
  std::string start_date = "2000-01-01";

  std::int64_t lr_height = 9;
  std::int64_t lr_width = 14;
  std::int64_t hr_height = 41;
  std::int64_t hr_width = 66;
  int scale = 5;
  double lat0 = 21.0;
  double lon0 = 119.0;
  double lr_spacing = 0.25;

  int cells_min = 1;
  int cells_max = 4;
  double cell_sigma_min = 3.0;
  double cell_sigma_max = 9.0;
  double cell_amplitude = 10.0;  // mean peak, mm/day
  double dry_probability = 0.2;

  double orographic_gain = 2.0;
  double peak_elevation = 3000.0;
  double terrain_roughness = 0.5;   // relative amplitude of ridge-and-valley texture
  double terrain_wavelength = 8.0;
  bool all_land = false;

  double wet_bias = 1.3;
  int shift_rows = 2;
  int shift_cols = 3;
  int smoothing_radius = 2;

  /// Throws std::invalid_argument naming the violated constraint.
  void validate() const;
  GridSpec lr_spec() const;
  GridSpec fine_spec() const;
  GridSpec hr_spec() const;
};

/// High-resolution shape proportional to the 9x14 -> 41x66 default.
std::pair<std::int64_t, std::int64_t> default_hr_shape(int scale);

Dataset generate_synthetic(const SynthConfig& config);

}  // namespace downscale::data
