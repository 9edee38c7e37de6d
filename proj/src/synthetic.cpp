#include "downscale/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "downscale/random.hpp"

namespace downscale::data {

namespace {

using Plane = std::vector<double>;

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(std::string("synthetic config: ") + what);
}

// Separable box mean with clamped edges.
Plane box_smooth(const Plane& in, std::int64_t h, std::int64_t w, int radius) {
  if (radius == 0) return in;
  Plane tmp(in.size()), out(in.size());
  const double norm = 1.0 / (2.0 * radius + 1.0);
  for (std::int64_t r = 0; r < h; ++r)
    for (std::int64_t c = 0; c < w; ++c) {
      double s = 0.0;
      for (int k = -radius; k <= radius; ++k) s += in[r * w + std::clamp<std::int64_t>(c + k, 0, w - 1)];
      tmp[r * w + c] = s * norm;
    }
  for (std::int64_t r = 0; r < h; ++r)
    for (std::int64_t c = 0; c < w; ++c) {
      double s = 0.0;
      for (int k = -radius; k <= radius; ++k) s += tmp[std::clamp<std::int64_t>(r + k, 0, h - 1) * w + c];
      out[r * w + c] = s * norm;
    }
  return out;
}

}  // namespace

std::pair<std::int64_t, std::int64_t> default_hr_shape(int scale) {
  switch (scale) {
    case 2: return {16, 26};
    case 4: return {33, 53};
    case 5: return {41, 66};
    case 8: return {66, 106};
    default: throw std::invalid_argument("no default high-resolution shape for scale " + std::to_string(scale));
  }
}

void SynthConfig::validate() const {
  require(n_days >= 1, "n_days must be positive");
  require(lr_height >= 2 && lr_width >= 2, "low-resolution grid must be at least 2x2");
  require(scale >= 1, "scale must be positive");
  require(hr_height >= 1 && hr_width >= 1, "high-resolution grid must be nonempty");
  require(hr_height <= lr_height * scale && hr_width <= lr_width * scale,
          "high-resolution grid exceeds the upsampled low-resolution grid");
  const double lr_aspect = static_cast<double>(lr_width) / static_cast<double>(lr_height);
  const double hr_aspect = static_cast<double>(hr_width) / static_cast<double>(hr_height);
  require(std::fabs(hr_aspect / lr_aspect - 1.0) <= 0.1, "high- and low-resolution aspect ratios differ");
  require(lr_spacing > 0.0, "lr_spacing must be positive");
  require(cells_min >= 0 && cells_max >= cells_min, "cell count range is invalid");
  require(cell_sigma_min > 0.0 && cell_sigma_max >= cell_sigma_min, "cell size range is invalid");
  require(cell_amplitude >= 0.0, "cell_amplitude must be nonnegative");
  require(dry_probability >= 0.0 && dry_probability <= 1.0, "dry_probability must lie in [0, 1]");
  require(orographic_gain >= 0.0, "orographic_gain must be nonnegative");
  require(peak_elevation > 0.0, "peak_elevation must be positive");
  require(terrain_roughness >= 0.0 && terrain_roughness < 1.0, "terrain_roughness must lie in [0, 1)");
  require(terrain_wavelength > 0.0, "terrain_wavelength must be positive");
  require(wet_bias > 0.0, "wet_bias must be positive");
  require(smoothing_radius >= 0, "smoothing_radius must be nonnegative");
  parse_date(start_date);
}

GridSpec SynthConfig::lr_spec() const { return {lr_height, lr_width, lat0, lon0, lr_spacing, lr_spacing}; }

GridSpec SynthConfig::fine_spec() const {
  const double d = lr_spacing / scale;
  return {lr_height * scale, lr_width * scale, lat0 - 0.5 * lr_spacing + 0.5 * d, lon0 - 0.5 * lr_spacing + 0.5 * d, d, d};
}

GridSpec SynthConfig::hr_spec() const {
  GridSpec f = fine_spec();
  const auto oy = (f.height - hr_height) / 2, ox = (f.width - hr_width) / 2;
  return {hr_height, hr_width, f.lat0 + static_cast<double>(oy) * f.dlat, f.lon0 + static_cast<double>(ox) * f.dlon,
          f.dlat, f.dlon};
}

Dataset generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const GridSpec fine = cfg.fine_spec();
  const GridSpec hr = cfg.hr_spec();
  const std::int64_t fh = fine.height, fw = fine.width;
  const auto oy = (fh - hr.height) / 2, ox = (fw - hr.width) / 2;

  // Island: rotated ellipse with a ridge displaced toward its eastern flank.
  const double angle = rng.uniform(0.2, 0.6);
  const double ridge_shift = rng.uniform(0.1, 0.3);
  const double k = 2.0 * std::numbers::pi / cfg.terrain_wavelength;
  const double k1 = k * rng.uniform(0.8, 1.2), k2 = k * rng.uniform(0.8, 1.2);
  const double p1 = rng.uniform(0.0, 2.0 * std::numbers::pi), p2 = rng.uniform(0.0, 2.0 * std::numbers::pi);
  Plane elevation(static_cast<std::size_t>(fh * fw));
  std::vector<std::uint8_t> land(elevation.size());
  const double cy = 0.5 * static_cast<double>(fh - 1), cx = 0.5 * static_cast<double>(fw - 1);
  const double ay = 0.45 * static_cast<double>(fh), ax = 0.32 * static_cast<double>(fw);
  for (std::int64_t r = 0; r < fh; ++r)
    for (std::int64_t c = 0; c < fw; ++c) {
      const double y = static_cast<double>(r) - cy, x = static_cast<double>(c) - cx;
      const double u = std::cos(angle) * x + std::sin(angle) * y;
      const double v = -std::sin(angle) * x + std::cos(angle) * y;
      const double q = std::hypot(u / ax, v / ay);
      const double ridge = std::hypot((u / ax - ridge_shift) * 1.6, v / ay);
      const auto i = static_cast<std::size_t>(r * fw + c);
      if (q < 1.0) {
        const double relief = std::pow(std::max(1.0 - ridge, 0.0), 1.3);
        const double texture = 1.0 + cfg.terrain_roughness * std::sin(k1 * static_cast<double>(c) + p1) * std::sin(k2 * static_cast<double>(r) + p2);
        elevation[i] = cfg.peak_elevation * (0.05 * (1.0 - q) + 0.95 * relief * texture);
        land[i] = 1;
      } else {
        elevation[i] = -40.0 * std::min(q - 1.0, 1.0) - 1.0;
        land[i] = cfg.all_land ? 1 : 0;
      }
      if (cfg.all_land && elevation[i] < 0.0) elevation[i] = 0.0;
    }
  const double emax = std::max(*std::max_element(elevation.begin(), elevation.end()), 1e-12);
  Plane enhance(elevation.size());
  for (std::size_t i = 0; i < elevation.size(); ++i) {
    enhance[i] = 1.0 + cfg.orographic_gain * std::max(elevation[i], 0.0) / emax;
  }

  Dataset ds;
  ds.elevation = GridField::on(hr, 0.0f, "m");
  for (std::int64_t r = 0; r < hr.height; ++r)
    for (std::int64_t c = 0; c < hr.width; ++c) {
      const auto i = static_cast<std::size_t>((r + oy) * fw + c + ox);
      ds.elevation.at(r, c) = static_cast<float>(elevation[i]);
      ds.elevation.mask[ds.elevation.index(r, c)] = land[i];
    }

  const Date start = parse_date(cfg.start_date);
  const std::int64_t s = cfg.scale;
  Plane truth(elevation.size());
  Plane biased(elevation.size());
  for (int day = 0; day < cfg.n_days; ++day) {
    const Date date = add_days(start, day);
    std::fill(truth.begin(), truth.end(), 0.0);
    if (rng.uniform() >= cfg.dry_probability) {
      const double season = 1.0 + 0.5 * std::sin(2.0 * std::numbers::pi * (cycle_day(date) - 80) / 365.0);
      const auto cells = cfg.cells_min + static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.cells_max - cfg.cells_min + 1)));
      for (int k = 0; k < cells; ++k) {
        const double my = rng.uniform(-0.1, 1.1) * static_cast<double>(fh);
        const double mx = rng.uniform(-0.1, 1.1) * static_cast<double>(fw);
        const double sigma = rng.uniform(cfg.cell_sigma_min, cfg.cell_sigma_max);
        const double amp = rng.exponential(cfg.cell_amplitude) * season;
        const double inv = 1.0 / (2.0 * sigma * sigma);
        for (std::int64_t r = 0; r < fh; ++r)
          for (std::int64_t c = 0; c < fw; ++c) {
            const double dy = static_cast<double>(r) - my, dx = static_cast<double>(c) - mx;
            truth[static_cast<std::size_t>(r * fw + c)] += amp * std::exp(-(dy * dy + dx * dx) * inv);
          }
      }
      for (std::size_t i = 0; i < truth.size(); ++i) {
        truth[i] = static_cast<double>(static_cast<float>(truth[i] * enhance[i]));
      }
    }

    PairedSample sample;
    sample.date = date;
    sample.y_hr = GridField::on(hr, 0.0f);
    for (std::int64_t r = 0; r < hr.height; ++r)
      for (std::int64_t c = 0; c < hr.width; ++c) {
        const auto i = static_cast<std::size_t>((r + oy) * fw + c + ox);
        const auto o = sample.y_hr.index(r, c);
        sample.y_hr.mask[o] = land[i];
        sample.y_hr.values[o] = land[i] ? static_cast<float>(truth[i]) : 0.0f;
      }

    for (std::int64_t r = 0; r < fh; ++r)
      for (std::int64_t c = 0; c < fw; ++c) {
        const auto sr = std::clamp<std::int64_t>(r - cfg.shift_rows, 0, fh - 1);
        const auto sc = std::clamp<std::int64_t>(c - cfg.shift_cols, 0, fw - 1);
        biased[static_cast<std::size_t>(r * fw + c)] = cfg.wet_bias * truth[static_cast<std::size_t>(sr * fw + sc)];
      }
    const Plane smooth = box_smooth(biased, fh, fw, cfg.smoothing_radius);
    sample.x_lr = GridField::on(cfg.lr_spec(), 0.0f);
    for (std::int64_t r = 0; r < cfg.lr_height; ++r)
      for (std::int64_t c = 0; c < cfg.lr_width; ++c) {
        double acc = 0.0;
        for (std::int64_t dy = 0; dy < s; ++dy)
          for (std::int64_t dx = 0; dx < s; ++dx) acc += smooth[static_cast<std::size_t>((r * s + dy) * fw + c * s + dx)];
        sample.x_lr.at(r, c) = static_cast<float>(acc / static_cast<double>(s * s));
      }
    ds.samples.push_back(std::move(sample));
  }
  return ds;
}

}  // namespace downscale::data
