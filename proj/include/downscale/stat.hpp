#pragma once

#include <span>
#include <vector>

#include "downscale/calendar.hpp"
#include "downscale/grid.hpp"
#include "downscale/layers.hpp"

namespace downscale::stat {

/// Empirical CDF with Weibull plotting positions i / (n + 1). Tied samples
/// share the average of their ranks; between distinct values the CDF and its
/// inverse interpolate linearly. Evaluation is clamped to the first and last
/// node positions.
class EmpiricalCDF {
 public:
  /// Needs at least two samples.
  explicit EmpiricalCDF(std::vector<double> samples);

  std::size_t n() const { return samples_.size(); }
  const std::vector<double>& samples() const { return samples_; }
  const std::vector<double>& nodes() const { return nodes_; }
  const std::vector<double>& positions() const { return positions_; }

  double eval(double x) const;
  /// p is clamped to [0, 1]; values outside the node positions map to the extremes.
  double invert(double p) const;

 private:
  std::vector<double> samples_;
  std::vector<double> nodes_;      // distinct sample values, ascending
  std::vector<double> positions_;  // plotting position of each node
};

inline double cdf_eval(const EmpiricalCDF& f, double x) { return f.eval(x); }
inline double cdf_invert(const EmpiricalCDF& f, double p) { return f.invert(p); }

/// Calendar window day +- half_width on a 365-day cycle. An empty year list
/// admits every year.
struct WindowIndex {
  int day_of_year = 1;
  int half_width = 15;
  std::vector<int> years;

  bool contains(const Date& d) const;
};

/// Values whose date falls in the window, as an ECDF. Throws
/// std::invalid_argument if fewer than two samples qualify.
EmpiricalCDF build_ecdf(std::span<const Date> dates, std::span<const double> values, const WindowIndex& w);

/// One ECDF per grid point, built from a stack of daily fields.
struct PointCDFs {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<EmpiricalCDF> cdfs;
};

PointCDFs build_point_ecdfs(std::span<const data::GridField> fields, std::span<const Date> dates, const WindowIndex& w);

/// Per-point mean over the dated fields inside the window.
data::GridField window_mean(std::span<const data::GridField> fields, std::span<const Date> dates, const WindowIndex& w);

/// x_cor = F_ref^-1(F_bias(x_bias)) per grid point, clamped at 0.
data::GridField qm_correct(const data::GridField& x_bias, const PointCDFs& f_bias, const PointCDFs& f_ref);

/// Z = Y_h + up(x_cor - Y_l) * Y_h / (up(Y_l) + 1), negative Z set to 0.
/// Upsampled low-res fields are center-cropped to the extent of Y_h; the
/// result carries Y_h's georeference and mask.
data::GridField bcsd(const data::GridField& x_cor_lr, const data::GridField& y_l, const data::GridField& y_h,
                     const nn::ResampleSpec& interp);

/// Upsamples a low-res field by `interp` and center-crops it to (height, width).
std::vector<double> upsample_crop(const data::GridField& lr, const nn::ResampleSpec& interp, std::int64_t height,
                                  std::int64_t width);

}  // namespace downscale::stat
