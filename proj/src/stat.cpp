#include "downscale/stat.hpp"

#include <algorithm>
#include <stdexcept>

#include "downscale/ops.hpp"

namespace downscale::stat {

EmpiricalCDF::EmpiricalCDF(std::vector<double> samples) : samples_(std::move(samples)) {
  if (samples_.size() < 2) throw std::invalid_argument("empirical CDF needs at least two samples");
  std::sort(samples_.begin(), samples_.end());
  const double denom = static_cast<double>(samples_.size()) + 1.0;
  for (std::size_t i = 0; i < samples_.size();) {
    std::size_t j = i;
    while (j < samples_.size() && samples_[j] == samples_[i]) ++j;
    // ranks i+1 .. j averaged over the tied block
    nodes_.push_back(samples_[i]);
    positions_.push_back(0.5 * static_cast<double>(i + 1 + j) / denom);
    i = j;
  }
}

double EmpiricalCDF::eval(double x) const {
  const double n = static_cast<double>(samples_.size());
  if (x < nodes_.front()) return 1.0 / (n + 1.0);
  if (x > nodes_.back()) return n / (n + 1.0);
  auto it = std::lower_bound(nodes_.begin(), nodes_.end(), x);
  const auto k = static_cast<std::size_t>(it - nodes_.begin());
  if (*it == x) return positions_[k];
  const double t = (x - nodes_[k - 1]) / (nodes_[k] - nodes_[k - 1]);
  return positions_[k - 1] + t * (positions_[k] - positions_[k - 1]);
}

double EmpiricalCDF::invert(double p) const {
  p = std::clamp(p, 0.0, 1.0);
  if (p <= positions_.front()) return nodes_.front();
  if (p >= positions_.back()) return nodes_.back();
  auto it = std::lower_bound(positions_.begin(), positions_.end(), p);
  const auto k = static_cast<std::size_t>(it - positions_.begin());
  if (*it == p) return nodes_[k];
  const double t = (p - positions_[k - 1]) / (positions_[k] - positions_[k - 1]);
  return nodes_[k - 1] + t * (nodes_[k] - nodes_[k - 1]);
}

bool WindowIndex::contains(const Date& d) const {
  if (!years.empty() && std::find(years.begin(), years.end(), static_cast<int>(d.year())) == years.end()) return false;
  int center = day_of_year;
  if (center == 366) center = 365;
  const int dist = std::abs(cycle_day(d) - center);
  return std::min(dist, 365 - dist) <= half_width;
}

EmpiricalCDF build_ecdf(std::span<const Date> dates, std::span<const double> values, const WindowIndex& w) {
  if (dates.size() != values.size()) throw std::invalid_argument("dates and values differ in length");
  std::vector<double> picked;
  for (std::size_t i = 0; i < dates.size(); ++i) {
    if (w.contains(dates[i])) picked.push_back(values[i]);
  }
  if (picked.size() < 2) {
    throw std::invalid_argument("calendar window around day " + std::to_string(w.day_of_year) + " holds " +
                                std::to_string(picked.size()) + " samples; need at least 2");
  }
  return EmpiricalCDF(std::move(picked));
}

namespace {

void check_stack(std::span<const data::GridField> fields, std::span<const Date> dates) {
  if (fields.empty()) throw std::invalid_argument("no fields given");
  if (fields.size() != dates.size()) throw std::invalid_argument("fields and dates differ in length");
  for (const auto& f : fields) {
    f.validate();
    if (!f.same_extent(fields.front())) throw std::invalid_argument("fields do not share one grid");
  }
}

}  // namespace

PointCDFs build_point_ecdfs(std::span<const data::GridField> fields, std::span<const Date> dates, const WindowIndex& w) {
  check_stack(fields, dates);
  std::vector<std::size_t> picked;
  for (std::size_t i = 0; i < dates.size(); ++i) {
    if (w.contains(dates[i])) picked.push_back(i);
  }
  if (picked.size() < 2) {
    throw std::invalid_argument("calendar window around day " + std::to_string(w.day_of_year) + " holds " +
                                std::to_string(picked.size()) + " samples; need at least 2");
  }
  PointCDFs out;
  out.height = fields.front().height;
  out.width = fields.front().width;
  const std::size_t points = fields.front().size();
  out.cdfs.reserve(points);
  std::vector<double> column(picked.size());
  for (std::size_t p = 0; p < points; ++p) {
    for (std::size_t k = 0; k < picked.size(); ++k) column[k] = fields[picked[k]].values[p];
    out.cdfs.emplace_back(column);
  }
  return out;
}

data::GridField window_mean(std::span<const data::GridField> fields, std::span<const Date> dates, const WindowIndex& w) {
  check_stack(fields, dates);
  data::GridField out = fields.front();
  std::vector<double> acc(out.size(), 0.0);
  std::size_t count = 0;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (!w.contains(dates[i])) continue;
    ++count;
    for (std::size_t p = 0; p < acc.size(); ++p) acc[p] += fields[i].values[p];
  }
  if (count == 0) throw std::invalid_argument("calendar window around day " + std::to_string(w.day_of_year) + " is empty");
  for (std::size_t p = 0; p < acc.size(); ++p) out.values[p] = static_cast<float>(acc[p] / static_cast<double>(count));
  return out;
}

data::GridField qm_correct(const data::GridField& x_bias, const PointCDFs& f_bias, const PointCDFs& f_ref) {
  x_bias.validate();
  if (f_bias.height != x_bias.height || f_bias.width != x_bias.width || f_ref.height != x_bias.height ||
      f_ref.width != x_bias.width) {
    throw std::invalid_argument("quantile mapping CDFs are on a different grid than the input");
  }
  data::GridField out = x_bias;
  for (std::size_t p = 0; p < out.size(); ++p) {
    const double v = f_ref.cdfs[p].invert(f_bias.cdfs[p].eval(x_bias.values[p]));
    out.values[p] = static_cast<float>(std::max(v, 0.0));
  }
  return out;
}

std::vector<double> upsample_crop(const data::GridField& lr, const nn::ResampleSpec& interp, std::int64_t height,
                                  std::int64_t width) {
  std::vector<double> v(lr.values.begin(), lr.values.end());
  Tensor x({1, lr.height, lr.width, 1}, std::move(v));
  Tensor up = ops::crop_center(nn::resample(x, interp), height, width);
  return {up.data().begin(), up.data().end()};
}

data::GridField bcsd(const data::GridField& x_cor_lr, const data::GridField& y_l, const data::GridField& y_h,
                     const nn::ResampleSpec& interp) {
  x_cor_lr.validate();
  y_l.validate();
  y_h.validate();
  if (!x_cor_lr.same_extent(y_l)) throw std::invalid_argument("BCSD: corrected field and Y_l are on different grids");
  if (y_h.height > y_l.height * interp.factor || y_h.width > y_l.width * interp.factor) {
    throw std::invalid_argument("BCSD: high-res grid larger than the upsampled low-res grid");
  }
  data::GridField anomaly = x_cor_lr;
  for (std::size_t p = 0; p < anomaly.size(); ++p) anomaly.values[p] = x_cor_lr.values[p] - y_l.values[p];
  const auto a_up = upsample_crop(anomaly, interp, y_h.height, y_h.width);
  const auto yl_up = upsample_crop(y_l, interp, y_h.height, y_h.width);
  data::GridField z = y_h;
  for (std::size_t p = 0; p < z.size(); ++p) {
    const double yh = y_h.values[p];
    const double v = yh + a_up[p] * yh / (yl_up[p] + 1.0);
    z.values[p] = static_cast<float>(std::max(v, 0.0));
  }
  return z;
}

}  // namespace downscale::stat
