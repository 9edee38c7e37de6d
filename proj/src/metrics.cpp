#include "downscale/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace downscale::metrics {

using data::GridField;

namespace {

std::size_t check(const GridField& pred, const GridField& obs, Mask mask) {
  pred.validate();
  obs.validate();
  if (!pred.same_extent(obs)) throw std::invalid_argument("prediction and observation grids differ");
  if (mask.size() != obs.size()) throw std::invalid_argument("mask does not match the grid");
  const auto n = static_cast<std::size_t>(std::count_if(mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; }));
  if (n == 0) throw std::invalid_argument("metric over an empty mask");
  return n;
}

}  // namespace

double mae(const GridField& pred, const GridField& obs, Mask mask) {
  const auto n = check(pred, obs, mask);
  double s = 0.0;
  for (std::size_t i = 0; i < obs.size(); ++i) {
    if (mask[i]) s += std::fabs(static_cast<double>(pred.values[i]) - obs.values[i]);
  }
  return s / static_cast<double>(n);
}

double rmse(const GridField& pred, const GridField& obs, Mask mask) {
  const auto n = check(pred, obs, mask);
  double s = 0.0;
  for (std::size_t i = 0; i < obs.size(); ++i) {
    if (!mask[i]) continue;
    const double d = static_cast<double>(pred.values[i]) - obs.values[i];
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(n));
}

std::optional<double> pearson(const GridField& pred, const GridField& obs, Mask mask) {
  const auto n = check(pred, obs, mask);
  if (n < 2) return std::nullopt;
  double mp = 0.0, mo = 0.0;
  for (std::size_t i = 0; i < obs.size(); ++i) {
    if (!mask[i]) continue;
    mp += pred.values[i];
    mo += obs.values[i];
  }
  mp /= static_cast<double>(n);
  mo /= static_cast<double>(n);
  double spp = 0.0, soo = 0.0, spo = 0.0;
  for (std::size_t i = 0; i < obs.size(); ++i) {
    if (!mask[i]) continue;
    const double a = pred.values[i] - mp, b = obs.values[i] - mo;
    spp += a * a;
    soo += b * b;
    spo += a * b;
  }
  if (spp <= 0.0 || soo <= 0.0) return std::nullopt;
  return std::clamp(spo / std::sqrt(spp * soo), -1.0, 1.0);
}

double ssim(const GridField& pred, const GridField& obs, Mask mask) {
  check(pred, obs, mask);
  double peak = 1.0;
  for (std::size_t i = 0; i < obs.size(); ++i) {
    if (mask[i]) peak = std::max({peak, static_cast<double>(obs.values[i]), static_cast<double>(pred.values[i])});
  }
  return ssim(pred, obs, mask, peak);
}

double ssim(const GridField& pred, const GridField& obs, Mask mask, double dynamic_range) {
  check(pred, obs, mask);
  if (!(dynamic_range > 0.0)) throw std::invalid_argument("SSIM dynamic range must be positive");
  constexpr int kRadius = 5;
  constexpr double kSigma = 1.5;
  double g[2 * kRadius + 1];
  for (int k = -kRadius; k <= kRadius; ++k) g[k + kRadius] = std::exp(-0.5 * k * k / (kSigma * kSigma));
  const double c1 = (0.01 * dynamic_range) * (0.01 * dynamic_range);
  const double c2 = (0.03 * dynamic_range) * (0.03 * dynamic_range);

  double total = 0.0;
  std::size_t count = 0;
  for (std::int64_t r = 0; r < obs.height; ++r)
    for (std::int64_t c = 0; c < obs.width; ++c) {
      if (!mask[obs.index(r, c)]) continue;
      double wsum = 0.0, mx = 0.0, my = 0.0;
      for (int dr = -kRadius; dr <= kRadius; ++dr)
        for (int dc = -kRadius; dc <= kRadius; ++dc) {
          const auto rr = r + dr, cc = c + dc;
          if (rr < 0 || rr >= obs.height || cc < 0 || cc >= obs.width || !mask[obs.index(rr, cc)]) continue;
          const double w = g[dr + kRadius] * g[dc + kRadius];
          wsum += w;
          mx += w * pred.at(rr, cc);
          my += w * obs.at(rr, cc);
        }
      mx /= wsum;
      my /= wsum;
      double vx = 0.0, vy = 0.0, cxy = 0.0;
      for (int dr = -kRadius; dr <= kRadius; ++dr)
        for (int dc = -kRadius; dc <= kRadius; ++dc) {
          const auto rr = r + dr, cc = c + dc;
          if (rr < 0 || rr >= obs.height || cc < 0 || cc >= obs.width || !mask[obs.index(rr, cc)]) continue;
          const double w = g[dr + kRadius] * g[dc + kRadius] / wsum;
          const double a = pred.at(rr, cc) - mx, b = obs.at(rr, cc) - my;
          vx += w * (a * a);
          vy += w * (b * b);
          cxy += w * (a * b);
        }
      total += ((2.0 * (mx * my) + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  return total / static_cast<double>(count);
}

Contingency contingency(const GridField& pred, const GridField& obs, Mask mask, double threshold) {
  check(pred, obs, mask);
  Contingency c;
  c.threshold = threshold;
  for (std::size_t i = 0; i < obs.size(); ++i) {
    if (!mask[i]) continue;
    const bool p = pred.values[i] >= threshold, o = obs.values[i] >= threshold;
    if (p && o) ++c.hits;
    else if (!p && o) ++c.misses;
    else if (p) ++c.false_alarms;
    else ++c.correct_negatives;
  }
  return c;
}

Indicators indicators(const Contingency& c) {
  auto ratio = [](std::int64_t num, std::int64_t den) -> std::optional<double> {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
  };
  return {ratio(c.hits, c.hits + c.misses), ratio(c.false_alarms, c.hits + c.false_alarms),
          ratio(c.hits, c.hits + c.misses + c.false_alarms)};
}

Indicators forecast_indicators(const GridField& pred, const GridField& obs, Mask mask, double threshold) {
  return indicators(contingency(pred, obs, mask, threshold));
}

DayMetrics evaluate_day(const std::string& date, const GridField& pred, const GridField& obs, Mask mask, double threshold) {
  DayMetrics d;
  d.date = date;
  d.values[0] = mae(pred, obs, mask);
  d.values[1] = rmse(pred, obs, mask);
  d.values[2] = pearson(pred, obs, mask);
  d.values[3] = ssim(pred, obs, mask);
  const auto ind = forecast_indicators(pred, obs, mask, threshold);
  d.values[4] = ind.pod;
  d.values[5] = ind.far;
  d.values[6] = ind.ts;
  return d;
}

Aggregate MetricsReport::aggregate(int metric) const {
  if (metric < 0 || metric >= kMetricCount) throw std::out_of_range("metric index out of range");
  std::vector<double> v;
  Aggregate a;
  for (const auto& d : days_) {
    if (d.values[metric]) v.push_back(*d.values[metric]);
    else ++a.undefined;
  }
  if (v.empty()) return a;
  double s = 0.0;
  for (double x : v) s += x;
  a.mean = s / static_cast<double>(v.size());
  std::sort(v.begin(), v.end());
  const auto m = v.size() / 2;
  a.median = v.size() % 2 == 1 ? v[m] : 0.5 * (v[m - 1] + v[m]);
  return a;
}

namespace {

std::string cell(const std::optional<double>& v) {
  if (!v) return "NA";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", *v);
  return buf;
}

}  // namespace

std::string MetricsReport::to_csv() const {
  std::string out = "date";
  for (const char* name : kMetricNames) out += std::string(",") + name;
  out += "\n";
  for (const auto& d : days_) {
    out += d.date;
    for (const auto& v : d.values) out += "," + cell(v);
    out += "\n";
  }
  Aggregate aggs[kMetricCount];
  for (int m = 0; m < kMetricCount; ++m) aggs[m] = aggregate(m);
  out += "mean";
  for (const auto& a : aggs) out += "," + cell(a.mean);
  out += "\nmedian";
  for (const auto& a : aggs) out += "," + cell(a.median);
  out += "\n";
  return out;
}

void MetricsReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << to_csv();
}

}  // namespace downscale::metrics
