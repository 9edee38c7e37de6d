#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "downscale/grid.hpp"

namespace downscale::metrics {

/// Metrics compare pred and obs on their shared grid over points where
/// mask != 0. The mask has one byte per grid point.
using Mask = std::span<const std::uint8_t>;

double mae(const data::GridField& pred, const data::GridField& obs, Mask mask);
double rmse(const data::GridField& pred, const data::GridField& obs, Mask mask);
/// Empty when either field has zero variance over the mask.
std::optional<double> pearson(const data::GridField& pred, const data::GridField& obs, Mask mask);

/// Mean local SSIM over masked points: 11x11 Gaussian window (sigma 1.5),
/// renormalized over the masked in-bounds neighbours of each point.
/// C1 = (0.01 L)^2, C2 = (0.03 L)^2 with L = max(obs max, pred max, 1).
double ssim(const data::GridField& pred, const data::GridField& obs, Mask mask);
double ssim(const data::GridField& pred, const data::GridField& obs, Mask mask, double dynamic_range);

struct Contingency {
  std::int64_t hits = 0;
  std::int64_t misses = 0;
  std::int64_t false_alarms = 0;
  std::int64_t correct_negatives = 0;
  double threshold = 0.1;

  std::int64_t total() const { return hits + misses + false_alarms + correct_negatives; }
};

Contingency contingency(const data::GridField& pred, const data::GridField& obs, Mask mask, double threshold = 0.1);

struct Indicators {
  std::optional<double> pod;  // H / (H + M)
  std::optional<double> far;  // F / (H + F)
  std::optional<double> ts;   // H / (H + M + F)
};

Indicators indicators(const Contingency& c);
Indicators forecast_indicators(const data::GridField& pred, const data::GridField& obs, Mask mask, double threshold = 0.1);

inline constexpr int kMetricCount = 7;
inline constexpr const char* kMetricNames[kMetricCount] = {"mae", "rmse", "pearson", "ssim", "pod", "far", "ts"};

/// One evaluated day. Undefined metrics are empty.
struct DayMetrics {
  std::string date;
  std::optional<double> values[kMetricCount];
};

DayMetrics evaluate_day(const std::string& date, const data::GridField& pred, const data::GridField& obs, Mask mask,
                        double threshold = 0.1);

struct Aggregate {
  std::optional<double> mean;
  std::optional<double> median;
  std::size_t undefined = 0;
};

class MetricsReport {
 public:
  void add(DayMetrics day) { days_.push_back(std::move(day)); }
  const std::vector<DayMetrics>& days() const { return days_; }

  /// Mean and median over days where the metric is defined.
  Aggregate aggregate(int metric) const;

  /// "date,mae,rmse,pearson,ssim,pod,far,ts" rows, undefined as NA, then
  /// "mean" and "median" footer rows.
  std::string to_csv() const;
  void write_csv(const std::filesystem::path& path) const;

 private:
  std::vector<DayMetrics> days_;
};

}  // namespace downscale::metrics
