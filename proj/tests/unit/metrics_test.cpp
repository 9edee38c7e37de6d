#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "downscale/metrics.hpp"
#include "downscale/random.hpp"

using namespace downscale;
using namespace downscale::metrics;
using data::GridField;

namespace {

GridField row(std::vector<float> v) {
  GridField f = GridField::filled(1, static_cast<std::int64_t>(v.size()), 0.0f);
  f.values = std::move(v);
  return f;
}

GridField random_field(Rng& rng, std::int64_t h, std::int64_t w, double lo = 0.0, double hi = 10.0) {
  GridField f = GridField::filled(h, w, 0.0f);
  for (auto& v : f.values) v = static_cast<float>(rng.uniform(lo, hi));
  return f;
}

std::vector<std::uint8_t> all_land(const GridField& f) { return std::vector<std::uint8_t>(f.size(), 1); }

// Windowed moments via E[x^2] - mu^2 over an explicitly normalized 2-D weight table.
double ssim_oracle(const GridField& a, const GridField& b, const std::vector<std::uint8_t>& mask, double L) {
  const double c1 = std::pow(0.01 * L, 2), c2 = std::pow(0.03 * L, 2);
  double total = 0;
  int count = 0;
  for (std::int64_t r = 0; r < a.height; ++r)
    for (std::int64_t c = 0; c < a.width; ++c) {
      if (!mask[a.index(r, c)]) continue;
      std::vector<double> w, xa, xb;
      for (std::int64_t rr = r - 5; rr <= r + 5; ++rr)
        for (std::int64_t cc = c - 5; cc <= c + 5; ++cc) {
          if (rr < 0 || cc < 0 || rr >= a.height || cc >= a.width || !mask[a.index(rr, cc)]) continue;
          const double d2 = static_cast<double>((rr - r) * (rr - r) + (cc - c) * (cc - c));
          w.push_back(std::exp(-d2 / (2 * 1.5 * 1.5)));
          xa.push_back(a.at(rr, cc));
          xb.push_back(b.at(rr, cc));
        }
      double ws = 0;
      for (double v : w) ws += v;
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (std::size_t k = 0; k < w.size(); ++k) {
        const double q = w[k] / ws;
        ma += q * xa[k];
        mb += q * xb[k];
        saa += q * xa[k] * xa[k];
        sbb += q * xb[k] * xb[k];
        sab += q * xa[k] * xb[k];
      }
      const double va = saa - ma * ma, vb = sbb - mb * mb, cab = sab - ma * mb;
      total += (2 * ma * mb + c1) * (2 * cab + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  return total / count;
}

}  // namespace

TEST(Mae, Examples) {
  auto a = row({1, 2}), b = row({1, 4});
  auto m = all_land(a);
  EXPECT_EQ(mae(a, a, m), 0.0);
  EXPECT_DOUBLE_EQ(mae(a, b, m), 1.0);
}

TEST(Mae, RandomFieldsAgainstDirectSum) {
  Rng rng(1);
  auto a = random_field(rng, 7, 9), b = random_field(rng, 7, 9);
  std::vector<std::uint8_t> m(a.size());
  for (auto& v : m) v = rng.uniform() < 0.7;
  double s = 0;
  int n = 0;
  for (std::int64_t r = 0; r < 7; ++r)
    for (std::int64_t c = 0; c < 9; ++c)
      if (m[a.index(r, c)]) {
        s += std::fabs(static_cast<double>(a.at(r, c)) - b.at(r, c));
        ++n;
      }
  EXPECT_DOUBLE_EQ(mae(a, b, m), s / n);
}

TEST(Mae, Errors) {
  auto a = row({1, 2});
  EXPECT_THROW(mae(a, a, std::vector<std::uint8_t>{0, 0}), std::invalid_argument);
  EXPECT_THROW(mae(a, row({1, 2, 3}), std::vector<std::uint8_t>{1, 1}), std::invalid_argument);
  EXPECT_THROW(mae(a, a, std::vector<std::uint8_t>{1}), std::invalid_argument);
}

TEST(Rmse, ExamplesAndJensen) {
  auto z = row({0, 0}), o = row({3, 4});
  EXPECT_EQ(rmse(z, z, all_land(z)), 0.0);
  EXPECT_DOUBLE_EQ(rmse(z, o, all_land(z)), std::sqrt(12.5));
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    auto a = random_field(rng, 3, 4), b = random_field(rng, 3, 4);
    EXPECT_LE(mae(a, b, all_land(a)), rmse(a, b, all_land(a)) + 1e-12);
  }
}

TEST(Pearson, AffineAndDegenerate) {
  Rng rng(3);
  auto p = random_field(rng, 6, 6);
  auto m = all_land(p);
  GridField o = p, neg = p;
  for (std::size_t i = 0; i < p.size(); ++i) {
    o.values[i] = 2.0f * p.values[i] + 3.0f;
    neg.values[i] = -p.values[i];
  }
  EXPECT_NEAR(*pearson(p, o, m), 1.0, 1e-6);
  EXPECT_NEAR(*pearson(p, neg, m), -1.0, 1e-6);
  EXPECT_FALSE(pearson(p, GridField::filled(6, 6, 2.0f), m).has_value());
}

TEST(Pearson, CovarianceFormulaOracle) {
  Rng rng(4);
  auto a = random_field(rng, 8, 5), b = random_field(rng, 8, 5);
  auto m = all_land(a);
  long double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
  const long double n = a.size();
  for (std::size_t i = 0; i < a.size(); ++i) {
    sa += a.values[i];
    sb += b.values[i];
    saa += static_cast<long double>(a.values[i]) * a.values[i];
    sbb += static_cast<long double>(b.values[i]) * b.values[i];
    sab += static_cast<long double>(a.values[i]) * b.values[i];
  }
  const long double cov = sab / n - sa * sb / (n * n);
  const long double r = cov / std::sqrt((saa / n - sa * sa / (n * n)) * (sbb / n - sb * sb / (n * n)));
  EXPECT_NEAR(*pearson(a, b, m), static_cast<double>(r), 1e-6);
  // positive affine maps leave the value unchanged
  GridField a2 = a;
  for (auto& v : a2.values) v = 0.5f * v + 7.0f;
  EXPECT_NEAR(*pearson(a2, b, m), *pearson(a, b, m), 1e-6);
}

TEST(Ssim, IdentityAndSymmetry) {
  Rng rng(5);
  auto a = random_field(rng, 12, 15), b = random_field(rng, 12, 15);
  auto m = all_land(a);
  EXPECT_EQ(ssim(a, a, m), 1.0);
  EXPECT_DOUBLE_EQ(ssim(a, b, m), ssim(b, a, m));
  EXPECT_LT(ssim(a, b, m), 0.5);
}

TEST(Ssim, ConstantFieldsClosedForm) {
  auto a = GridField::filled(9, 9, 3.0f), b = GridField::filled(9, 9, 3.5f);
  const double L = 3.5, c1 = std::pow(0.01 * L, 2);
  // zero variances: the contrast-structure factor is C2 / C2
  const double expected = (2 * 3.0 * 3.5 + c1) / (3.0 * 3.0 + 3.5 * 3.5 + c1);
  EXPECT_NEAR(ssim(a, b, all_land(a)), expected, 1e-12);
}

TEST(Ssim, MatchesWindowedMomentOracleWithMask) {
  Rng rng(6);
  auto a = random_field(rng, 14, 17), b = random_field(rng, 14, 17);
  std::vector<std::uint8_t> m(a.size());
  for (auto& v : m) v = rng.uniform() < 0.6;
  double L = 1;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (m[i]) L = std::max({L, static_cast<double>(a.values[i]), static_cast<double>(b.values[i])});
  EXPECT_NEAR(ssim(a, b, m), ssim_oracle(a, b, m, L), 1e-9);
  // values at masked-out points are ignored
  auto a2 = a;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!m[i]) a2.values[i] = 1000.0f;
  EXPECT_DOUBLE_EQ(ssim(a2, b, m), ssim(a, b, m));
}

TEST(Ssim, LargerDynamicRangeMovesTowardOne) {
  Rng rng(7);
  auto a = random_field(rng, 10, 10, 0, 1);
  auto b = a;
  for (auto& v : b.values) v += static_cast<float>(rng.uniform(-0.05, 0.05));
  auto m = all_land(a);
  double prev = ssim(a, b, m, 1.0);
  for (double L = 2; L <= 64; L *= 2) {
    const double s = ssim(a, b, m, L);
    EXPECT_GT(s, prev);
    EXPECT_LE(s, 1.0);
    prev = s;
  }
}

TEST(Indicators, HandCase) {
  // H=3, M=1, F=1, CN=2
  auto pred = row({1, 1, 1, 0, 1, 0, 0});
  auto obs = row({1, 1, 1, 1, 0, 0, 0});
  auto c = contingency(pred, obs, all_land(obs));
  EXPECT_EQ(c.hits, 3);
  EXPECT_EQ(c.misses, 1);
  EXPECT_EQ(c.false_alarms, 1);
  EXPECT_EQ(c.correct_negatives, 2);
  auto ind = indicators(c);
  EXPECT_DOUBLE_EQ(*ind.pod, 0.75);
  EXPECT_DOUBLE_EQ(*ind.far, 0.25);
  EXPECT_DOUBLE_EQ(*ind.ts, 0.6);
}

TEST(Indicators, WetPredictionAndPerfectMatch) {
  Rng rng(8);
  auto obs = random_field(rng, 5, 5, 0, 0.3);
  auto wet = GridField::filled(5, 5, 5.0f);
  EXPECT_EQ(*forecast_indicators(wet, obs, all_land(obs)).pod, 1.0);
  auto same = forecast_indicators(obs, obs, all_land(obs));
  EXPECT_EQ(*same.pod, 1.0);
  EXPECT_EQ(*same.far, 0.0);
  EXPECT_EQ(*same.ts, 1.0);
}

TEST(Indicators, ThresholdIsInclusiveAndUndefinedRatios) {
  auto dry = GridField::filled(2, 2, 0.0f);
  auto ind = forecast_indicators(dry, dry, all_land(dry));
  EXPECT_FALSE(ind.pod.has_value());
  EXPECT_FALSE(ind.far.has_value());
  EXPECT_FALSE(ind.ts.has_value());
  auto edge = GridField::filled(2, 2, 0.1f);
  auto c = contingency(edge, edge, all_land(edge), 0.1f);
  EXPECT_EQ(c.hits, 4);
}

TEST(Indicators, CountsCoverLandOnly) {
  Rng rng(9);
  auto a = random_field(rng, 6, 7, 0, 0.2), b = random_field(rng, 6, 7, 0, 0.2);
  std::vector<std::uint8_t> m(a.size());
  int land = 0;
  for (auto& v : m) land += (v = rng.uniform() < 0.5);
  EXPECT_EQ(contingency(a, b, m).total(), land);
}

TEST(Report, AggregatesSkipUndefined) {
  MetricsReport rep;
  for (int i = 0; i < 4; ++i) {
    DayMetrics d;
    d.date = "2000-01-0" + std::to_string(i + 1);
    for (int k = 0; k < kMetricCount; ++k) d.values[k] = static_cast<double>(i + k);
    if (i == 3) d.values[2].reset();
    rep.add(d);
  }
  auto mae_agg = rep.aggregate(0);
  EXPECT_DOUBLE_EQ(*mae_agg.mean, 1.5);
  EXPECT_DOUBLE_EQ(*mae_agg.median, 1.5);
  auto corr = rep.aggregate(2);
  EXPECT_EQ(corr.undefined, 1u);
  EXPECT_DOUBLE_EQ(*corr.mean, 3.0);
  EXPECT_DOUBLE_EQ(*corr.median, 3.0);

  std::istringstream csv(rep.to_csv());
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "date,mae,rmse,pearson,ssim,pod,far,ts");
  std::vector<std::string> lines;
  while (std::getline(csv, line)) lines.push_back(line);
  ASSERT_EQ(lines.size(), 6u);
  EXPECT_EQ(lines[3], "2000-01-04,3.000000,4.000000,NA,6.000000,7.000000,8.000000,9.000000");
  EXPECT_EQ(lines[4].substr(0, 14), "mean,1.500000,");
  EXPECT_EQ(lines[5].substr(0, 7), "median,");
}

TEST(Report, EvaluateDayFillsEveryMetric) {
  Rng rng(10);
  auto a = random_field(rng, 8, 8), b = random_field(rng, 8, 8);
  auto d = evaluate_day("2001-05-05", a, b, all_land(a));
  for (const auto& v : d.values) EXPECT_TRUE(v.has_value());
  EXPECT_LE(*d.values[0], *d.values[1]);
}
