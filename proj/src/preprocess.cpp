#include "downscale/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace downscale::data {

namespace {

constexpr double kTol = 1e-9;

// Indices [first, last] of centers v0 + i*dv inside [lo, hi].
std::pair<std::int64_t, std::int64_t> select(double v0, double dv, std::int64_t n, double lo, double hi,
                                             const char* axis) {
  const double a = std::min(v0, v0 + static_cast<double>(n - 1) * dv);
  const double b = std::max(v0, v0 + static_cast<double>(n - 1) * dv);
  const double half = 0.5 * std::fabs(dv);
  if (lo > hi) throw std::invalid_argument(std::string("bounding box ") + axis + " range is inverted");
  if (lo < a - half - kTol || hi > b + half + kTol) {
    throw std::invalid_argument(std::string("bounding box ") + axis + " range [" + std::to_string(lo) + ", " +
                                std::to_string(hi) + "] lies outside the raster");
  }
  std::int64_t first = -1, last = -1;
  for (std::int64_t i = 0; i < n; ++i) {
    const double v = v0 + static_cast<double>(i) * dv;
    if (v < lo - kTol || v > hi + kTol) continue;
    if (first < 0) first = i;
    last = i;
  }
  if (first < 0) throw std::invalid_argument(std::string("bounding box selects no ") + axis + " centers");
  return {first, last};
}

std::int64_t nearest(double v, double v0, double dv, std::int64_t n, const char* axis) {
  const auto i = static_cast<std::int64_t>(std::llround((v - v0) / dv));
  if (i < 0 || i >= n) throw std::invalid_argument(std::string("target grid reaches outside the source ") + axis + " range");
  return i;
}

}  // namespace

BoundingBox box_of(const GridSpec& s) {
  const double lat1 = s.lat0 + static_cast<double>(s.height - 1) * s.dlat;
  const double lon1 = s.lon0 + static_cast<double>(s.width - 1) * s.dlon;
  return {std::min(s.lat0, lat1), std::max(s.lat0, lat1), std::min(s.lon0, lon1), std::max(s.lon0, lon1)};
}

GridField crop_to_box(const GridField& field, const BoundingBox& box) {
  field.validate();
  const auto [r0, r1] = select(field.lat0, field.dlat, field.height, box.lat_min, box.lat_max, "latitude");
  const auto [c0, c1] = select(field.lon0, field.dlon, field.width, box.lon_min, box.lon_max, "longitude");
  GridField out;
  out.height = r1 - r0 + 1;
  out.width = c1 - c0 + 1;
  out.lat0 = field.lat(r0);
  out.lon0 = field.lon(c0);
  out.dlat = field.dlat;
  out.dlon = field.dlon;
  out.units = field.units;
  for (std::int64_t r = r0; r <= r1; ++r)
    for (std::int64_t c = c0; c <= c1; ++c) {
      out.values.push_back(field.at(r, c));
      out.mask.push_back(field.mask[field.index(r, c)]);
    }
  return out;
}

GridField daily_mean(std::span<const GridField> fields) {
  if (fields.empty()) throw std::invalid_argument("daily mean of no fields");
  for (const auto& f : fields) {
    f.validate();
    if (!f.same_extent(fields.front())) throw std::invalid_argument("daily mean over fields on different grids");
  }
  GridField out = fields.front();
  for (std::size_t p = 0; p < out.size(); ++p) {
    double s = 0.0;
    for (const auto& f : fields) s += f.values[p];
    out.values[p] = static_cast<float>(s / static_cast<double>(fields.size()));
  }
  return out;
}

GridField preprocess_lr(const GridField& raw_m, const BoundingBox& box) {
  GridField out = crop_to_box(raw_m, box);
  for (auto& v : out.values) v = static_cast<float>(static_cast<double>(v) * 1e3);
  out.units = "mm/day";
  return out;
}

GridField preprocess_lr(std::span<const GridField> hourly_m, const BoundingBox& box) {
  return preprocess_lr(daily_mean(hourly_m), box);
}

GridField preprocess_hr(const GridField& raw, const GridSpec& target) {
  if (raw.mask.size() != raw.values.size()) throw std::invalid_argument("observation raster has no land/sea mask");
  raw.validate();
  GridField out = GridField::on(target, 0.0f, raw.units);
  for (std::int64_t r = 0; r < target.height; ++r) {
    const auto sr = nearest(out.lat(r), raw.lat0, raw.dlat, raw.height, "latitude");
    for (std::int64_t c = 0; c < target.width; ++c) {
      const auto sc = nearest(out.lon(c), raw.lon0, raw.dlon, raw.width, "longitude");
      const bool land = raw.valid(sr, sc);
      out.mask[out.index(r, c)] = land ? 1 : 0;
      out.at(r, c) = land ? raw.at(sr, sc) : 0.0f;
    }
  }
  return out;
}

GridField normalize(const GridField& field) {
  GridField out = field;
  for (auto& v : out.values) {
    if (v < 0.0f) throw std::domain_error("normalize expects nonnegative values, got " + std::to_string(v));
    v = static_cast<float>(std::log1p(static_cast<double>(v)));
  }
  return out;
}

GridField denormalize(const GridField& field) {
  GridField out = field;
  for (auto& v : out.values) v = static_cast<float>(std::expm1(static_cast<double>(v)));
  return out;
}

GridField mask_elevation(const GridField& terrain) {
  terrain.validate();
  GridField out = terrain;
  for (std::size_t p = 0; p < out.size(); ++p) {
    if (out.values[p] < 0.0f) {
      out.values[p] = 0.0f;
      out.mask[p] = 0;
    }
  }
  return out;
}

GridField regrid_bilinear(const GridField& field, const GridSpec& target) {
  field.validate();
  GridField out = GridField::on(target, 0.0f, field.units);
  auto coord = [](double v, double v0, double dv, std::int64_t n) {
    return std::clamp((v - v0) / dv, 0.0, static_cast<double>(n - 1));
  };
  for (std::int64_t r = 0; r < target.height; ++r) {
    const double fy = coord(out.lat(r), field.lat0, field.dlat, field.height);
    const auto y0 = static_cast<std::int64_t>(std::floor(fy));
    const auto y1 = std::min(y0 + 1, field.height - 1);
    const double ty = fy - static_cast<double>(y0);
    for (std::int64_t c = 0; c < target.width; ++c) {
      const double fx = coord(out.lon(c), field.lon0, field.dlon, field.width);
      const auto x0 = static_cast<std::int64_t>(std::floor(fx));
      const auto x1 = std::min(x0 + 1, field.width - 1);
      const double tx = fx - static_cast<double>(x0);
      const double top = (1.0 - tx) * field.at(y0, x0) + tx * field.at(y0, x1);
      const double bottom = (1.0 - tx) * field.at(y1, x0) + tx * field.at(y1, x1);
      out.at(r, c) = static_cast<float>((1.0 - ty) * top + ty * bottom);
      out.mask[out.index(r, c)] = field.mask[field.index(std::llround(fy), std::llround(fx))];
    }
  }
  return out;
}

namespace {

GridField divergence(const GridField& t, auto dx_of_row, double dy) {
  t.validate();
  if (t.height < 2 || t.width < 2) throw std::invalid_argument("terrain divergence needs at least 2x2 points");
  GridField out = t;
  out.units = "1/m";
  for (std::int64_t r = 0; r < t.height; ++r) {
    const double dx = dx_of_row(r);
    for (std::int64_t c = 0; c < t.width; ++c) {
      const auto cl = std::max<std::int64_t>(c - 1, 0), cr = std::min(c + 1, t.width - 1);
      const auto ru = std::max<std::int64_t>(r - 1, 0), rd = std::min(r + 1, t.height - 1);
      const double gx = (static_cast<double>(t.at(r, cr)) - t.at(r, cl)) / (static_cast<double>(cr - cl) * dx);
      const double gy = (static_cast<double>(t.at(rd, c)) - t.at(ru, c)) / (static_cast<double>(rd - ru) * dy);
      out.at(r, c) = static_cast<float>(std::sqrt(gx * gx + gy * gy));
    }
  }
  return out;
}

}  // namespace

GridField terrain_divergence(const GridField& terrain) {
  const double dy = std::fabs(terrain.dlat) * kMetersPerDegree;
  return divergence(
      terrain,
      [&](std::int64_t r) {
        return std::fabs(terrain.dlon) * kMetersPerDegree * std::cos(terrain.lat(r) * std::numbers::pi / 180.0);
      },
      dy);
}

GridField terrain_divergence(const GridField& terrain, double dx_m, double dy_m) {
  if (!(dx_m > 0.0) || !(dy_m > 0.0)) throw std::invalid_argument("grid spacing must be positive");
  return divergence(terrain, [=](std::int64_t) { return dx_m; }, dy_m);
}

}  // namespace downscale::data
