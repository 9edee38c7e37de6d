#pragma once

#include <span>

#include "downscale/grid.hpp"

namespace downscale::data {

/// Inclusive lat/lon box in degrees.
struct BoundingBox {
  double lat_min = 0.0;
  double lat_max = 0.0;
  double lon_min = 0.0;
  double lon_max = 0.0;
};

/// Box spanned by the point centers of a raster.
BoundingBox box_of(const GridSpec& spec);

/// Rows and columns whose centers fall inside the box. Throws when the box
/// reaches outside the raster or selects nothing.
GridField crop_to_box(const GridField& field, const BoundingBox& box);

/// Pointwise mean of a day's source fields.
GridField daily_mean(std::span<const GridField> fields);

/// Meters of water to mm/day, cropped to the box.
GridField preprocess_lr(const GridField& raw_m, const BoundingBox& box);
GridField preprocess_lr(std::span<const GridField> hourly_m, const BoundingBox& box);

/// Nearest-neighbour alignment onto the target grid; sea points (mask 0)
/// are zeroed and stay masked. Throws when the mask is missing or the target
/// reaches outside the raster.
GridField preprocess_hr(const GridField& raw, const GridSpec& target);

/// ln(1 + x); throws std::domain_error on negative values.
GridField normalize(const GridField& field);
/// exp(x) - 1.
GridField denormalize(const GridField& field);

/// Points below sea level are masked out and set to 0.
GridField mask_elevation(const GridField& terrain);

/// Bilinear resampling onto the target grid, clamped at the raster edges.
/// The mask follows the nearest source point.
GridField regrid_bilinear(const GridField& field, const GridSpec& target);

inline constexpr double kMetersPerDegree = 111195.0;

/// Slope magnitude sqrt(dz/dx^2 + dz/dy^2) with central differences inside
/// and one-sided differences on the border. Spacing comes from the
/// georeference (dx shrinks with cos(lat)) or is given in meters.
GridField terrain_divergence(const GridField& terrain);
GridField terrain_divergence(const GridField& terrain, double dx_m, double dy_m);

}  // namespace downscale::data
