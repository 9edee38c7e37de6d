#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace downscale::data {

/// Extent and georeference of a regular lat/lon raster.
struct GridSpec {
  std::int64_t height = 0;
  std::int64_t width = 0;
  double lat0 = 0.0;
  double lon0 = 0.0;
  double dlat = 1.0;
  double dlon = 1.0;
};

/// Regular lat/lon raster. Row r, column c sits at
/// (lat0 + r * dlat, lon0 + c * dlon); values are row-major.
struct GridField {
  std::int64_t height = 0;
  std::int64_t width = 0;
  double lat0 = 0.0;
  double lon0 = 0.0;
  double dlat = 1.0;
  double dlon = 1.0;
  std::vector<float> values;
  std::vector<std::uint8_t> mask;  // 1 = land / valid
  std::string units = "mm/day";

  static GridField filled(std::int64_t height, std::int64_t width, float value, std::string units = "mm/day");
  /// Georeferenced raster with every point valid.
  static GridField on(const GridSpec& spec, float value, std::string units = "mm/day");

  GridSpec spec() const { return {height, width, lat0, lon0, dlat, dlon}; }

  std::size_t size() const { return values.size(); }
  std::size_t index(std::int64_t r, std::int64_t c) const { return static_cast<std::size_t>(r * width + c); }
  float& at(std::int64_t r, std::int64_t c) { return values[index(r, c)]; }
  float at(std::int64_t r, std::int64_t c) const { return values[index(r, c)]; }
  bool valid(std::int64_t r, std::int64_t c) const { return mask[index(r, c)] != 0; }
  double lat(std::int64_t r) const { return lat0 + static_cast<double>(r) * dlat; }
  double lon(std::int64_t c) const { return lon0 + static_cast<double>(c) * dlon; }

  /// Throws std::invalid_argument when extents and buffers disagree.
  void validate() const;
  bool same_extent(const GridField& other) const { return height == other.height && width == other.width; }
};

/// Bitwise equality of header, values and mask.
bool identical(const GridField& a, const GridField& b);

class GridFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// GRD1: "GRD1 <h> <w> <lat0> <lon0> <dlat> <dlon> <units>\n", then h*w
/// little-endian float32 values, then h*w mask bytes (0/1).
void save_grid(const GridField& field, const std::filesystem::path& path);
GridField load_grid(const std::filesystem::path& path);

std::string encode_grid(const GridField& field);
GridField decode_grid(const std::string& bytes);

}  // namespace downscale::data
