#include "downscale/grid.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace downscale::data {

GridField GridField::filled(std::int64_t height, std::int64_t width, float value, std::string units) {
  if (height <= 0 || width <= 0) throw std::invalid_argument("grid extents must be positive");
  GridField f;
  f.height = height;
  f.width = width;
  f.values.assign(static_cast<std::size_t>(height * width), value);
  f.mask.assign(static_cast<std::size_t>(height * width), 1);
  f.units = std::move(units);
  return f;
}

GridField GridField::on(const GridSpec& spec, float value, std::string units) {
  GridField f = filled(spec.height, spec.width, value, std::move(units));
  f.lat0 = spec.lat0;
  f.lon0 = spec.lon0;
  f.dlat = spec.dlat;
  f.dlon = spec.dlon;
  return f;
}

void GridField::validate() const {
  if (height <= 0 || width <= 0) throw std::invalid_argument("grid extents must be positive");
  const auto n = static_cast<std::size_t>(height * width);
  if (values.size() != n) throw std::invalid_argument("grid values length does not match extents");
  if (mask.size() != n) throw std::invalid_argument("grid mask shape does not match values");
}

bool identical(const GridField& a, const GridField& b) {
  return a.height == b.height && a.width == b.width && a.lat0 == b.lat0 && a.lon0 == b.lon0 && a.dlat == b.dlat &&
         a.dlon == b.dlon && a.units == b.units && a.mask == b.mask && a.values.size() == b.values.size() &&
         std::memcmp(a.values.data(), b.values.data(), a.values.size() * sizeof(float)) == 0;
}

std::string encode_grid(const GridField& field) {
  field.validate();
  if (field.units.empty() || field.units.find_first_of(" \t\n") != std::string::npos) {
    throw std::invalid_argument("grid units must be a single non-empty token");
  }
  char header[256];
  std::snprintf(header, sizeof header, "GRD1 %lld %lld %.17g %.17g %.17g %.17g ", static_cast<long long>(field.height),
                static_cast<long long>(field.width), field.lat0, field.lon0, field.dlat, field.dlon);
  std::string out = header + field.units + "\n";
  const std::size_t n = field.values.size();
  out.reserve(out.size() + 5 * n);
  for (float v : field.values) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
  }
  for (auto m : field.mask) out.push_back(static_cast<char>(m != 0 ? 1 : 0));
  return out;
}

GridField decode_grid(const std::string& bytes) {
  const auto eol = bytes.find('\n');
  if (eol == std::string::npos) throw GridFormatError("GRD1 header not terminated (offset 0)");
  std::istringstream hs(bytes.substr(0, eol));
  std::string magic;
  GridField f;
  hs >> magic;
  if (magic != "GRD1") throw GridFormatError("bad magic at offset 0: expected GRD1");
  long long h = 0, w = 0;
  if (!(hs >> h >> w >> f.lat0 >> f.lon0 >> f.dlat >> f.dlon >> f.units)) {
    throw GridFormatError("malformed GRD1 header at offset 0");
  }
  if (h <= 0 || w <= 0) throw GridFormatError("GRD1 header declares non-positive extents");
  f.height = h;
  f.width = w;
  const auto n = static_cast<std::size_t>(h * w);
  std::size_t offset = eol + 1;
  const std::size_t expected = offset + 5 * n;
  if (bytes.size() < expected) {
    throw GridFormatError("GRD1 payload truncated at offset " + std::to_string(bytes.size()) + " (expected " +
                          std::to_string(expected) + " bytes)");
  }
  if (bytes.size() > expected) throw GridFormatError("trailing bytes after GRD1 payload at offset " + std::to_string(expected));
  f.values.resize(n);
  for (std::size_t i = 0; i < n; ++i, offset += 4) {
    std::uint32_t bits = 0;
    for (int k = 0; k < 4; ++k) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[offset + k])) << (8 * k);
    std::memcpy(&f.values[i], &bits, 4);
    if (!std::isfinite(f.values[i])) throw GridFormatError("non-finite value at offset " + std::to_string(offset));
  }
  f.mask.resize(n);
  for (std::size_t i = 0; i < n; ++i, ++offset) {
    const auto m = static_cast<unsigned char>(bytes[offset]);
    if (m > 1) throw GridFormatError("mask byte other than 0/1 at offset " + std::to_string(offset));
    f.mask[i] = m;
  }
  return f;
}

void save_grid(const GridField& field, const std::filesystem::path& path) {
  const auto bytes = encode_grid(field);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

GridField load_grid(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open grid " + path.string());
  const std::string bytes{std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
  try {
    return decode_grid(bytes);
  } catch (const GridFormatError& e) {
    throw GridFormatError(path.string() + ": " + e.what());
  }
}

}  // namespace downscale::data
