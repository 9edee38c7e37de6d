#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "downscale/calendar.hpp"
#include "downscale/grid.hpp"

namespace downscale::data {

/// One day of biased low-resolution input and its high-resolution truth.
struct PairedSample {
  Date date;
  GridField x_lr;
  GridField y_hr;
};

struct Dataset {
  std::vector<PairedSample> samples;
  GridField elevation;  // meters on the high-resolution grid
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

/// Seeded random 80/10/10 partition of 0..n-1. Validation and test each get
/// floor(n/10); training takes the rest. Requires n >= 10.
SplitIndices split_indices(std::size_t n, std::uint64_t seed);

struct DatasetSplit {
  std::vector<PairedSample> train;
  std::vector<PairedSample> val;
  std::vector<PairedSample> test;
};

DatasetSplit split(const std::vector<PairedSample>& samples, std::uint64_t seed);

/// Directory layout: manifest.csv with "date,lr_path,hr_path" records
/// (paths relative to the directory), lr/ and hr/ GRD1 files per day and
/// elevation.grd.
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace downscale::data
