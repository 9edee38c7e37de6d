#include "downscale/dataset.hpp"

#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "downscale/random.hpp"

namespace downscale::data {

namespace fs = std::filesystem;

SplitIndices split_indices(std::size_t n, std::uint64_t seed) {
  if (n < 10) throw std::invalid_argument("splitting needs at least 10 samples, got " + std::to_string(n));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
  const std::size_t tenth = n / 10;
  const std::size_t n_train = n - 2 * tenth;
  SplitIndices s;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.val.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
               order.begin() + static_cast<std::ptrdiff_t>(n_train + tenth));
  s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + tenth), order.end());
  return s;
}

DatasetSplit split(const std::vector<PairedSample>& samples, std::uint64_t seed) {
  const auto idx = split_indices(samples.size(), seed);
  DatasetSplit out;
  for (auto i : idx.train) out.train.push_back(samples[i]);
  for (auto i : idx.val) out.val.push_back(samples[i]);
  for (auto i : idx.test) out.test.push_back(samples[i]);
  return out;
}

void save_dataset(const Dataset& dataset, const fs::path& dir) {
  fs::create_directories(dir / "lr");
  fs::create_directories(dir / "hr");
  save_grid(dataset.elevation, dir / "elevation.grd");
  std::ofstream manifest(dir / "manifest.csv", std::ios::binary);
  if (!manifest) throw std::runtime_error("cannot write " + (dir / "manifest.csv").string());
  for (const auto& s : dataset.samples) {
    const std::string day = format_date(s.date);
    const std::string lr = "lr/" + day + ".grd", hr = "hr/" + day + ".grd";
    save_grid(s.x_lr, dir / lr);
    save_grid(s.y_hr, dir / hr);
    manifest << day << ',' << lr << ',' << hr << '\n';
  }
  if (!manifest) throw std::runtime_error("failed writing " + (dir / "manifest.csv").string());
}

Dataset load_dataset(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.csv";
  std::ifstream manifest(manifest_path);
  if (!manifest) throw std::runtime_error("cannot open " + manifest_path.string());
  Dataset ds;
  ds.elevation = load_grid(dir / "elevation.grd");
  std::string line;
  int line_no = 0;
  while (std::getline(manifest, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string day, lr, hr, extra;
    if (!std::getline(ss, day, ',') || !std::getline(ss, lr, ',') || !std::getline(ss, hr, ',') ||
        std::getline(ss, extra)) {
      throw std::runtime_error(manifest_path.string() + ":" + std::to_string(line_no) +
                               ": expected date,lr_path,hr_path");
    }
    PairedSample s{parse_date(day), load_grid(dir / lr), load_grid(dir / hr)};
    if (!ds.samples.empty() && (!s.x_lr.same_extent(ds.samples.front().x_lr) ||
                                !s.y_hr.same_extent(ds.samples.front().y_hr))) {
      throw std::runtime_error(manifest_path.string() + ":" + std::to_string(line_no) + ": grid shape differs from day 1");
    }
    ds.samples.push_back(std::move(s));
  }
  if (ds.samples.empty()) throw std::runtime_error(manifest_path.string() + " lists no samples");
  return ds;
}

}  // namespace downscale::data
