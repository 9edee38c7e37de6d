#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "downscale/grid.hpp"
#include "downscale/metrics.hpp"

namespace downscale::cli {

/// Runs one command line (without the program name). Returns the process
/// exit status; failures print a single "downscale: error: ..." line to err.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// "key = value" lines; blank lines and lines starting with '#' are skipped.
std::vector<std::pair<std::string, std::string>> read_config_file(const std::filesystem::path& path);

/// Worker thread cap from DOWNSCALE_THREADS (default: hardware concurrency).
unsigned worker_threads();

/// Aggregate rows of one metrics CSV.
struct MethodSummary {
  std::string name;
  std::optional<double> mean[metrics::kMetricCount];
  std::optional<double> median[metrics::kMetricCount];
};

/// Reads the mean/median footer of a metrics CSV; throws on schema mismatch.
MethodSummary read_metrics_csv(const std::filesystem::path& path, std::string name);

/// One row per method, Avg. and Med. columns for MAE, RMSE, Corr., SSIM,
/// POD, FAR, TS. The best value per column is bold.
std::string compare_markdown(const std::vector<MethodSummary>& methods);
/// Same table as CSV, followed by a "best" row naming the winning method.
std::string compare_csv(const std::vector<MethodSummary>& methods);

/// 16-bit binary PGM with gray = round(value * levels_per_unit), clipped to
/// [0, 65535]; masked points are written as 0. A text sidecar
/// (<path>.txt) states the mapping.
void write_pgm(const data::GridField& field, const std::filesystem::path& path, double levels_per_unit = 1000.0);

}  // namespace downscale::cli
