#include "downscale/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "downscale/dataset.hpp"
#include "downscale/experiment.hpp"
#include "downscale/random.hpp"
#include "downscale/synthetic.hpp"

namespace downscale::cli {

namespace fs = std::filesystem;
using data::GridField;
using data::PairedSample;

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + p.string());
  return {std::istreambuf_iterator<char>(is), {}};
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + p.string() + " for writing");
  os << text;
  if (!os) throw std::runtime_error("failed writing " + p.string());
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

bool on_off(const std::string& v) { return v == "on"; }

// Resolved options of one command in a fixed order.
class Settings {
 public:
  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  template <class T>
  void set(const std::string& key, T value) {
    std::ostringstream os;
    os.precision(17);
    os << value;
    values_[key] = os.str();
  }

  std::string text() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
    return out;
  }
  std::uint64_t digest() const {
    const auto t = text();
    return fnv1a64(t.data(), t.size());
  }
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

class RunManifest {
 public:
  RunManifest(std::string command, const Settings& settings, std::uint64_t seed)
      : command_(std::move(command)), settings_(settings), seed_(seed), started_(utc_now()) {}

  void add(const fs::path& artifact) { artifacts_.push_back(artifact); }

  void write(const fs::path& dir) const {
    nlohmann::json j;
    j["command"] = command_;
    j["config_digest"] = hex64(settings_.digest());
    j["seed"] = seed_;
    j["started_utc"] = started_;
    j["finished_utc"] = utc_now();
    j["settings"] = settings_.values();
    nlohmann::json arts = nlohmann::json::array();
    for (const auto& a : artifacts_) {
      nlohmann::json entry;
      entry["path"] = a.lexically_relative(dir).generic_string();
      if (fs::is_regular_file(a)) {
        const auto bytes = read_file(a);
        entry["fnv1a64"] = hex64(fnv1a64(bytes.data(), bytes.size()));
      } else if (fs::is_directory(a)) {
        entry["fnv1a64"] = hex64(directory_digest(a));
      }
      arts.push_back(entry);
    }
    j["artifacts"] = arts;
    write_file(dir / "run_manifest.json", j.dump(2) + "\n");
  }

  static std::uint64_t directory_digest(const fs::path& dir) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
      if (e.is_regular_file() && e.path().filename() != "run_manifest.json") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    std::uint64_t h = fnv1a64(nullptr, 0);
    for (const auto& f : files) {
      const auto rel = f.lexically_relative(dir).generic_string();
      const auto bytes = read_file(f);
      h = fnv1a64(rel.data(), rel.size(), h);
      h = fnv1a64(bytes.data(), bytes.size(), h);
    }
    return h;
  }

 private:
  std::string command_;
  Settings settings_;
  std::uint64_t seed_;
  std::string started_;
  std::vector<fs::path> artifacts_;
};

void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn) {
  const auto threads = std::min<std::size_t>(worker_threads(), count);
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

std::vector<PairedSample> select_split(const data::Dataset& ds, const std::string& which, std::uint64_t seed) {
  if (which == "all") return ds.samples;
  const auto parts = data::split(ds.samples, seed);
  if (which == "train") return parts.train;
  if (which == "val") return parts.val;
  return parts.test;
}

// Scale recorded by `synth`, or the explicit flag.
int dataset_scale(const fs::path& dir, int flag) {
  int recorded = 0;
  if (fs::exists(dir / "synth.cfg")) {
    for (const auto& [k, v] : read_config_file(dir / "synth.cfg")) {
      if (k == "scale") recorded = std::stoi(v);
    }
  }
  if (flag > 0 && recorded > 0 && flag != recorded) {
    throw std::invalid_argument("--scale " + std::to_string(flag) + " does not match the dataset's scale " +
                                std::to_string(recorded));
  }
  if (flag > 0) return flag;
  if (recorded > 0) return recorded;
  throw std::invalid_argument("dataset scale unknown; pass --scale");
}

void check_scale_fits(const PairedSample& s, int scale) {
  if (s.y_hr.height > s.x_lr.height * scale || s.y_hr.width > s.x_lr.width * scale ||
      s.y_hr.height <= s.x_lr.height * (scale - 1) || s.y_hr.width <= s.x_lr.width * (scale - 1)) {
    throw std::invalid_argument("scale " + std::to_string(scale) + " does not relate the dataset grids " +
                                std::to_string(s.x_lr.height) + "x" + std::to_string(s.x_lr.width) + " and " +
                                std::to_string(s.y_hr.height) + "x" + std::to_string(s.y_hr.width));
  }
}

void write_predictions(const fs::path& dir, const std::vector<PairedSample>& days, const std::vector<GridField>& preds,
                       bool pgm, RunManifest& manifest) {
  fs::create_directories(dir / "pred");
  for (std::size_t i = 0; i < days.size(); ++i) {
    data::save_grid(preds[i], dir / "pred" / (format_date(days[i].date) + ".grd"));
  }
  manifest.add(dir / "pred");
  if (!pgm) return;
  fs::create_directories(dir / "rasters");
  for (std::size_t i = 0; i < days.size(); ++i) {
    GridField err = preds[i];
    err.mask = days[i].y_hr.mask;
    for (std::size_t p = 0; p < err.size(); ++p) err.values[p] = std::fabs(preds[i].values[p] - days[i].y_hr.values[p]);
    write_pgm(err, dir / "rasters" / (format_date(days[i].date) + "_abs_error.pgm"));
  }
  manifest.add(dir / "rasters");
}

metrics::MetricsReport evaluate_parallel(const std::vector<GridField>& preds, const std::vector<PairedSample>& days) {
  std::vector<metrics::DayMetrics> rows(days.size());
  parallel_for(days.size(), [&](std::size_t i) {
    rows[i] = metrics::evaluate_day(format_date(days[i].date), preds[i], days[i].y_hr, days[i].y_hr.mask);
  });
  metrics::MetricsReport report;
  for (auto& r : rows) report.add(std::move(r));
  return report;
}

void print_summary(std::ostream& out, const metrics::MetricsReport& report) {
  for (int m = 0; m < metrics::kMetricCount; ++m) {
    const auto a = report.aggregate(m);
    out << metrics::kMetricNames[m] << " avg=";
    if (a.mean) out << *a.mean; else out << "NA";
    out << " med=";
    if (a.median) out << *a.median; else out << "NA";
    if (a.undefined) out << " undefined=" << a.undefined;
    out << "\n";
  }
}

// Injects "--key=value" for every config entry right after the subcommand
// token so later explicit flags take precedence.
std::vector<std::string> expand_config(std::vector<std::string> args) {
  std::vector<std::string> rest;
  std::optional<fs::path> config;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) throw CLI::ArgumentMismatch("--config needs a file");
      config = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      config = args[i].substr(9);
    } else {
      rest.push_back(args[i]);
    }
  }
  if (!config) return rest;
  std::vector<std::string> injected;
  for (const auto& [k, v] : read_config_file(*config)) injected.push_back("--" + k + "=" + v);
  auto pos = std::find_if(rest.begin(), rest.end(), [](const std::string& a) { return a.empty() || a[0] != '-'; });
  if (pos != rest.end()) ++pos;
  rest.insert(pos, injected.begin(), injected.end());
  return rest;
}

// ---- commands ----

struct SynthArgs {
  std::string out;
  data::SynthConfig cfg;
  std::string all_land = "off";
};

std::string synth_text(const data::SynthConfig& c) {
  Settings s;
  s.set("seed", c.seed);
  s.set("days", c.n_days);
  s.set("start_date", c.start_date);
  s.set("lr_height", c.lr_height);
  s.set("lr_width", c.lr_width);
  s.set("hr_height", c.hr_height);
  s.set("hr_width", c.hr_width);
  s.set("scale", c.scale);
  s.set("lat0", c.lat0);
  s.set("lon0", c.lon0);
  s.set("lr_spacing", c.lr_spacing);
  s.set("cells_min", c.cells_min);
  s.set("cells_max", c.cells_max);
  s.set("cell_sigma_min", c.cell_sigma_min);
  s.set("cell_sigma_max", c.cell_sigma_max);
  s.set("cell_amplitude", c.cell_amplitude);
  s.set("dry_prob", c.dry_probability);
  s.set("gain", c.orographic_gain);
  s.set("peak_elevation", c.peak_elevation);
  s.set("terrain_roughness", c.terrain_roughness);
  s.set("terrain_wavelength", c.terrain_wavelength);
  s.set("all_land", c.all_land ? "on" : "off");
  s.set("wet_bias", c.wet_bias);
  s.set("shift_rows", c.shift_rows);
  s.set("shift_cols", c.shift_cols);
  s.set("smoothing", c.smoothing_radius);
  return s.text();
}

void cmd_synth(SynthArgs& a, std::ostream& out) {
  auto& c = a.cfg;
  c.all_land = on_off(a.all_land);
  if (c.hr_height == 0 || c.hr_width == 0) std::tie(c.hr_height, c.hr_width) = data::default_hr_shape(c.scale);
  const data::Dataset ds = data::generate_synthetic(c);
  const fs::path dir = a.out;
  data::save_dataset(ds, dir);
  write_file(dir / "synth.cfg", synth_text(c));
  Settings s;
  for (const auto& [k, v] : read_config_file(dir / "synth.cfg")) s.set(k, v);
  RunManifest manifest("synth", s, c.seed);
  manifest.add(dir / "manifest.csv");
  manifest.add(dir / "synth.cfg");
  manifest.add(dir / "elevation.grd");
  manifest.add(dir / "lr");
  manifest.add(dir / "hr");
  manifest.write(dir);
  out << "wrote " << ds.samples.size() << " days to " << dir.string() << " (lr " << c.lr_height << "x" << c.lr_width
      << ", hr " << c.hr_height << "x" << c.hr_width << ")\n";
}

struct TrainArgs {
  std::string data_dir, out;
  int scale = 0;
  int layers = 32;
  int filters = 64;
  std::string upscale = "shuffle";
  std::string topo = "on";
  train::TrainConfig train;
  std::uint64_t model_seed = 1;
  std::uint64_t split_seed = 1;
  bool quiet = false;
};

void cmd_train(TrainArgs& a, std::ostream& out) {
  const data::Dataset ds = data::load_dataset(a.data_dir);
  const int scale = dataset_scale(a.data_dir, a.scale);
  check_scale_fits(ds.samples.front(), scale);
  model::ModelConfig mc;
  mc.scale = scale;
  mc.backbone_layers = a.layers;
  mc.filters = a.filters;
  mc.upscale = nn::parse_upscale_method(a.upscale);
  mc.use_topography = on_off(a.topo);
  mc = experiment::fit_to_data(mc, ds.samples.front());
  a.train.validate();

  const auto parts = data::split(ds.samples, a.split_seed);
  const auto train_set = experiment::to_tensors(parts.train);
  const auto val_set = experiment::to_tensors(parts.val);
  const Tensor elevation = experiment::elevation_input(ds.elevation);
  auto model = model::AttentionSRModel::build(mc, a.model_seed);
  out << "model: " << model.rab_count() << " RABs, " << model.parameter_count() << " parameters; train "
      << parts.train.size() << " / val " << parts.val.size() << " / test " << parts.test.size() << " days\n";

  train::TrainHooks hooks;
  if (!a.quiet) {
    hooks.on_epoch = [&](const train::EpochRecord& e) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "epoch %d train %.6f val %.6f\n", e.epoch, e.train_loss, e.val_loss);
      out << buf << std::flush;
    };
  }
  const auto history = train::train(model, train_set, val_set, elevation, a.train, hooks);

  const fs::path dir = a.out;
  fs::create_directories(dir);
  model::save_checkpoint(model, dir / "model.ckpt");
  history.write_csv(dir / "history.csv");
  Settings s;
  s.set("data", a.data_dir);
  s.set("scale", scale);
  s.set("layers", a.layers);
  s.set("filters", a.filters);
  s.set("upscale", a.upscale);
  s.set("topo", a.topo);
  s.set("epochs", a.train.epochs_max);
  s.set("batch", a.train.batch_size);
  s.set("patience", a.train.patience);
  s.set("lr", a.train.learning_rate);
  s.set("seed", a.train.seed);
  s.set("model_seed", a.model_seed);
  s.set("split_seed", a.split_seed);
  RunManifest manifest("train", s, a.train.seed);
  manifest.add(dir / "model.ckpt");
  manifest.add(dir / "history.csv");
  manifest.write(dir);
  out << "best epoch " << history.best_epoch << " of " << history.epochs.size() << ", val mse " << history.best_val
      << (history.early_stopped ? " (early stop)" : "") << "\n";
}

struct EvalArgs {
  std::string data_dir, out, checkpoint;
  std::string method = "model";
  std::string split = "test";
  std::uint64_t split_seed = 1;
  int scale = 0;
  std::string pgm = "off";
  int batch = 16;
};

void cmd_eval(EvalArgs& a, std::ostream& out) {
  const data::Dataset ds = data::load_dataset(a.data_dir);
  const auto days = select_split(ds, a.split, a.split_seed);
  std::vector<GridField> preds(days.size());
  Settings s;
  if (a.method == "model") {
    if (a.checkpoint.empty()) throw std::invalid_argument("--checkpoint is required for --method model");
    const auto model = model::load_checkpoint(a.checkpoint);
    const auto& mc = model.config();
    const auto& first = days.front();
    if (mc.input_height != first.x_lr.height || mc.input_width != first.x_lr.width ||
        mc.target_height != first.y_hr.height || mc.target_width != first.y_hr.width) {
      throw std::invalid_argument("checkpoint expects " + std::to_string(mc.input_height) + "x" +
                                  std::to_string(mc.input_width) + " -> " + std::to_string(mc.target_height) + "x" +
                                  std::to_string(mc.target_width) + " but the dataset is " +
                                  std::to_string(first.x_lr.height) + "x" + std::to_string(first.x_lr.width) + " -> " +
                                  std::to_string(first.y_hr.height) + "x" + std::to_string(first.y_hr.width));
    }
    if (a.scale > 0 && a.scale != mc.scale) throw std::invalid_argument("--scale does not match the checkpoint");
    const Tensor elevation = experiment::elevation_input(ds.elevation);
    const auto batch = static_cast<std::size_t>(std::max(a.batch, 1));
    const std::size_t chunks = (days.size() + batch - 1) / batch;
    parallel_for(chunks, [&](std::size_t k) {
      const std::span<const PairedSample> all(days);
      const auto part = all.subspan(k * batch, std::min(batch, days.size() - k * batch));
      auto p = experiment::predict(model, part, elevation, static_cast<int>(batch));
      std::move(p.begin(), p.end(), preds.begin() + static_cast<std::ptrdiff_t>(k * batch));
    });
    s.set("checkpoint", a.checkpoint);
  } else if (a.method == "truth") {
    for (std::size_t i = 0; i < days.size(); ++i) preds[i] = days[i].y_hr;
  } else {
    const int scale = dataset_scale(a.data_dir, a.scale);
    check_scale_fits(days.front(), scale);
    const auto method = nn::parse_upscale_method(a.method);
    parallel_for(days.size(), [&](std::size_t i) {
      preds[i] = experiment::upscale(days[i].x_lr, days[i].y_hr, scale, method);
    });
    s.set("scale", scale);
  }
  const auto report = evaluate_parallel(preds, days);
  const fs::path dir = a.out;
  fs::create_directories(dir);
  report.write_csv(dir / "metrics.csv");
  s.set("data", a.data_dir);
  s.set("method", a.method);
  s.set("split", a.split);
  s.set("split_seed", a.split_seed);
  s.set("pgm", a.pgm);
  RunManifest manifest("eval", s, a.split_seed);
  manifest.add(dir / "metrics.csv");
  write_predictions(dir, days, preds, on_off(a.pgm), manifest);
  manifest.write(dir);
  out << a.method << " on " << days.size() << " " << a.split << " days\n";
  print_summary(out, report);
}

struct BaselineArgs {
  std::string method;
  std::string data_dir, out;
  std::string split = "test";
  std::uint64_t split_seed = 1;
  int scale = 0;
  int window = 15;
  std::string pgm = "off";
};

void cmd_baseline(BaselineArgs& a, std::ostream& out) {
  const data::Dataset ds = data::load_dataset(a.data_dir);
  const int scale = dataset_scale(a.data_dir, a.scale);
  check_scale_fits(ds.samples.front(), scale);
  const auto parts = data::split(ds.samples, a.split_seed);
  const auto days = select_split(ds, a.split, a.split_seed);
  const auto clim = experiment::fit_climatology(parts.train, scale, a.window);
  std::vector<GridField> preds(days.size());
  parallel_for(days.size(), [&](std::size_t i) {
    preds[i] = a.method == "qm" ? experiment::qm_baseline(days[i], clim) : experiment::bcsd_baseline(days[i], clim);
  });
  const auto report = evaluate_parallel(preds, days);
  const fs::path dir = a.out;
  fs::create_directories(dir);
  report.write_csv(dir / "metrics.csv");
  Settings s;
  s.set("data", a.data_dir);
  s.set("method", a.method);
  s.set("split", a.split);
  s.set("split_seed", a.split_seed);
  s.set("scale", scale);
  s.set("window", a.window);
  s.set("pgm", a.pgm);
  RunManifest manifest("baseline", s, a.split_seed);
  manifest.add(dir / "metrics.csv");
  write_predictions(dir, days, preds, on_off(a.pgm), manifest);
  manifest.write(dir);
  out << a.method << " on " << days.size() << " " << a.split << " days (climatology from " << parts.train.size()
      << " training days)\n";
  print_summary(out, report);
}

struct CompareArgs {
  std::vector<std::string> inputs;
  std::string out, csv;
};

void cmd_compare(CompareArgs& a, std::ostream& out) {
  std::vector<MethodSummary> methods;
  for (const auto& in : a.inputs) {
    const auto eq = in.find('=');
    if (eq != std::string::npos) {
      methods.push_back(read_metrics_csv(in.substr(eq + 1), in.substr(0, eq)));
    } else {
      fs::path p(in);
      const std::string name = p.filename() == "metrics.csv" && p.has_parent_path() ? p.parent_path().filename().string()
                                                                                     : p.stem().string();
      methods.push_back(read_metrics_csv(p, name));
    }
  }
  const std::string md = compare_markdown(methods);
  if (!a.out.empty()) write_file(a.out, md);
  if (!a.csv.empty()) write_file(a.csv, compare_csv(methods));
  out << md;
}

}  // namespace

std::vector<std::pair<std::string, std::string>> read_config_file(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config " + path.string());
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  int n = 0;
  while (std::getline(is, line)) {
    ++n;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos || trim(line.substr(0, eq)).empty()) {
      throw std::runtime_error(path.string() + ":" + std::to_string(n) + ": expected key=value");
    }
    out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return out;
}

unsigned worker_threads() {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("DOWNSCALE_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1) n = std::min<unsigned>(n, static_cast<unsigned>(v));
  }
  return n;
}

MethodSummary read_metrics_csv(const fs::path& path, std::string name) {
  std::istringstream is(read_file(path));
  std::string line;
  std::string expected = "date";
  for (const char* m : metrics::kMetricNames) expected += std::string(",") + m;
  if (!std::getline(is, line) || trim(line) != expected) {
    throw std::runtime_error(path.string() + ": header is not '" + expected + "'");
  }
  MethodSummary s;
  s.name = std::move(name);
  bool have_mean = false, have_median = false;
  while (std::getline(is, line)) {
    line = trim(line);
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != metrics::kMetricCount + 1) {
      throw std::runtime_error(path.string() + ": row '" + line + "' has " + std::to_string(cells.size()) +
                               " fields, expected " + std::to_string(metrics::kMetricCount + 1));
    }
    auto* target = cells[0] == "mean" ? s.mean : cells[0] == "median" ? s.median : nullptr;
    if (!target) continue;
    (cells[0] == "mean" ? have_mean : have_median) = true;
    for (int m = 0; m < metrics::kMetricCount; ++m) {
      const auto& c = cells[static_cast<std::size_t>(m) + 1];
      if (c == "NA") continue;
      try {
        target[m] = std::stod(c);
      } catch (const std::exception&) {
        throw std::runtime_error(path.string() + ": '" + c + "' is not a number");
      }
    }
  }
  if (!have_mean || !have_median) throw std::runtime_error(path.string() + ": missing mean/median rows");
  return s;
}

namespace {

constexpr const char* kColumnTitles[metrics::kMetricCount] = {"MAE", "RMSE", "Corr.", "SSIM", "POD", "FAR", "TS"};
constexpr bool kLowerIsBetter[metrics::kMetricCount] = {true, true, false, false, false, true, false};

// Index of the best method per column (2 columns per metric), or -1.
std::vector<int> best_per_column(const std::vector<MethodSummary>& methods) {
  std::vector<int> best;
  for (int m = 0; m < metrics::kMetricCount; ++m)
    for (int which = 0; which < 2; ++which) {
      int arg = -1;
      for (std::size_t i = 0; i < methods.size(); ++i) {
        const auto& v = which == 0 ? methods[i].mean[m] : methods[i].median[m];
        if (!v) continue;
        const auto& cur = arg < 0 ? v : (which == 0 ? methods[arg].mean[m] : methods[arg].median[m]);
        if (arg < 0 || (kLowerIsBetter[m] ? *v < *cur : *v > *cur)) arg = static_cast<int>(i);
      }
      best.push_back(arg);
    }
  return best;
}

std::string num(const std::optional<double>& v) {
  if (!v) return "NA";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", *v);
  return buf;
}

}  // namespace

std::string compare_markdown(const std::vector<MethodSummary>& methods) {
  if (methods.empty()) throw std::invalid_argument("nothing to compare");
  const auto best = best_per_column(methods);
  std::string out = "| Method |";
  for (const char* t : kColumnTitles) out += std::string(" ") + t + " Avg. | " + t + " Med. |";
  out += "\n|---|";
  for (int i = 0; i < 2 * metrics::kMetricCount; ++i) out += "---:|";
  out += "\n";
  for (std::size_t i = 0; i < methods.size(); ++i) {
    out += "| " + methods[i].name + " |";
    for (int m = 0; m < metrics::kMetricCount; ++m)
      for (int which = 0; which < 2; ++which) {
        const std::string v = num(which == 0 ? methods[i].mean[m] : methods[i].median[m]);
        const bool bold = best[static_cast<std::size_t>(2 * m + which)] == static_cast<int>(i);
        out += " " + (bold ? "**" + v + "**" : v) + " |";
      }
    out += "\n";
  }
  return out;
}

std::string compare_csv(const std::vector<MethodSummary>& methods) {
  if (methods.empty()) throw std::invalid_argument("nothing to compare");
  const auto best = best_per_column(methods);
  std::string out = "method";
  for (const char* m : metrics::kMetricNames) out += std::string(",") + m + "_avg," + m + "_med";
  out += "\n";
  for (const auto& s : methods) {
    out += s.name;
    for (int m = 0; m < metrics::kMetricCount; ++m) out += "," + num(s.mean[m]) + "," + num(s.median[m]);
    out += "\n";
  }
  out += "best";
  for (int b : best) out += "," + (b < 0 ? std::string("NA") : methods[static_cast<std::size_t>(b)].name);
  out += "\n";
  return out;
}

void write_pgm(const GridField& field, const fs::path& path, double levels_per_unit) {
  field.validate();
  std::string bytes = "P5\n" + std::to_string(field.width) + " " + std::to_string(field.height) + "\n65535\n";
  for (std::size_t i = 0; i < field.size(); ++i) {
    const double g = field.mask[i] ? std::round(std::clamp(field.values[i] * levels_per_unit, 0.0, 65535.0)) : 0.0;
    const auto v = static_cast<std::uint16_t>(g);
    bytes.push_back(static_cast<char>(v >> 8));
    bytes.push_back(static_cast<char>(v & 0xff));
  }
  write_file(path, bytes);
  char buf[200];
  std::snprintf(buf, sizeof buf,
                "gray = round(value * %g), clipped to [0, 65535]; %g %s per gray level; masked points are 0; "
                "row 0 is the first grid row (lat0)\n",
                levels_per_unit, 1.0 / levels_per_unit, field.units.c_str());
  write_file(path.string() + ".txt", buf);
}

int run(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Attention-based precipitation downscaling toolkit", "downscale"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);
  app.add_option("--config", "key=value file mirroring the command's flags");

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "generate a synthetic heterogeneous dataset");
  synth->add_option("--out", sa.out, "output dataset directory")->required();
  synth->add_option("--days", sa.cfg.n_days, "number of days")->capture_default_str();
  synth->add_option("--seed", sa.cfg.seed, "generator seed")->capture_default_str();
  synth->add_option("--start-date", sa.cfg.start_date, "first date (YYYY-MM-DD)")->capture_default_str();
  synth->add_option("--scale", sa.cfg.scale, "resolution ratio")->check(CLI::IsMember({2, 4, 5, 8}))->capture_default_str();
  synth->add_option("--lr-height", sa.cfg.lr_height)->capture_default_str();
  synth->add_option("--lr-width", sa.cfg.lr_width)->capture_default_str();
  sa.cfg.hr_height = sa.cfg.hr_width = 0;
  synth->add_option("--hr-height", sa.cfg.hr_height, "default: proportional to 41 rows at scale 5");
  synth->add_option("--hr-width", sa.cfg.hr_width, "default: proportional to 66 columns at scale 5");
  synth->add_option("--cells-min", sa.cfg.cells_min)->capture_default_str();
  synth->add_option("--cells-max", sa.cfg.cells_max)->capture_default_str();
  synth->add_option("--cell-amplitude", sa.cfg.cell_amplitude, "mean cell peak, mm/day")->capture_default_str();
  synth->add_option("--dry-prob", sa.cfg.dry_probability, "probability of an all-dry day")->capture_default_str();
  synth->add_option("--gain", sa.cfg.orographic_gain, "orographic gain")->capture_default_str();
  synth->add_option("--wet-bias", sa.cfg.wet_bias, "multiplicative bias of the input")->capture_default_str();
  synth->add_option("--shift-rows", sa.cfg.shift_rows)->capture_default_str();
  synth->add_option("--shift-cols", sa.cfg.shift_cols)->capture_default_str();
  synth->add_option("--smoothing", sa.cfg.smoothing_radius, "box smoothing radius")->capture_default_str();
  synth->add_option("--all-land", sa.all_land)->check(CLI::IsMember({"on", "off"}))->capture_default_str();

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "train the attention downscaling model");
  train_cmd->add_option("--data", ta.data_dir, "dataset directory")->required();
  train_cmd->add_option("--out", ta.out, "output run directory")->required();
  train_cmd->add_option("--scale", ta.scale, "resolution ratio (default: from the dataset)")
      ->check(CLI::IsMember({2, 4, 5, 8}));
  train_cmd->add_option("--layers", ta.layers, "backbone convolution layers")
      ->check(CLI::IsMember({16, 32, 48}))
      ->capture_default_str();
  train_cmd->add_option("--filters", ta.filters, "feature maps per layer")->check(CLI::PositiveNumber)->capture_default_str();
  train_cmd->add_option("--upscale", ta.upscale)
      ->check(CLI::IsMember({"bilinear", "bicubic", "deconv", "shuffle"}))
      ->capture_default_str();
  train_cmd->add_option("--topo", ta.topo, "concatenate elevation")->check(CLI::IsMember({"on", "off"}))->capture_default_str();
  train_cmd->add_option("--epochs", ta.train.epochs_max)->capture_default_str();
  train_cmd->add_option("--batch", ta.train.batch_size)->capture_default_str();
  train_cmd->add_option("--patience", ta.train.patience)->capture_default_str();
  train_cmd->add_option("--lr", ta.train.learning_rate, "Adam learning rate")->capture_default_str();
  train_cmd->add_option("--seed", ta.train.seed, "shuffling seed")->capture_default_str();
  train_cmd->add_option("--model-seed", ta.model_seed, "initialization seed")->capture_default_str();
  train_cmd->add_option("--split-seed", ta.split_seed)->capture_default_str();
  train_cmd->add_flag("--quiet", ta.quiet, "no per-epoch lines");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint or an interpolation method");
  eval->add_option("--data", ea.data_dir)->required();
  eval->add_option("--out", ea.out)->required();
  eval->add_option("--checkpoint", ea.checkpoint);
  eval->add_option("--method", ea.method)
      ->check(CLI::IsMember({"model", "bilinear", "bicubic", "truth"}))
      ->capture_default_str();
  eval->add_option("--split", ea.split)->check(CLI::IsMember({"train", "val", "test", "all"}))->capture_default_str();
  eval->add_option("--split-seed", ea.split_seed)->capture_default_str();
  eval->add_option("--scale", ea.scale)->check(CLI::IsMember({2, 4, 5, 8}));
  eval->add_option("--pgm", ea.pgm, "write |pred - obs| rasters")->check(CLI::IsMember({"on", "off"}))->capture_default_str();
  eval->add_option("--batch", ea.batch)->check(CLI::PositiveNumber)->capture_default_str();

  BaselineArgs ba;
  auto* baseline = app.add_subcommand("baseline", "statistical downscaling baselines");
  baseline->add_option("method", ba.method, "qm or bcsd")->required()->check(CLI::IsMember({"qm", "bcsd"}));
  baseline->add_option("--data", ba.data_dir)->required();
  baseline->add_option("--out", ba.out)->required();
  baseline->add_option("--split", ba.split)->check(CLI::IsMember({"train", "val", "test", "all"}))->capture_default_str();
  baseline->add_option("--split-seed", ba.split_seed)->capture_default_str();
  baseline->add_option("--scale", ba.scale)->check(CLI::IsMember({2, 4, 5, 8}));
  baseline->add_option("--window", ba.window, "calendar half width in days")->check(CLI::NonNegativeNumber)->capture_default_str();
  baseline->add_option("--pgm", ba.pgm)->check(CLI::IsMember({"on", "off"}))->capture_default_str();

  CompareArgs ca;
  auto* compare = app.add_subcommand("compare", "tabulate metrics CSVs");
  compare->add_option("inputs", ca.inputs, "metrics CSVs, optionally name=path")->required();
  compare->add_option("--out", ca.out, "markdown output file");
  compare->add_option("--csv", ca.csv, "CSV output file");

  std::vector<std::string> args;
  try {
    args = expand_config(raw_args);
  } catch (const std::exception& e) {
    err << "downscale: error: " << e.what() << "\n";
    return 2;
  }
  std::vector<char*> argv;
  std::string prog = "downscale";
  argv.push_back(prog.data());
  for (auto& a : args) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    err << "downscale: error: " << e.what() << "\n";
    return e.get_exit_code() != 0 ? e.get_exit_code() : 2;
  }

  try {
    if (synth->parsed()) cmd_synth(sa, out);
    else if (train_cmd->parsed()) cmd_train(ta, out);
    else if (eval->parsed()) cmd_eval(ea, out);
    else if (baseline->parsed()) cmd_baseline(ba, out);
    else if (compare->parsed()) cmd_compare(ca, out);
  } catch (const std::exception& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << "downscale: error: " << msg << "\n";
    return 1;
  }
  return 0;
}

}  // namespace downscale::cli
