#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "downscale/cli.hpp"
#include "downscale/dataset.hpp"
#include "downscale/model.hpp"

using namespace downscale;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("downscale_cli_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

nlohmann::json manifest(const fs::path& dir) { return nlohmann::json::parse(read_bytes(dir / "run_manifest.json")); }

std::size_t line_count(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

std::string artifact_digest(const nlohmann::json& m, const std::string& path) {
  for (const auto& a : m["artifacts"]) {
    if (a["path"] == path) return a["fnv1a64"];
  }
  return "";
}

void write_csv(const fs::path& p, double mae, double ts) {
  std::ofstream os(p);
  os << "date,mae,rmse,pearson,ssim,pod,far,ts\n";
  os << "2000-01-01," << mae << "," << mae * 2 << ",0.5,0.5,0.5,0.5," << ts << "\n";
  os << "mean," << mae << "," << mae * 2 << ",0.5,0.5,0.5,0.5," << ts << "\n";
  os << "median," << mae << "," << mae * 2 << ",0.5,0.5,NA,0.5," << ts << "\n";
}

}  // namespace

TEST(Cli, SynthIsDeterministic) {
  const auto dir = scratch("synth");
  ASSERT_EQ(run({"synth", "--out", (dir / "a").string(), "--days", "100", "--seed", "7"}).code, 0);
  ASSERT_EQ(run({"synth", "--out", (dir / "b").string(), "--days", "100", "--seed", "7"}).code, 0);
  const auto ma = manifest(dir / "a"), mb = manifest(dir / "b");
  for (const char* art : {"lr", "hr", "manifest.csv", "elevation.grd", "synth.cfg"}) {
    EXPECT_FALSE(artifact_digest(ma, art).empty()) << art;
    EXPECT_EQ(artifact_digest(ma, art), artifact_digest(mb, art)) << art;
  }
  EXPECT_EQ(ma["config_digest"], mb["config_digest"]);
  EXPECT_EQ(ma["command"], "synth");
  EXPECT_EQ(ma["seed"], 7);
  EXPECT_EQ(line_count(read_bytes(dir / "a" / "manifest.csv")), 100u);
  fs::remove_all(dir);
}

TEST(Cli, SynthDefaultShapesInHeaders) {
  const auto dir = scratch("shapes");
  ASSERT_EQ(run({"synth", "--out", dir.string(), "--days", "2"}).code, 0);
  EXPECT_EQ(read_bytes(dir / "lr" / "2000-01-01.grd").substr(0, 10), "GRD1 9 14 ");
  EXPECT_EQ(read_bytes(dir / "hr" / "2000-01-01.grd").substr(0, 11), "GRD1 41 66 ");
  fs::remove_all(dir);
}

TEST(Cli, SynthAllDry) {
  const auto dir = scratch("dry");
  ASSERT_EQ(run({"synth", "--out", dir.string(), "--days", "5", "--dry-prob", "1"}).code, 0);
  const auto ds = data::load_dataset(dir);
  for (const auto& s : ds.samples) {
    for (float v : s.x_lr.values) EXPECT_EQ(v, 0.0f);
    for (float v : s.y_hr.values) EXPECT_EQ(v, 0.0f);
  }
  fs::remove_all(dir);
}

TEST(Cli, ConfigFileMirrorsFlags) {
  const auto dir = scratch("config");
  std::ofstream(dir / "synth.conf") << "# synthetic set\ndays = 12\nseed=3\n\nscale = 2\n";
  ASSERT_EQ(run({"synth", "--config", (dir / "synth.conf").string(), "--out", (dir / "ds").string(), "--seed", "4"}).code, 0);
  const auto m = manifest(dir / "ds");
  EXPECT_EQ(m["settings"]["days"], "12");
  EXPECT_EQ(m["settings"]["scale"], "2");
  EXPECT_EQ(m["seed"], 4);
  EXPECT_EQ(read_bytes(dir / "ds" / "hr" / "2000-01-01.grd").substr(0, 11), "GRD1 16 26 ");
  std::ofstream(dir / "bad.conf") << "nonsense line\n";
  const auto r = run({"synth", "--config", (dir / "bad.conf").string(), "--out", (dir / "x").string()});
  EXPECT_NE(r.code, 0);
  std::ofstream(dir / "unknown.conf") << "colour = blue\n";
  EXPECT_NE(run({"synth", "--config", (dir / "unknown.conf").string(), "--out", (dir / "x").string()}).code, 0);
  fs::remove_all(dir);
}

TEST(Cli, FailuresAreOneLine) {
  for (const auto& args : std::vector<std::vector<std::string>>{
           {},
           {"frobnicate"},
           {"train", "--data", "/nonexistent", "--out", "/tmp/x", "--scale", "3"},
           {"train", "--data", "/nonexistent", "--out", "/tmp/x", "--layers", "20"},
           {"train", "--data", "/nonexistent", "--out", "/tmp/x", "--upscale", "nearest"},
           {"eval", "--data", "/nonexistent", "--out", "/tmp/x"},
           {"baseline", "median", "--data", "/nonexistent", "--out", "/tmp/x"},
           {"compare", "/nonexistent.csv"},
       }) {
    const auto r = run(args);
    EXPECT_NE(r.code, 0);
    EXPECT_EQ(line_count(r.err), 1u) << r.err;
    EXPECT_EQ(r.err.rfind("downscale: error: ", 0), 0u) << r.err;
  }
}

TEST(Cli, HelpExitsZero) {
  const auto r = run({"train", "--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("--upscale"), std::string::npos);
  EXPECT_NE(r.out.find("shuffle"), std::string::npos);
}

class CliPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = scratch("pipeline");
    ASSERT_EQ(run({"synth", "--out", (root_ / "ds").string(), "--days", "40", "--seed", "5", "--scale", "2"}).code, 0);
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }
  static fs::path root_;
};

fs::path CliPipeline::root_;

TEST_F(CliPipeline, TrainDefaultsAndTopologyFlag) {
  const auto ds = (root_ / "ds").string();
  const auto r = run({"train", "--data", ds, "--out", (root_ / "on").string(), "--layers", "16", "--filters", "4",
                      "--epochs", "1", "--patience", "0", "--batch", "16", "--quiet"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("8 RABs"), std::string::npos) << r.out;
  const auto on = model::load_checkpoint(root_ / "on" / "model.ckpt");
  EXPECT_EQ(on.config().upscale, nn::UpscaleMethod::kPixelShuffle);
  EXPECT_TRUE(on.config().use_topography);
  EXPECT_EQ(on.config().scale, 2);
  EXPECT_EQ(line_count(read_bytes(root_ / "on" / "history.csv")), 2u);
  EXPECT_EQ(manifest(root_ / "on")["command"], "train");

  ASSERT_EQ(run({"train", "--data", ds, "--out", (root_ / "off").string(), "--layers", "16", "--filters", "4",
                 "--epochs", "1", "--patience", "0", "--topo", "off", "--quiet"})
                .code,
            0);
  const auto off = model::load_checkpoint(root_ / "off" / "model.ckpt");
  EXPECT_FALSE(off.config().use_topography);
  EXPECT_EQ(on.parameter_count() - off.parameter_count(), 9 * 4);

  const auto scale_clash = run({"train", "--data", ds, "--out", (root_ / "bad").string(), "--scale", "5", "--layers", "16"});
  EXPECT_NE(scale_clash.code, 0);
  EXPECT_NE(scale_clash.err.find("does not match"), std::string::npos);
}

TEST_F(CliPipeline, EvalTruthAndRowCount) {
  const auto out = root_ / "truth";
  ASSERT_EQ(run({"eval", "--data", (root_ / "ds").string(), "--out", out.string(), "--method", "truth"}).code, 0);
  const std::string csv = read_bytes(out / "metrics.csv");
  EXPECT_EQ(line_count(csv), 1u + 4u + 2u);  // header, test days, mean, median
  std::istringstream is(csv);
  std::string line;
  std::getline(is, line);
  while (std::getline(is, line)) {
    if (line.rfind("median", 0) == 0) continue;
    std::stringstream ss(line);
    std::string date, mae, rmse, pearson, ssim;
    std::getline(ss, date, ',');
    std::getline(ss, mae, ',');
    std::getline(ss, rmse, ',');
    std::getline(ss, pearson, ',');
    std::getline(ss, ssim, ',');
    EXPECT_EQ(mae, "0.000000") << line;
    EXPECT_EQ(ssim, "1.000000") << line;
  }
}

TEST_F(CliPipeline, EvalModelAndBaselinesShareSchema) {
  const auto ds = (root_ / "ds").string();
  ASSERT_EQ(run({"train", "--data", ds, "--out", (root_ / "m").string(), "--layers", "16", "--filters", "4",
                 "--epochs", "1", "--patience", "0", "--quiet"})
                .code,
            0);
  const auto ev = run({"eval", "--data", ds, "--out", (root_ / "ev").string(), "--checkpoint",
                       (root_ / "m" / "model.ckpt").string(), "--pgm", "on"});
  ASSERT_EQ(ev.code, 0) << ev.err;
  ASSERT_EQ(run({"baseline", "qm", "--data", ds, "--out", (root_ / "qm").string()}).code, 0);
  ASSERT_EQ(run({"baseline", "bcsd", "--data", ds, "--out", (root_ / "bcsd").string()}).code, 0);
  ASSERT_EQ(run({"eval", "--data", ds, "--out", (root_ / "bil").string(), "--method", "bilinear"}).code, 0);
  auto header_and_rows = [](const fs::path& p) {
    const std::string s = read_bytes(p);
    return std::make_pair(s.substr(0, s.find('\n')), line_count(s));
  };
  const auto ref = header_and_rows(root_ / "ev" / "metrics.csv");
  for (const char* m : {"qm", "bcsd", "bil"}) EXPECT_EQ(header_and_rows(root_ / m / "metrics.csv"), ref) << m;

  // rasters: 16-bit PGM plus mapping sidecar
  std::size_t pgms = 0;
  for (const auto& e : fs::directory_iterator(root_ / "ev" / "rasters")) {
    if (e.path().extension() != ".pgm") continue;
    ++pgms;
    const std::string bytes = read_bytes(e.path());
    EXPECT_EQ(bytes.rfind("P5\n26 16\n65535\n", 0), 0u);
    EXPECT_EQ(bytes.size(), std::string("P5\n26 16\n65535\n").size() + 2u * 26u * 16u);
    EXPECT_TRUE(fs::exists(e.path().string() + ".txt"));
  }
  EXPECT_EQ(pgms, 4u);
  EXPECT_EQ(data::load_grid(root_ / "qm" / "pred" / (fs::directory_iterator(root_ / "qm" / "pred")->path().filename()))
                .height,
            16);

  const auto mismatch = run({"eval", "--data", ds, "--out", (root_ / "x").string(), "--checkpoint",
                             (root_ / "m" / "model.ckpt").string(), "--scale", "4"});
  EXPECT_NE(mismatch.code, 0);

  const auto table = run({"compare", "model=" + (root_ / "ev" / "metrics.csv").string(),
                          (root_ / "qm" / "metrics.csv").string(), (root_ / "bcsd" / "metrics.csv").string()});
  ASSERT_EQ(table.code, 0) << table.err;
  EXPECT_NE(table.out.find("| model |"), std::string::npos);
  EXPECT_NE(table.out.find("| qm |"), std::string::npos);
}

TEST(Compare, SingleInput) {
  const auto dir = scratch("compare1");
  write_csv(dir / "a.csv", 1.0, 0.5);
  const auto methods = std::vector<cli::MethodSummary>{cli::read_metrics_csv(dir / "a.csv", "A")};
  const std::string md = cli::compare_markdown(methods);
  EXPECT_EQ(line_count(md), 3u);
  EXPECT_NE(md.find("| A | **1.0000** |"), std::string::npos) << md;
  fs::remove_all(dir);
}

TEST(Compare, DominatingMethodMarkedEverywhere) {
  const auto dir = scratch("compare2");
  write_csv(dir / "a.csv", 1.0, 0.9);
  write_csv(dir / "b.csv", 2.0, 0.2);
  const std::vector<cli::MethodSummary> methods{cli::read_metrics_csv(dir / "b.csv", "B"),
                                                cli::read_metrics_csv(dir / "a.csv", "A")};
  const std::string csv = cli::compare_csv(methods);
  const std::string best = csv.substr(csv.rfind("best,"));
  // ties go to the first listed; the POD median is NA for both
  EXPECT_EQ(best, "best,A,A,A,A,B,B,B,B,B,NA,B,B,A,A\n");
  const std::string md = cli::compare_markdown(methods);
  EXPECT_NE(md.find("| A | **1.0000** | **1.0000** | **2.0000** | **2.0000** |"), std::string::npos) << md;
  fs::remove_all(dir);
}

TEST(Compare, ColumnOrderFollowsTable) {
  const auto dir = scratch("compare3");
  write_csv(dir / "a.csv", 1.0, 0.5);
  const std::string md = cli::compare_markdown({cli::read_metrics_csv(dir / "a.csv", "A")});
  const auto pos = [&](const char* s) { return md.find(s); };
  EXPECT_LT(pos("MAE Avg."), pos("RMSE Avg."));
  EXPECT_LT(pos("RMSE Avg."), pos("Corr. Avg."));
  EXPECT_LT(pos("Corr. Avg."), pos("SSIM Avg."));
  EXPECT_LT(pos("SSIM Avg."), pos("POD Avg."));
  EXPECT_LT(pos("POD Avg."), pos("FAR Avg."));
  EXPECT_LT(pos("FAR Avg."), pos("TS Avg."));
  fs::remove_all(dir);
}

TEST(Compare, SchemaMismatch) {
  const auto dir = scratch("compare4");
  std::ofstream(dir / "bad.csv") << "date,mae,rmse\nmean,1,2\nmedian,1,2\n";
  EXPECT_THROW(cli::read_metrics_csv(dir / "bad.csv", "x"), std::runtime_error);
  std::ofstream(dir / "short.csv") << "date,mae,rmse,pearson,ssim,pod,far,ts\nmean,1,2\n";
  EXPECT_THROW(cli::read_metrics_csv(dir / "short.csv", "x"), std::runtime_error);
  fs::remove_all(dir);
}

TEST(Pgm, MappingAndMask) {
  const auto dir = scratch("pgm");
  data::GridField f = data::GridField::filled(1, 3, 0.0f);
  f.values = {1.5f, 100.0f, 2.0f};
  f.mask = {1, 1, 0};
  cli::write_pgm(f, dir / "x.pgm");
  const std::string b = read_bytes(dir / "x.pgm");
  const std::string head = "P5\n3 1\n65535\n";
  ASSERT_EQ(b.size(), head.size() + 6);
  auto px = [&](int i) {
    return (static_cast<unsigned char>(b[head.size() + 2 * i]) << 8) | static_cast<unsigned char>(b[head.size() + 2 * i + 1]);
  };
  EXPECT_EQ(px(0), 1500);
  EXPECT_EQ(px(1), 65535);
  EXPECT_EQ(px(2), 0);
  EXPECT_NE(read_bytes(dir / "x.pgm.txt").find("1000"), std::string::npos);
  fs::remove_all(dir);
}

TEST(Threads, EnvironmentCap) {
  setenv("DOWNSCALE_THREADS", "1", 1);
  EXPECT_EQ(cli::worker_threads(), 1u);
  setenv("DOWNSCALE_THREADS", "junk", 1);
  EXPECT_GE(cli::worker_threads(), 1u);
  unsetenv("DOWNSCALE_THREADS");
}
