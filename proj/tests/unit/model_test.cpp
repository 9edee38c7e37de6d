#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "downscale/model.hpp"
#include "downscale/ops.hpp"
#include "support/gradcheck.hpp"

using namespace downscale;
using namespace downscale::model;
using downscale::oracle::gradcheck;
using downscale::oracle::random_tensor;

namespace {

ModelConfig tiny_config(int scale = 2) {
  ModelConfig c;
  c.scale = scale;
  c.backbone_layers = 4;
  c.filters = 8;
  c.cab_mlp_nodes = 16;
  c.input_height = 4;
  c.input_width = 5;
  c.target_height = 4 * scale - 1;
  c.target_width = 5 * scale - 1;
  return c;
}

CabWeights zero_cab(int c, int nodes) {
  return {Tensor::zeros({c, nodes}), Tensor::zeros({nodes}), Tensor::zeros({nodes, nodes / 2}),
          Tensor::zeros({nodes / 2}), Tensor::zeros({nodes / 2, c}), Tensor::zeros({c})};
}

RabWeights gated_rab(int c, double cab_bias, double sab_bias) {
  RabWeights w;
  w.cab = zero_cab(c, 8);
  w.cab.b3 = Tensor::full({c}, cab_bias);
  w.sab.conv = {Tensor::zeros({5, 5, 2, 1}), Tensor::full({1}, sab_bias), 1};
  return w;
}

std::vector<char> read_bytes(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(Cab, ZeroWeightsGiveHalf) {
  auto m = cab_forward(Tensor::zeros({2, 3, 3, 4}), zero_cab(4, 8));
  for (double v : m.data()) EXPECT_FLOAT_EQ(v, 0.5);
}

TEST(Cab, ShapeAndRange) {
  auto model = AttentionSRModel::build(ModelConfig{}, 3);
  Rng rng(4);
  auto f = random_tensor({2, 9, 14, 64}, rng, -3, 3);
  auto m = cab_forward(f, model.rab(0).cab);
  EXPECT_EQ(m.shape(), (Shape{2, 1, 1, 64}));
  for (double v : m.data()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  EXPECT_THROW(cab_forward(Tensor::zeros({1, 2, 2, 8}), model.rab(0).cab), ShapeError);
}

TEST(Sab, ShapeAndDegeneratePooling) {
  auto model = AttentionSRModel::build(ModelConfig{}, 3);
  Rng rng(5);
  auto m = sab_forward(random_tensor({1, 8, 8, 64}, rng), model.rab(0).sab);
  EXPECT_EQ(m.shape(), (Shape{1, 8, 8, 1}));
  for (double v : m.data()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  // channel-constant input: both pooled planes coincide
  auto plane = random_tensor({1, 4, 4, 1}, rng);
  auto constant = ops::mul(Tensor::full({1, 4, 4, 6}, 1.0), plane);
  auto mx = nn::pool(nn::Pool::kChannelMax, constant);
  auto avg = nn::pool(nn::Pool::kChannelAvg, constant);
  for (std::size_t i = 0; i < mx.data().size(); ++i) EXPECT_NEAR(mx.data()[i], avg.data()[i], 1e-6);
}

TEST(Sab, GradientCheck) {
  Rng rng(6);
  auto f = random_tensor({2, 5, 6, 4}, rng);
  SabWeights w{{random_tensor({5, 5, 2, 1}, rng), random_tensor({1}, rng), 1}};
  auto results = gradcheck([&] { return sab_forward(f, w); }, {{"f", f}, {"kernel", w.conv.kernel}, {"bias", w.conv.bias}}, rng);
  for (const auto& r : results) EXPECT_LT(r.rel_error, 1e-2) << r.name;
}

TEST(Rab, SaturatedGatesDoubleInput) {
  Rng rng(7);
  auto f = random_tensor({1, 4, 4, 3}, rng);
  auto out = rab_forward(f, gated_rab(3, 100.0, 100.0));
  for (std::size_t i = 0; i < f.data().size(); ++i) EXPECT_FLOAT_EQ(out.data()[i], 2.0 * f.data()[i]);
}

TEST(Rab, ZeroInputAndClosedGates) {
  auto model = AttentionSRModel::build(tiny_config(), 8);
  auto zero = rab_forward(Tensor::zeros({1, 4, 5, 8}), model.rab(0));
  for (double v : zero.data()) EXPECT_EQ(v, 0.0);

  Rng rng(8);
  auto f = random_tensor({2, 4, 5, 3}, rng);
  auto ident = rab_forward(f, gated_rab(3, 0.0, -1.0e4));
  EXPECT_TRUE(std::equal(ident.data().begin(), ident.data().end(), f.data().begin()));
}

TEST(Rab, ShapePreserved) {
  auto model = AttentionSRModel::build(tiny_config(), 9);
  Rng rng(9);
  auto out = rab_forward(random_tensor({3, 6, 7, 8}, rng), model.rab(1));
  EXPECT_EQ(out.shape(), (Shape{3, 6, 7, 8}));
}

TEST(BuildModel, RabCountAndDeterministicParameters) {
  ModelConfig c;
  auto a = AttentionSRModel::build(c, 42);
  EXPECT_EQ(a.rab_count(), 16u);
  auto b = AttentionSRModel::build(c, 42);
  EXPECT_EQ(a.parameter_count(), b.parameter_count());
  EXPECT_EQ(a.snapshot(), b.snapshot());
  EXPECT_NE(AttentionSRModel::build(c, 43).snapshot(), a.snapshot());
}

TEST(BuildModel, PreShuffleConvHasSquaredScaleFilters) {
  for (int r : {2, 4, 5, 8}) {
    auto m = AttentionSRModel::build(tiny_config(r), 1);
    bool found = false;
    for (const auto& p : m.parameters()) {
      if (p.name == "upscale.kernel") {
        EXPECT_EQ(p.value.dim(3), r * r);
        found = true;
      }
    }
    EXPECT_TRUE(found);
  }
}

TEST(BuildModel, TopographyToggleShrinksParameters) {
  auto on = tiny_config();
  auto off = on;
  off.use_topography = false;
  const auto diff = AttentionSRModel::build(on, 1).parameter_count() - AttentionSRModel::build(off, 1).parameter_count();
  // one fewer input channel on the 3x3 high-resolution fusion conv
  EXPECT_EQ(diff, 9 * on.filters);
}

TEST(BuildModel, ConfigViolations) {
  auto c = tiny_config();
  c.backbone_layers = 3;
  EXPECT_THROW(AttentionSRModel::build(c, 1), std::invalid_argument);
  c = tiny_config();
  c.scale = 0;
  EXPECT_THROW(AttentionSRModel::build(c, 1), std::invalid_argument);
}

TEST(Forward, FullSizeShapeLaw) {
  ModelConfig c;  // 9x14 input, r = 5, 41x66 target
  auto m = AttentionSRModel::build(c, 1);
  Rng rng(1);
  auto y = m.forward(random_tensor({1, 9, 14, 1}, rng, 0, 2), random_tensor({1, 41, 66, 1}, rng, 0, 8));
  EXPECT_EQ(y.shape(), (Shape{1, 41, 66, 1}));
}

TEST(Forward, BatchLawAndShapeErrors) {
  auto c = tiny_config();
  auto m = AttentionSRModel::build(c, 2);
  Rng rng(2);
  auto elev = random_tensor({1, c.target_height, c.target_width, 1}, rng, 0, 5);
  auto y = m.forward(random_tensor({2, 4, 5, 1}, rng, 0, 2), elev);
  EXPECT_EQ(y.shape(), (Shape{2, c.target_height, c.target_width, 1}));
  EXPECT_THROW(m.forward(random_tensor({2, 5, 5, 1}, rng), elev), ShapeError);
  EXPECT_THROW(m.forward(random_tensor({2, 4, 5, 1}, rng), Tensor::zeros({1, 3, 3, 1})), ShapeError);
}

TEST(Forward, FiniteAcrossSeeds) {
  auto c = tiny_config();
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto m = AttentionSRModel::build(c, seed);
    Rng rng(seed + 1000);
    auto y = m.forward(random_tensor({1, 4, 5, 1}, rng, 0, 3), random_tensor({1, c.target_height, c.target_width, 1}, rng, 0, 8));
    for (double v : y.data()) ASSERT_TRUE(std::isfinite(v)) << "seed " << seed;
  }
}

TEST(Forward, UntrainedOutputDiffersFromBilinear) {
  auto c = tiny_config();
  auto m = AttentionSRModel::build(c, 3);
  Rng rng(3);
  auto x = random_tensor({1, 4, 5, 1}, rng, 0, 2);
  auto y = m.forward(x, random_tensor({1, c.target_height, c.target_width, 1}, rng, 0, 8));
  auto bl = ops::crop_center(nn::resample(x, {nn::UpscaleMethod::kBilinear, c.scale}), c.target_height, c.target_width);
  double diff = 0;
  for (std::size_t i = 0; i < y.data().size(); ++i) diff += std::fabs(y.data()[i] - bl.data()[i]);
  EXPECT_GT(diff / static_cast<double>(y.numel()), 1e-3);
}

TEST(Forward, AllUpscaleMethodsAndTopographyOff) {
  for (auto method : {nn::UpscaleMethod::kBilinear, nn::UpscaleMethod::kBicubic, nn::UpscaleMethod::kDeconv,
                      nn::UpscaleMethod::kPixelShuffle}) {
    for (bool topo : {true, false}) {
      auto c = tiny_config(5);
      c.upscale = method;
      c.use_topography = topo;
      auto m = AttentionSRModel::build(c, 4);
      Rng rng(4);
      auto y = m.forward(random_tensor({2, 4, 5, 1}, rng, 0, 2), topo ? random_tensor({1, c.target_height, c.target_width, 1}, rng) : Tensor());
      EXPECT_EQ(y.shape(), (Shape{2, c.target_height, c.target_width, 1}));
    }
  }
}

TEST(Forward, DeterministicOutput) {
  auto c = tiny_config();
  auto run = [&] {
    auto m = AttentionSRModel::build(c, 11);
    Rng rng(12);
    auto y = m.forward(random_tensor({2, 4, 5, 1}, rng), random_tensor({1, c.target_height, c.target_width, 1}, rng));
    return std::vector<double>(y.data().begin(), y.data().end());
  };
  EXPECT_EQ(run(), run());
}

TEST(GradientFlow, EveryParameterReceivesGradient) {
  auto c = tiny_config();
  auto m = AttentionSRModel::build(c, 5);
  Rng rng(5);
  auto x = random_tensor({4, 4, 5, 1}, rng, 0, 2);
  auto elev = random_tensor({1, c.target_height, c.target_width, 1}, rng, 0, 5);
  auto truth = random_tensor({4, c.target_height, c.target_width, 1}, rng, 0, 2);
  {
    GradientTape tape;
    auto diff = ops::sub(m.forward(x, elev), truth);
    tape.backward(ops::mean_all(ops::mul(diff, diff)));
  }
  for (const auto& p : m.parameters()) {
    double norm = 0;
    for (double g : p.value.grad()) norm += static_cast<double>(g) * g;
    EXPECT_GT(norm, 0.0) << p.name;
  }
}

TEST(GradientFlow, TinyModelMatchesFiniteDifferences) {
  auto c = tiny_config();
  auto m = AttentionSRModel::build(c, 6);
  Rng rng(6);
  auto x = random_tensor({2, 4, 5, 1}, rng, 0, 2);
  auto elev = random_tensor({1, c.target_height, c.target_width, 1}, rng, 0, 5);
  std::vector<std::pair<std::string, Tensor>> inputs;
  for (const auto& p : m.parameters()) inputs.emplace_back(p.name, p.value);
  auto results = gradcheck([&] { return m.forward(x, elev); }, inputs, rng, 1e-3, 12);
  for (const auto& r : results) EXPECT_LT(r.rel_error, 1e-2) << r.name;
}

TEST(Checkpoint, ByteExactRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "downscale_model_test";
  std::filesystem::create_directories(dir);
  auto c = tiny_config(4);
  c.upscale = nn::UpscaleMethod::kBicubic;
  auto m = AttentionSRModel::build(c, 7);
  save_checkpoint(m, dir / "a.asrw");
  auto loaded = load_checkpoint(dir / "a.asrw");
  EXPECT_EQ(loaded.config().to_text(), c.to_text());
  // parameters are stored on disk as 32-bit reals
  auto expected = m.snapshot();
  for (auto& block : expected)
    for (auto& v : block) v = static_cast<float>(v);
  EXPECT_EQ(loaded.snapshot(), expected);
  save_checkpoint(loaded, dir / "b.asrw");
  EXPECT_EQ(read_bytes(dir / "a.asrw"), read_bytes(dir / "b.asrw"));
  auto bytes = read_bytes(dir / "a.asrw");
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "ASRW");
}

TEST(Checkpoint, RejectsCorruptFiles) {
  const auto dir = std::filesystem::temp_directory_path() / "downscale_model_test";
  std::filesystem::create_directories(dir);
  auto m = AttentionSRModel::build(tiny_config(), 7);
  save_checkpoint(m, dir / "ok.asrw");
  auto bytes = read_bytes(dir / "ok.asrw");
  {
    std::ofstream os(dir / "trunc.asrw", std::ios::binary);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  EXPECT_THROW(load_checkpoint(dir / "trunc.asrw"), std::runtime_error);
  bytes[0] = 'X';
  {
    std::ofstream os(dir / "magic.asrw", std::ios::binary);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  EXPECT_THROW(load_checkpoint(dir / "magic.asrw"), std::runtime_error);
}

TEST(ModelConfig, TextRoundTripAndDigest) {
  auto c = tiny_config(8);
  c.use_topography = false;
  c.upscale = nn::UpscaleMethod::kDeconv;
  auto back = ModelConfig::from_text(c.to_text());
  EXPECT_EQ(back.to_text(), c.to_text());
  EXPECT_EQ(back.digest(), c.digest());
  EXPECT_NE(ModelConfig{}.digest(), c.digest());
}
