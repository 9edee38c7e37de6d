#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "downscale/layers.hpp"
#include "downscale/random.hpp"
#include "downscale/tensor.hpp"

namespace downscale::model {

/// Architecture hyperparameters. Defaults are the full-size network; the
/// low/high resolution extents describe one 9x14 -> 41x66 (rows x cols) day.
struct ModelConfig {
  int scale = 5;
  int backbone_layers = 32;
  int filters = 64;
  int backbone_kernel = 3;
  int sab_kernel = 5;
  int shrink_kernel = 1;
  int shrink_filters = 16;
  int cab_mlp_nodes = 256;
  double cab_reduction = 0.5;
  int rab_every = 2;
  int head_layers = 3;
  int input_height = 9;
  int input_width = 14;
  int target_height = 41;
  int target_width = 66;
  nn::UpscaleMethod upscale = nn::UpscaleMethod::kPixelShuffle;
  bool use_topography = true;

  /// Throws std::invalid_argument naming the violated constraint.
  void validate() const;
  int rab_count() const { return backbone_layers / rab_every; }
  int cab_hidden_nodes() const;

  /// Canonical key=value text, one per line, fixed key order.
  std::string to_text() const;
  static ModelConfig from_text(std::string_view text);
  std::uint64_t digest() const;
};

struct NamedParameter {
  std::string name;
  Tensor value;
};

struct CabWeights {
  Tensor w1, b1, w2, b2, w3, b3;
};

struct SabWeights {
  nn::Conv2DParams conv;
};

struct RabWeights {
  CabWeights cab;
  SabWeights sab;
};

/// M_c = sigmoid(MLP(global_max(F)) + MLP(global_avg(F))), shape [n, 1, 1, c].
Tensor cab_forward(const Tensor& features, const CabWeights& w);
/// M_s = sigmoid(conv(concat(channel_max(F), channel_avg(F)))), shape [n, h, w, 1].
Tensor sab_forward(const Tensor& features, const SabWeights& w);
/// F + M_s * (M_c * F).
Tensor rab_forward(const Tensor& features, const RabWeights& w);

class AttentionSRModel {
 public:
  /// Deterministic He-uniform initialization from `seed`; biases start at 0.
  static AttentionSRModel build(const ModelConfig& config, std::uint64_t seed);

  /// x_lr [n, input_height, input_width, 1] and elevation_hr
  /// [1, target_height, target_width, 1], both log1p-normalized. The
  /// elevation tensor is ignored (and may be undefined) without topography.
  Tensor forward(const Tensor& x_lr, const Tensor& elevation_hr) const;

  const ModelConfig& config() const { return config_; }
  const std::vector<NamedParameter>& parameters() const { return params_; }
  std::vector<NamedParameter>& parameters() { return params_; }
  std::int64_t parameter_count() const;
  std::size_t rab_count() const { return rabs_.size(); }
  const RabWeights& rab(std::size_t i) const { return rabs_.at(i); }

  std::vector<std::vector<double>> snapshot() const;
  void restore(const std::vector<std::vector<double>>& values);

 private:
  explicit AttentionSRModel(ModelConfig config) : config_(std::move(config)) {}

  nn::Conv2DParams add_conv(const std::string& name, int k, int cin, int cout, Rng& rng);
  Tensor add_dense(const std::string& name, int in, int out, Rng& rng, Tensor& bias);

  ModelConfig config_;
  std::vector<NamedParameter> params_;

  nn::Conv2DParams input_conv_;
  std::vector<nn::Conv2DParams> backbone_;
  std::vector<RabWeights> rabs_;
  std::vector<nn::Conv2DParams> shrink_;
  nn::Conv2DParams fusion_;
  nn::Conv2DParams to_residual_;
  nn::Conv2DParams upscale_conv_;  // pre-shuffle (r^2 filters) or deconv kernel
  nn::Conv2DParams post_upscale_;
  nn::Conv2DParams fusion_hr_;
  std::vector<nn::Conv2DParams> head_;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// "ASRW", version, config digest, config text, then named little-endian
/// float32 parameter blocks with their shapes.
void save_checkpoint(const AttentionSRModel& model, const std::filesystem::path& path);
AttentionSRModel load_checkpoint(const std::filesystem::path& path);

}  // namespace downscale::model
