#include "downscale/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "downscale/ops.hpp"

namespace downscale::model {

namespace {

[[noreturn]] void config_error(const std::string& what) {
  throw std::invalid_argument("invalid model config: " + what);
}

}  // namespace

int ModelConfig::cab_hidden_nodes() const {
  return static_cast<int>(std::lround(cab_mlp_nodes * cab_reduction));
}

void ModelConfig::validate() const {
  if (scale < 1) config_error("scale must be >= 1");
  if (filters < 1) config_error("filters must be >= 1");
  if (rab_every < 1) config_error("rab_every must be >= 1");
  if (backbone_layers < rab_every || backbone_layers % rab_every != 0) {
    config_error("backbone_layers must be a positive multiple of " + std::to_string(rab_every));
  }
  for (int k : {backbone_kernel, sab_kernel, shrink_kernel}) {
    if (k < 1 || k % 2 == 0) config_error("kernel sizes must be odd");
  }
  if (shrink_filters < 1) config_error("shrink_filters must be >= 1");
  if (cab_mlp_nodes < 1 || cab_hidden_nodes() < 1) config_error("CAB MLP widths must be positive");
  if (head_layers < 1) config_error("head_layers must be >= 1");
  if (input_height < 1 || input_width < 1 || target_height < 1 || target_width < 1) {
    config_error("grid extents must be positive");
  }
}

std::string ModelConfig::to_text() const {
  std::ostringstream os;
  os << "scale=" << scale << '\n'
     << "backbone_layers=" << backbone_layers << '\n'
     << "filters=" << filters << '\n'
     << "backbone_kernel=" << backbone_kernel << '\n'
     << "sab_kernel=" << sab_kernel << '\n'
     << "shrink_kernel=" << shrink_kernel << '\n'
     << "shrink_filters=" << shrink_filters << '\n'
     << "cab_mlp_nodes=" << cab_mlp_nodes << '\n'
     << "cab_hidden_nodes=" << cab_hidden_nodes() << '\n'
     << "rab_every=" << rab_every << '\n'
     << "head_layers=" << head_layers << '\n'
     << "input_height=" << input_height << '\n'
     << "input_width=" << input_width << '\n'
     << "target_height=" << target_height << '\n'
     << "target_width=" << target_width << '\n'
     << "upscale=" << nn::to_string(upscale) << '\n'
     << "topography=" << (use_topography ? "on" : "off") << '\n';
  return os.str();
}

ModelConfig ModelConfig::from_text(std::string_view text) {
  std::map<std::string, std::string> kv;
  std::istringstream is{std::string(text)};
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) config_error("malformed line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) config_error("missing key '" + key + "'");
    return it->second;
  };
  auto get_int = [&](const std::string& key) { return std::stoi(get(key)); };
  ModelConfig c;
  c.scale = get_int("scale");
  c.backbone_layers = get_int("backbone_layers");
  c.filters = get_int("filters");
  c.backbone_kernel = get_int("backbone_kernel");
  c.sab_kernel = get_int("sab_kernel");
  c.shrink_kernel = get_int("shrink_kernel");
  c.shrink_filters = get_int("shrink_filters");
  c.cab_mlp_nodes = get_int("cab_mlp_nodes");
  c.cab_reduction = static_cast<double>(get_int("cab_hidden_nodes")) / c.cab_mlp_nodes;
  c.rab_every = get_int("rab_every");
  c.head_layers = get_int("head_layers");
  c.input_height = get_int("input_height");
  c.input_width = get_int("input_width");
  c.target_height = get_int("target_height");
  c.target_width = get_int("target_width");
  c.upscale = nn::parse_upscale_method(get("upscale"));
  const auto& topo = get("topography");
  if (topo != "on" && topo != "off") config_error("topography must be on|off");
  c.use_topography = topo == "on";
  c.validate();
  return c;
}

std::uint64_t ModelConfig::digest() const {
  const auto text = to_text();
  return fnv1a64(text.data(), text.size());
}

Tensor cab_forward(const Tensor& features, const CabWeights& w) {
  if (features.rank() != 4) throw ShapeError("CAB expects NHWC features");
  const auto n = features.dim(0), c = features.dim(3);
  if (w.w1.dim(0) != c) {
    throw ShapeError("CAB channel mismatch: features have " + std::to_string(c) + " channels, MLP expects " +
                     std::to_string(w.w1.dim(0)));
  }
  auto mlp = [&](const Tensor& pooled) {
    auto v = ops::reshape(pooled, {n, c});
    v = ops::relu(nn::dense(v, w.w1, w.b1));
    v = ops::relu(nn::dense(v, w.w2, w.b2));
    return nn::dense(v, w.w3, w.b3);
  };
  auto logits = ops::add(mlp(nn::pool(nn::Pool::kGlobalMax, features)), mlp(nn::pool(nn::Pool::kGlobalAvg, features)));
  return ops::reshape(ops::sigmoid(logits), {n, 1, 1, c});
}

Tensor sab_forward(const Tensor& features, const SabWeights& w) {
  if (features.rank() != 4) throw ShapeError("SAB expects NHWC features");
  auto pooled = ops::concat({nn::pool(nn::Pool::kChannelMax, features), nn::pool(nn::Pool::kChannelAvg, features)}, 3);
  return ops::sigmoid(nn::conv2d(pooled, w.conv));
}

Tensor rab_forward(const Tensor& features, const RabWeights& w) {
  auto channel_refined = ops::mul(features, cab_forward(features, w.cab));
  auto spatial_refined = ops::mul(channel_refined, sab_forward(channel_refined, w.sab));
  return ops::add(features, spatial_refined);
}

nn::Conv2DParams AttentionSRModel::add_conv(const std::string& name, int k, int cin, int cout, Rng& rng) {
  const auto fan_in = static_cast<double>(k * k * cin);
  const double limit = std::sqrt(6.0 / fan_in);
  std::vector<double> kernel(static_cast<std::size_t>(k * k * cin * cout));
  for (auto& v : kernel) v = rng.uniform(-limit, limit);
  nn::Conv2DParams p;
  p.kernel = Tensor({k, k, cin, cout}, std::move(kernel), true);
  p.bias = Tensor::zeros({cout}, true);
  params_.push_back({name + ".kernel", p.kernel});
  params_.push_back({name + ".bias", p.bias});
  return p;
}

Tensor AttentionSRModel::add_dense(const std::string& name, int in, int out, Rng& rng, Tensor& bias) {
  const double limit = std::sqrt(6.0 / in);
  std::vector<double> w(static_cast<std::size_t>(in * out));
  for (auto& v : w) v = rng.uniform(-limit, limit);
  Tensor weight({in, out}, std::move(w), true);
  bias = Tensor::zeros({out}, true);
  params_.push_back({name + ".weight", weight});
  params_.push_back({name + ".bias", bias});
  return weight;
}

AttentionSRModel AttentionSRModel::build(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  AttentionSRModel m(config);
  Rng rng(seed);
  const int f = config.filters;
  const int k = config.backbone_kernel;
  const int r = config.scale;

  m.input_conv_ = m.add_conv("input", k, 1, f, rng);
  for (int i = 0; i < config.backbone_layers; ++i) {
    m.backbone_.push_back(m.add_conv("backbone." + std::to_string(i), k, f, f, rng));
    if ((i + 1) % config.rab_every == 0) {
      const auto idx = std::to_string(m.rabs_.size());
      RabWeights rab;
      const std::string prefix = "rab." + idx;
      rab.cab.w1 = m.add_dense(prefix + ".cab.fc1", f, config.cab_mlp_nodes, rng, rab.cab.b1);
      rab.cab.w2 = m.add_dense(prefix + ".cab.fc2", config.cab_mlp_nodes, config.cab_hidden_nodes(), rng, rab.cab.b2);
      rab.cab.w3 = m.add_dense(prefix + ".cab.fc3", config.cab_hidden_nodes(), f, rng, rab.cab.b3);
      rab.sab.conv = m.add_conv(prefix + ".sab", config.sab_kernel, 2, 1, rng);
      m.rabs_.push_back(std::move(rab));
      m.shrink_.push_back(m.add_conv("shrink." + idx, config.shrink_kernel, f, config.shrink_filters, rng));
    }
  }
  const int shrink_total = config.shrink_filters * static_cast<int>(m.shrink_.size());
  m.fusion_ = m.add_conv("fusion", k, shrink_total, f, rng);
  m.to_residual_ = m.add_conv("residual", k, f, 1, rng);
  switch (config.upscale) {
    case nn::UpscaleMethod::kPixelShuffle: m.upscale_conv_ = m.add_conv("upscale", k, 1, r * r, rng); break;
    case nn::UpscaleMethod::kDeconv: m.upscale_conv_ = m.add_conv("upscale", k, 1, 1, rng); break;
    default: break;
  }
  m.post_upscale_ = m.add_conv("post_upscale", k, 1, 1, rng);
  const int hr_inputs = config.use_topography ? 3 : 2;
  m.fusion_hr_ = m.add_conv("fusion_hr", k, hr_inputs, f, rng);
  for (int i = 0; i < config.head_layers; ++i) {
    const int cout = i + 1 == config.head_layers ? 1 : f;
    m.head_.push_back(m.add_conv("head." + std::to_string(i), k, f, cout, rng));
  }
  return m;
}

Tensor AttentionSRModel::forward(const Tensor& x_lr, const Tensor& elevation_hr) const {
  const auto& c = config_;
  if (x_lr.rank() != 4 || x_lr.dim(1) != c.input_height || x_lr.dim(2) != c.input_width || x_lr.dim(3) != 1) {
    throw ShapeError("model input " + shape_str(x_lr.shape()) + " does not match config [n," +
                     std::to_string(c.input_height) + "," + std::to_string(c.input_width) + ",1]");
  }
  if (c.use_topography) {
    if (!elevation_hr.defined() || elevation_hr.rank() != 4 || elevation_hr.dim(0) != 1 ||
        elevation_hr.dim(1) != c.target_height || elevation_hr.dim(2) != c.target_width || elevation_hr.dim(3) != 1) {
      throw ShapeError("elevation must be [1," + std::to_string(c.target_height) + "," +
                       std::to_string(c.target_width) + ",1]");
    }
  }
  const auto n = x_lr.dim(0);

  auto f = ops::relu(nn::conv2d(x_lr, input_conv_));
  std::vector<Tensor> shrunk;
  std::size_t rab = 0;
  for (std::size_t i = 0; i < backbone_.size(); ++i) {
    f = ops::relu(nn::conv2d(f, backbone_[i]));
    if ((i + 1) % static_cast<std::size_t>(c.rab_every) == 0) {
      f = rab_forward(f, rabs_[rab]);
      shrunk.push_back(ops::relu(nn::conv2d(f, shrink_[rab])));
      ++rab;
    }
  }
  auto fused = ops::relu(nn::conv2d(ops::concat(shrunk, 3), fusion_));
  auto residual = ops::add(nn::conv2d(fused, to_residual_), x_lr);

  Tensor up;
  switch (c.upscale) {
    case nn::UpscaleMethod::kPixelShuffle: up = nn::pixel_shuffle(nn::conv2d(residual, upscale_conv_), c.scale); break;
    case nn::UpscaleMethod::kDeconv: up = nn::transposed_conv2d(residual, upscale_conv_, c.scale); break;
    default: up = nn::resample(residual, {c.upscale, c.scale}); break;
  }
  up = ops::crop_center(nn::conv2d(up, post_upscale_), c.target_height, c.target_width);
  auto interp = ops::crop_center(nn::resample(x_lr, {nn::UpscaleMethod::kBilinear, c.scale}), c.target_height,
                                 c.target_width);

  std::vector<Tensor> hr_inputs{up, interp};
  if (c.use_topography) hr_inputs.push_back(n == 1 ? elevation_hr : ops::repeat_batch(elevation_hr, n));
  auto z = ops::relu(nn::conv2d(ops::concat(hr_inputs, 3), fusion_hr_));
  for (std::size_t i = 0; i + 1 < head_.size(); ++i) z = ops::relu(nn::conv2d(z, head_[i]));
  return nn::conv2d(z, head_.back());
}

std::int64_t AttentionSRModel::parameter_count() const {
  std::int64_t total = 0;
  for (const auto& p : params_) total += p.value.numel();
  return total;
}

std::vector<std::vector<double>> AttentionSRModel::snapshot() const {
  std::vector<std::vector<double>> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.emplace_back(p.value.data().begin(), p.value.data().end());
  return out;
}

void AttentionSRModel::restore(const std::vector<std::vector<double>>& values) {
  if (values.size() != params_.size()) throw std::invalid_argument("snapshot parameter count mismatch");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto dst = params_[i].value.data();
    if (values[i].size() != dst.size()) throw std::invalid_argument("snapshot shape mismatch for " + params_[i].name);
    std::copy(values[i].begin(), values[i].end(), dst.begin());
  }
}

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

void put_f32(std::ostream& os, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(os, bits);
}

class Reader {
 public:
  explicit Reader(std::istream& is) : is_(is) {}

  void bytes(void* dst, std::size_t n) {
    is_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) {
      throw std::runtime_error("checkpoint truncated at byte offset " + std::to_string(offset_ + static_cast<std::size_t>(is_.gcount())));
    }
    offset_ += n;
  }
  std::uint32_t u32() {
    unsigned char b[4];
    bytes(b, 4);
    return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
           static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
  }
  std::uint64_t u64() {
    std::uint64_t lo = u32();
    std::uint64_t hi = u32();
    return lo | hi << 32;
  }
  float f32() {
    auto bits = u32();
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
  }
  std::string str() {
    auto n = u32();
    if (n > (1u << 20)) throw std::runtime_error("checkpoint string too long at byte offset " + std::to_string(offset_));
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  std::size_t offset() const { return offset_; }

 private:
  std::istream& is_;
  std::size_t offset_ = 0;
};

}  // namespace

void save_checkpoint(const AttentionSRModel& model, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.write("ASRW", 4);
  put_u32(os, kCheckpointVersion);
  put_u64(os, model.config().digest());
  const auto text = model.config().to_text();
  put_u32(os, static_cast<std::uint32_t>(text.size()));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  put_u32(os, static_cast<std::uint32_t>(model.parameters().size()));
  for (const auto& p : model.parameters()) {
    put_u32(os, static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put_u32(os, static_cast<std::uint32_t>(p.value.rank()));
    for (auto d : p.value.shape()) put_u32(os, static_cast<std::uint32_t>(d));
    for (double v : p.value.data()) put_f32(os, static_cast<float>(v));
  }
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

AttentionSRModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  Reader rd(is);
  char magic[4];
  rd.bytes(magic, 4);
  if (std::string_view(magic, 4) != "ASRW") throw std::runtime_error("bad checkpoint magic in " + path.string());
  const auto version = rd.u32();
  if (version != kCheckpointVersion) throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  const auto digest = rd.u64();
  const auto config = ModelConfig::from_text(rd.str());
  if (config.digest() != digest) throw std::runtime_error("checkpoint config digest mismatch");
  auto model = AttentionSRModel::build(config, 0);
  const auto count = rd.u32();
  if (count != model.parameters().size()) throw std::runtime_error("checkpoint parameter count mismatch");
  for (auto& p : model.parameters()) {
    const auto name = rd.str();
    if (name != p.name) throw std::runtime_error("checkpoint parameter '" + name + "' where '" + p.name + "' expected");
    const auto rank = rd.u32();
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(rd.u32());
    if (shape != p.value.shape()) throw std::runtime_error("checkpoint shape mismatch for " + name);
    for (auto& v : p.value.data()) v = rd.f32();
  }
  char extra;
  if (is.read(&extra, 1); is.gcount() != 0) {
    throw std::runtime_error("trailing bytes after checkpoint payload at offset " + std::to_string(rd.offset()));
  }
  return model;
}

}  // namespace downscale::model
