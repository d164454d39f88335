#include "ascm/model.hpp"

#include <cmath>
#include <stdexcept>

#include "ascm/rng.hpp"

namespace ascm {

namespace {

// Residual branches start close to identity so that the initial descriptors,
// and with them the initial matching scores, stay small.
constexpr double kBranchGammaInit = 0.1;
constexpr double kStemGain = 0.5;

template <class Real>
ConvParams<Real> make_conv(int out, int in, int k, const std::string& name, Rng& rng, double gain) {
  ConvParams<Real> c;
  Tensor<Real> w({out, in, k, k});
  const double std_dev = gain * std::sqrt(2.0 / (static_cast<double>(in) * k * k));
  for (auto& v : w.values()) v = static_cast<Real>(std_dev * rng.normal());
  c.weight = {name + ".weight", std::move(w), {}};
  c.bias = {name + ".bias", Tensor<Real>({out}), {}};
  return c;
}

template <class Real>
ResidualBlockParams<Real> make_block(int width, const std::string& name, Rng& rng) {
  ResidualBlockParams<Real> b;
  b.conv1 = make_conv<Real>(width, width, 3, name + ".conv1", rng, 1.0);
  b.bn1 = BatchNormState<Real>::identity(width, name + ".bn1");
  b.conv2 = make_conv<Real>(width, width, 3, name + ".conv2", rng, 1.0);
  b.bn2 = BatchNormState<Real>::identity(width, name + ".bn2");
  b.bn2.gamma.value.fill(static_cast<Real>(kBranchGammaInit));
  return b;
}

template <class Real, class Block>
void append_block(std::vector<Parameter<Real>*>& out, Block& b) {
  for (auto* p : {&b.conv1.weight, &b.conv1.bias, &b.bn1.gamma, &b.bn1.beta, &b.conv2.weight, &b.conv2.bias,
                  &b.bn2.gamma, &b.bn2.beta}) {
    out.push_back(p);
  }
}

template <class Real>
Var resize_to(Tape<Real>& tape, Var v, int h, int w) {
  const auto& t = tape.value(v);
  if (t.height() == h && t.width() == w) return v;
  return bilinear_resize(tape, v, h, w);
}

// Stem and shared blocks up to (and including) the last shared block's shortcut
// sum, before its final relu.
template <class Real>
Var shared_trunk(Tape<Real>& tape, Var image, ModelParams<Real>& params, Mode mode) {
  const auto& img = tape.value(image);
  require_map(img, "feature_forward");
  if (img.channels() != params.config.in_channels) {
    throw std::invalid_argument("feature_forward: image has " + std::to_string(img.channels()) +
                                " channels, model expects " + std::to_string(params.config.in_channels));
  }
  Var h = conv2d(tape, image, params.stem);
  for (int i = 0; i < kFeatureBlocks; ++i) {
    h = residual_block(tape, h, params.feature_blocks[i], mode, i + 1 < kFeatureBlocks);
  }
  return h;
}

// Attention layers that follow the shared trunk.
template <class Real>
Var attention_head(Tape<Real>& tape, Var trunk, ModelParams<Real>& params, Mode mode) {
  Var h = relu(tape, trunk);
  const int tail = kAttentionBlocks - kSharedBlocks;
  for (int i = 0; i < tail; ++i) {
    h = residual_block(tape, h, params.attention_tail[i], mode, i + 1 < tail);
  }
  h = conv2d(tape, h, params.projection);
  return channel_softmax(tape, h);
}

}  // namespace

std::string to_string(Fusion f) { return f == Fusion::concat ? "concat" : "attention"; }

Fusion parse_fusion(const std::string& s) {
  if (s == "attention") return Fusion::attention;
  if (s == "concat") return Fusion::concat;
  throw std::invalid_argument("unknown fusion mode '" + s + "' (expected attention or concat)");
}

void ModelConfig::validate() const {
  if (in_channels < 1) throw std::invalid_argument("model: in_channels must be positive");
  if (width < 1) throw std::invalid_argument("model: width must be positive");
  if (scales.empty()) throw std::invalid_argument("model: scale list is empty");
  for (std::size_t i = 0; i < scales.size(); ++i) {
    if (!(scales[i] > 0) || !std::isfinite(scales[i])) {
      throw std::invalid_argument("model: scales must be positive");
    }
    if (i > 0 && !(scales[i] > scales[i - 1])) {
      throw std::invalid_argument("model: scales must be strictly increasing");
    }
  }
}

std::pair<int, int> scaled_size(int height, int width, double scale) {
  if (!(scale > 0)) throw std::invalid_argument("scale must be positive");
  auto dim = [scale](int n) { return std::max(1, static_cast<int>(std::ceil(n / scale - 1e-9))); };
  return {dim(height), dim(width)};
}

template <class Real>
ModelParams<Real> ModelParams<Real>::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  ModelParams m;
  m.config = config;
  const int w = config.width;
  m.stem = make_conv<Real>(w, config.in_channels, 3, "stem", rng, kStemGain);
  for (int i = 0; i < kFeatureBlocks; ++i) m.feature_blocks[i] = make_block<Real>(w, "block" + std::to_string(i), rng);
  for (int i = 0; i < kAttentionBlocks - kSharedBlocks; ++i) {
    m.attention_tail[i] = make_block<Real>(w, "attn_block" + std::to_string(kSharedBlocks + i), rng);
  }
  m.projection = make_conv<Real>(config.num_scales(), w, 1, "attn_proj", rng, 0.1);
  return m;
}

template <class Real>
ResidualBlockParams<Real>& ModelParams<Real>::attention_block(int i) {
  if (i < 0 || i >= kAttentionBlocks) throw std::out_of_range("attention block index");
  return i < kSharedBlocks ? feature_blocks[i] : attention_tail[i - kSharedBlocks];
}

template <class Real>
const ResidualBlockParams<Real>& ModelParams<Real>::attention_block(int i) const {
  return const_cast<ModelParams*>(this)->attention_block(i);
}

template <class Real>
std::vector<Parameter<Real>*> ModelParams<Real>::parameters() {
  std::vector<Parameter<Real>*> out{&stem.weight, &stem.bias};
  for (auto& b : feature_blocks) append_block(out, b);
  for (auto& b : attention_tail) append_block(out, b);
  out.push_back(&projection.weight);
  out.push_back(&projection.bias);
  return out;
}

template <class Real>
std::vector<const Parameter<Real>*> ModelParams<Real>::parameters() const {
  auto ps = const_cast<ModelParams*>(this)->parameters();
  return {ps.begin(), ps.end()};
}

template <class Real>
std::vector<BatchNormState<Real>*> ModelParams<Real>::batchnorms() {
  std::vector<BatchNormState<Real>*> out;
  for (auto& b : feature_blocks) {
    out.push_back(&b.bn1);
    out.push_back(&b.bn2);
  }
  for (auto& b : attention_tail) {
    out.push_back(&b.bn1);
    out.push_back(&b.bn2);
  }
  return out;
}

template <class Real>
std::vector<const BatchNormState<Real>*> ModelParams<Real>::batchnorms() const {
  auto bs = const_cast<ModelParams*>(this)->batchnorms();
  return {bs.begin(), bs.end()};
}

template <class Real>
void ModelParams<Real>::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

template <class To, class From>
ModelParams<To> cast_model(const ModelParams<From>& from) {
  ModelParams<To> to = ModelParams<To>::init(from.config, 0);
  auto src = from.parameters();
  auto dst = to.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i]->value = tensor_cast<To>(src[i]->value);
  auto sb = from.batchnorms();
  auto db = to.batchnorms();
  for (std::size_t i = 0; i < sb.size(); ++i) {
    db[i]->running_mean = tensor_cast<To>(sb[i]->running_mean);
    db[i]->running_var = tensor_cast<To>(sb[i]->running_var);
    db[i]->eps = sb[i]->eps;
    db[i]->momentum = sb[i]->momentum;
  }
  return to;
}

template <class Real>
std::vector<Tensor<Real>> build_pyramid(const Tensor<Real>& image, const std::vector<double>& scales) {
  require_map(image, "build_pyramid");
  std::vector<Tensor<Real>> out;
  out.reserve(scales.size());
  for (double s : scales) {
    const auto [h, w] = scaled_size(image.height(), image.width(), s);
    out.push_back(bilinear_resize(image, h, w));
  }
  return out;
}

template <class Real>
Var feature_forward(Tape<Real>& tape, Var image, ModelParams<Real>& params, Mode mode) {
  return shared_trunk(tape, image, params, mode);
}

template <class Real>
Var attention_forward(Tape<Real>& tape, Var image, ModelParams<Real>& params, Mode mode) {
  return attention_head(tape, shared_trunk(tape, image, params, mode), params, mode);
}

template <class Real>
Var autoscale_features(Tape<Real>& tape, Var image, ModelParams<Real>& params, Mode mode) {
  const ModelConfig& cfg = params.config;
  cfg.validate();
  const auto& img = tape.value(image);
  require_map(img, "autoscale_features");
  const int H = img.height(), W = img.width();

  std::vector<Var> maps;
  Var unit_scale_trunk;
  for (double s : cfg.scales) {
    const auto [h, w] = scaled_size(H, W, s);
    const Var level = resize_to(tape, image, h, w);
    const Var f = shared_trunk(tape, level, params, mode);
    // Resizing is the identity at unit scale, so that trunk equals the one the
    // attention network would compute on the input.
    if (h == H && w == W) unit_scale_trunk = f;
    maps.push_back(resize_to(tape, f, H, W));
  }
  if (cfg.fusion == Fusion::concat) return concat_channels<Real>(tape, maps);
  if (maps.size() == 1) return maps.front();

  if (!unit_scale_trunk.valid()) unit_scale_trunk = shared_trunk(tape, image, params, mode);
  const Var weights = attention_head(tape, unit_scale_trunk, params, mode);
  return weighted_scale_sum<Real>(tape, weights, maps);
}

template <class Real>
Tensor<Real> feature_forward(const Tensor<Real>& image, const ModelParams<Real>& params) {
  ModelParams<Real> copy = params;
  Tape<Real> tape(false);
  return tape.value(feature_forward(tape, tape.constant(image), copy, Mode::infer));
}

template <class Real>
Tensor<Real> attention_forward(const Tensor<Real>& image, const ModelParams<Real>& params) {
  ModelParams<Real> copy = params;
  Tape<Real> tape(false);
  return tape.value(attention_forward(tape, tape.constant(image), copy, Mode::infer));
}

template <class Real>
Tensor<Real> autoscale_features(const Tensor<Real>& image, const ModelParams<Real>& params) {
  ModelParams<Real> copy = params;
  Tape<Real> tape(false);
  return tape.value(autoscale_features(tape, tape.constant(image), copy, Mode::infer));
}

#define ASCM_INSTANTIATE_MODEL(R)                                                          \
  template struct ModelParams<R>;                                                          \
  template std::vector<Tensor<R>> build_pyramid(const Tensor<R>&, const std::vector<double>&); \
  template Var feature_forward(Tape<R>&, Var, ModelParams<R>&, Mode);                      \
  template Var attention_forward(Tape<R>&, Var, ModelParams<R>&, Mode);                    \
  template Var autoscale_features(Tape<R>&, Var, ModelParams<R>&, Mode);                   \
  template Tensor<R> feature_forward(const Tensor<R>&, const ModelParams<R>&);             \
  template Tensor<R> attention_forward(const Tensor<R>&, const ModelParams<R>&);           \
  template Tensor<R> autoscale_features(const Tensor<R>&, const ModelParams<R>&);

ASCM_INSTANTIATE_MODEL(float)
ASCM_INSTANTIATE_MODEL(double)

template ModelParams<double> cast_model(const ModelParams<float>&);
template ModelParams<float> cast_model(const ModelParams<double>&);
template ModelParams<float> cast_model(const ModelParams<float>&);
template ModelParams<double> cast_model(const ModelParams<double>&);

}  // namespace ascm
