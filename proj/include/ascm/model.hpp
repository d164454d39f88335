#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ascm/layers.hpp"

namespace ascm {

inline constexpr int kFeatureBlocks = 5;
inline constexpr int kAttentionBlocks = 9;
inline constexpr int kSharedBlocks = 5;

/// How per-scale feature maps are combined.
enum class Fusion : std::uint32_t {
  attention = 0,  // per-pixel softmax-weighted sum
  concat = 1,     // channel concatenation (ablation baseline)
};

std::string to_string(Fusion f);
Fusion parse_fusion(const std::string& s);

struct ModelConfig {
  int in_channels = 1;
  int width = 64;
  std::vector<double> scales{1.0, 2.0};
  Fusion fusion = Fusion::attention;

  int num_scales() const { return static_cast<int>(scales.size()); }
  /// Length of the fused per-pixel descriptor.
  int feature_dim() const { return fusion == Fusion::concat ? width * num_scales() : width; }
  /// Throws std::invalid_argument on non-positive sizes or a scale list that
  /// is not strictly increasing and positive.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Every learnable weight of the feature and attention networks.
///
/// The attention network's first kSharedBlocks blocks are the feature
/// network's blocks: attention_block(i) for i < kSharedBlocks returns a
/// reference into feature_blocks, so there is a single copy of that storage.
template <class Real>
struct ModelParams {
  ModelConfig config;
  ConvParams<Real> stem;
  std::array<ResidualBlockParams<Real>, kFeatureBlocks> feature_blocks;
  std::array<ResidualBlockParams<Real>, kAttentionBlocks - kSharedBlocks> attention_tail;
  ConvParams<Real> projection;  // 1x1, width -> number of scales

  /// He-initialized weights drawn from `seed`.
  static ModelParams init(const ModelConfig& config, std::uint64_t seed);

  ResidualBlockParams<Real>& attention_block(int i);
  const ResidualBlockParams<Real>& attention_block(int i) const;

  /// Each trainable tensor exactly once, in checkpoint order.
  std::vector<Parameter<Real>*> parameters();
  std::vector<const Parameter<Real>*> parameters() const;
  std::vector<BatchNormState<Real>*> batchnorms();
  std::vector<const BatchNormState<Real>*> batchnorms() const;

  void zero_grad();
};

template <class To, class From>
ModelParams<To> cast_model(const ModelParams<From>& from);

/// Output dims for downsample factor `scale`: ceil(H / scale) x ceil(W / scale).
std::pair<int, int> scaled_size(int height, int width, double scale);

template <class Real>
std::vector<Tensor<Real>> build_pyramid(const Tensor<Real>& image, const std::vector<double>& scales);

/// Stem convolution followed by the residual blocks; the last block has no final relu.
template <class Real>
Var feature_forward(Tape<Real>& tape, Var image, ModelParams<Real>& params, Mode mode);

/// Per-pixel scale weights (S x H x W) computed on the input resolution.
template <class Real>
Var attention_forward(Tape<Real>& tape, Var image, ModelParams<Real>& params, Mode mode);

/// Fused dense features at the input resolution.
template <class Real>
Var autoscale_features(Tape<Real>& tape, Var image, ModelParams<Real>& params, Mode mode);

// Inference conveniences; the parameters are not modified.
template <class Real>
Tensor<Real> feature_forward(const Tensor<Real>& image, const ModelParams<Real>& params);
template <class Real>
Tensor<Real> attention_forward(const Tensor<Real>& image, const ModelParams<Real>& params);
template <class Real>
Tensor<Real> autoscale_features(const Tensor<Real>& image, const ModelParams<Real>& params);

}  // namespace ascm
