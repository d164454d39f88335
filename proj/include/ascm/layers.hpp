#pragma once

#include <span>
#include <vector>

#include "ascm/autograd.hpp"
#include "ascm/tensor.hpp"

namespace ascm {

enum class Mode { train, infer };

struct Pixel {
  int row = 0;
  int col = 0;
  friend bool operator==(const Pixel&, const Pixel&) = default;
  friend auto operator<=>(const Pixel&, const Pixel&) = default;
};

template <class Real>
struct ConvParams {
  Parameter<Real> weight;  // out x in x k x k
  Parameter<Real> bias;    // out
};

/// Per-channel affine batch normalization with running statistics.
template <class Real>
struct BatchNormState {
  Parameter<Real> gamma;
  Parameter<Real> beta;
  Tensor<Real> running_mean;
  Tensor<Real> running_var;
  double eps = 1e-5;
  double momentum = 0.1;

  static BatchNormState identity(int channels, const std::string& name);
  int channels() const { return gamma.value.dim(0); }
};

/// conv - batchnorm - relu - conv - batchnorm, identity shortcut, optional final relu.
template <class Real>
struct ResidualBlockParams {
  ConvParams<Real> conv1;
  BatchNormState<Real> bn1;
  ConvParams<Real> conv2;
  BatchNormState<Real> bn2;
};

// ---- plain tensor kernels --------------------------------------------------

/// Stride-1 cross-correlation with an odd square kernel and zero padding k/2.
template <class Real>
Tensor<Real> conv2d(const Tensor<Real>& input, const Tensor<Real>& weight, const Tensor<Real>& bias);

/// Train mode normalizes with per-channel spatial statistics and updates the
/// running statistics in `state`; infer mode reads the running statistics only.
template <class Real>
Tensor<Real> batchnorm(const Tensor<Real>& input, BatchNormState<Real>& state, Mode mode);

template <class Real>
Tensor<Real> relu(const Tensor<Real>& input);

/// Half-pixel (pixel-center aligned) bilinear interpolation, border-clamped.
template <class Real>
Tensor<Real> bilinear_resize(const Tensor<Real>& input, int out_height, int out_width);

/// Per-pixel softmax across channels.
template <class Real>
Tensor<Real> channel_softmax(const Tensor<Real>& input);

template <class Real>
Tensor<Real> residual_block(const Tensor<Real>& input, ResidualBlockParams<Real>& params, Mode mode,
                            bool final_relu);

// ---- recorded operations ---------------------------------------------------

template <class Real>
Var conv2d(Tape<Real>& tape, Var input, Var weight, Var bias);
template <class Real>
Var conv2d(Tape<Real>& tape, Var input, ConvParams<Real>& conv);

template <class Real>
Var batchnorm(Tape<Real>& tape, Var input, BatchNormState<Real>& state, Mode mode);

template <class Real>
Var relu(Tape<Real>& tape, Var input);

template <class Real>
Var add(Tape<Real>& tape, Var a, Var b);

template <class Real>
Var mul(Tape<Real>& tape, Var a, Var b);

/// Sum of all elements, as a 1-element tensor.
template <class Real>
Var sum(Tape<Real>& tape, Var input);

/// <a, b> over all elements.
template <class Real>
Var inner_product(Tape<Real>& tape, Var a, Var b);

template <class Real>
Var bilinear_resize(Tape<Real>& tape, Var input, int out_height, int out_width);

template <class Real>
Var channel_softmax(Tape<Real>& tape, Var input);

/// Residual block; `pre_relu`, when given, receives the shortcut sum before the final relu.
template <class Real>
Var residual_block(Tape<Real>& tape, Var input, ResidualBlockParams<Real>& params, Mode mode, bool final_relu,
                   Var* pre_relu = nullptr);

/// out(d, p) = sum_s weights(s, p) * features[s](d, p), summed in scale order.
template <class Real>
Var weighted_scale_sum(Tape<Real>& tape, Var weights, std::span<const Var> features);

/// Stacks D_i x H x W maps along the channel axis.
template <class Real>
Var concat_channels(Tape<Real>& tape, std::span<const Var> maps);

/// Rows of the result are the feature vectors of `feature_map` at `pixels` (N x D).
template <class Real>
Var gather_pixels(Tape<Real>& tape, Var feature_map, std::span<const Pixel> pixels);

/// sources: B x D, candidates: (B*N) x D -> scores B x N with
/// scores(b, j) = <sources(b), candidates(b*N + j)>.
template <class Real>
Var grouped_inner_products(Tape<Real>& tape, Var sources, Var candidates, int group_size);

/// Mean over rows of -log softmax(scores(b))[targets[b]].
template <class Real>
Var softmax_cross_entropy(Tape<Real>& tape, Var scores, std::span<const int> targets);

}  // namespace ascm
