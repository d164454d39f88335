#pragma once

#include <cstdint>
#include <optional>
#include <utility>

#include "ascm/flow.hpp"
#include "ascm/io.hpp"
#include "ascm/trainer.hpp"

namespace ascm {

struct SynthConfig {
  int height = 48;
  int width = 48;
  /// Moving rectangles drawn over the background, each with its own flow.
  int regions = 3;
  /// Largest |u| and |v| of any layer.
  int max_flow = 6;
  /// Search radius the flow has to stay below.
  int radius = 8;
  /// When set, every layer moves by this (u, v).
  std::optional<std::pair<int, int>> fixed_flow;
  /// Std-dev of Gaussian noise added to each image (gray levels).
  double noise_sigma = 0.0;
  /// Offset added to the target (gray levels).
  double brightness = 0.0;
  /// Std-dev of the Gaussian that smooths the texture noise.
  double blur = 1.0;
  /// Texture std-dev around mid-gray.
  double contrast = 45.0;
  /// Minimum local std-dev over every 7x7 source window; regenerated otherwise.
  double min_local_contrast = 3.0;

  void validate() const;
};

struct SyntheticPair {
  Image8 source;
  Image8 target;
  FlowField flow;
  SynthConfig config;
  std::uint64_t seed = 0;
};

/// Layered rendering: a background and `regions` rectangles, each moved by an
/// integer flow. A pixel's flow is valid when its target lies in the image and
/// the same layer is on top there.
SyntheticPair synth_pair(const SynthConfig& config, std::uint64_t seed);

CorrespondencePair to_correspondence(const SyntheticPair& pair);

/// Smallest local 7x7 standard deviation of a single-channel image.
double min_local_contrast(const Image8& image);

}  // namespace ascm
