#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ascm/matcher.hpp"
#include "ascm/tensor.hpp"

namespace ascm {

/// Per-pixel displacement, u along columns and v along rows, with a validity mask.
struct FlowField {
  int height = 0;
  int width = 0;
  std::vector<float> u;
  std::vector<float> v;
  std::vector<std::uint8_t> valid;

  FlowField() = default;
  FlowField(int h, int w);
  static FlowField constant(int h, int w, float u, float v);

  std::size_t size() const { return static_cast<std::size_t>(height) * width; }
  std::size_t index(int row, int col) const { return static_cast<std::size_t>(row) * width + col; }
  std::size_t valid_count() const;

  friend bool operator==(const FlowField&, const FlowField&) = default;
};

/// Windowed exhaustive inner-product matching; flow = best candidate - source.
/// Every output pixel is valid.
FlowField dense_match(const Tensor<float>& source_features, const Tensor<float>& target_features,
                      const SearchWindow& window);
FlowField dense_match(const Tensor<float>& source_features, const Tensor<float>& target_features, int radius_y,
                      int radius_x);

/// Keeps p iff |bwd(p + fwd(p)) + fwd(p)| <= threshold, with the lookup position
/// rounded to the nearest pixel. Lookups outside the image, or onto invalid
/// backward pixels, reject p.
FlowField fb_consistency_filter(const FlowField& forward, const FlowField& backward, double threshold = 3.0);

/// Gives every invalid pixel the flow of its nearest valid pixel (Euclidean,
/// ties to the first valid pixel in row-major order).
FlowField fill_flow(const FlowField& masked);

/// Mean end-point error over pixels where mask is non-zero.
double epe(const FlowField& predicted, const FlowField& ground_truth, std::span<const std::uint8_t> mask);
/// Mean end-point error over the ground truth's valid pixels.
double epe(const FlowField& predicted, const FlowField& ground_truth);

struct FlowEstimate {
  FlowField forward;
  FlowField backward;
  FlowField filtered;
  FlowField filled;
};

/// Matching both ways, consistency filtering and hole filling.
FlowEstimate estimate_flow(const Tensor<float>& source_features, const Tensor<float>& target_features,
                           const SearchWindow& window, double threshold = 3.0);

}  // namespace ascm
