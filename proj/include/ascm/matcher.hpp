#pragma once

#include <optional>
#include <span>
#include <vector>

#include "ascm/layers.hpp"
#include "ascm/tensor.hpp"

namespace ascm {

/// Displacement range searched around a source pixel, inclusive on both ends.
struct SearchWindow {
  int y_min = 0, y_max = 0, x_min = 0, x_max = 0;

  static SearchWindow symmetric(int radius_y, int radius_x);
  int rows() const { return y_max - y_min + 1; }
  int cols() const { return x_max - x_min + 1; }
  int area() const { return rows() * cols(); }
  bool contains(int dy, int dx) const { return dy >= y_min && dy <= y_max && dx >= x_min && dx <= x_max; }
  void validate() const;
};

/// Source position with its target candidates. gt_index is 0-based.
struct CandidateSet {
  Pixel source;
  std::vector<Pixel> targets;
  std::optional<int> gt_index;
};

/// All in-bounds target pixels of the window around `source`, row-major.
CandidateSet candidate_window(Pixel source, const SearchWindow& window, int target_height, int target_width);
CandidateSet candidate_window(Pixel source, int radius_y, int radius_x, int target_height, int target_width);

/// Every target pixel, row-major.
CandidateSet candidate_global(int target_height, int target_width);

/// Column `pixel` of a D x H x W map.
template <class Real>
std::vector<Real> feature_at(const Tensor<Real>& features, Pixel pixel);

/// g_j = <source, targets_j>; `targets` is N x D.
template <class Real>
std::vector<Real> score_candidates(std::span<const Real> source, const Tensor<Real>& targets);

/// First index holding the maximum score.
template <class Real>
int argmax_first(std::span<const Real> scores);

template <class Real>
struct Match {
  int index = -1;
  Pixel position;
  Real score{};
};

/// Highest score wins; ties go to the lowest candidate index.
template <class Real>
Match<Real> best_match(std::span<const Real> scores, const CandidateSet& candidates);

/// -log softmax(scores)[gt_index], evaluated with max subtraction.
template <class Real>
double match_loss(std::span<const Real> scores, int gt_index);

/// d match_loss / d scores = softmax(scores) - one_hot(gt_index).
template <class Real>
std::vector<double> match_loss_grad(std::span<const Real> scores, int gt_index);

}  // namespace ascm
