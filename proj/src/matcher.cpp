#include "ascm/matcher.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace ascm {

SearchWindow SearchWindow::symmetric(int radius_y, int radius_x) {
  if (radius_y < 0 || radius_x < 0) throw std::invalid_argument("search radius must be non-negative");
  return {-radius_y, radius_y, -radius_x, radius_x};
}

void SearchWindow::validate() const {
  if (y_min > y_max || x_min > x_max) throw std::invalid_argument("search window is empty");
}

CandidateSet candidate_window(Pixel source, const SearchWindow& window, int target_height, int target_width) {
  window.validate();
  if (source.row < 0 || source.row >= target_height || source.col < 0 || source.col >= target_width) {
    throw std::out_of_range("candidate_window: source (" + std::to_string(source.row) + "," +
                            std::to_string(source.col) + ") outside " + std::to_string(target_height) + "x" +
                            std::to_string(target_width) + " target");
  }
  CandidateSet set{source, {}, std::nullopt};
  const int r0 = std::max(0, source.row + window.y_min), r1 = std::min(target_height - 1, source.row + window.y_max);
  const int c0 = std::max(0, source.col + window.x_min), c1 = std::min(target_width - 1, source.col + window.x_max);
  if (r0 > r1 || c0 > c1) return set;
  set.targets.reserve(static_cast<std::size_t>(r1 - r0 + 1) * (c1 - c0 + 1));
  for (int r = r0; r <= r1; ++r) {
    for (int c = c0; c <= c1; ++c) set.targets.push_back({r, c});
  }
  return set;
}

CandidateSet candidate_window(Pixel source, int radius_y, int radius_x, int target_height, int target_width) {
  return candidate_window(source, SearchWindow::symmetric(radius_y, radius_x), target_height, target_width);
}

CandidateSet candidate_global(int target_height, int target_width) {
  if (target_height < 1 || target_width < 1) throw std::invalid_argument("candidate_global: empty target");
  CandidateSet set;
  set.targets.reserve(static_cast<std::size_t>(target_height) * target_width);
  for (int r = 0; r < target_height; ++r) {
    for (int c = 0; c < target_width; ++c) set.targets.push_back({r, c});
  }
  return set;
}

template <class Real>
std::vector<Real> feature_at(const Tensor<Real>& features, Pixel pixel) {
  require_map(features, "feature_at");
  if (pixel.row < 0 || pixel.row >= features.height() || pixel.col < 0 || pixel.col >= features.width()) {
    throw std::out_of_range("feature_at: pixel outside feature map");
  }
  std::vector<Real> out(features.channels());
  for (int d = 0; d < features.channels(); ++d) out[d] = features.at(d, pixel.row, pixel.col);
  return out;
}

template <class Real>
std::vector<Real> score_candidates(std::span<const Real> source, const Tensor<Real>& targets) {
  if (targets.rank() != 2 || targets.dim(1) != static_cast<int>(source.size())) {
    throw std::invalid_argument("score_candidates: source has " + std::to_string(source.size()) +
                                " dims, targets are " + shape_to_string(targets.shape()));
  }
  const int N = targets.dim(0), D = targets.dim(1);
  std::vector<Real> scores(N);
  for (int j = 0; j < N; ++j) {
    Real acc = 0;
    for (int d = 0; d < D; ++d) acc += source[d] * targets[static_cast<std::size_t>(j) * D + d];
    scores[j] = acc;
  }
  return scores;
}

template <class Real>
int argmax_first(std::span<const Real> scores) {
  if (scores.empty()) throw std::invalid_argument("argmax over an empty score vector");
  int best = 0;
  for (int j = 1; j < static_cast<int>(scores.size()); ++j) {
    if (scores[j] > scores[best]) best = j;
  }
  return best;
}

template <class Real>
Match<Real> best_match(std::span<const Real> scores, const CandidateSet& candidates) {
  if (candidates.targets.empty()) throw std::invalid_argument("best_match: empty candidate set");
  if (scores.size() != candidates.targets.size()) {
    throw std::invalid_argument("best_match: " + std::to_string(scores.size()) + " scores for " +
                                std::to_string(candidates.targets.size()) + " candidates");
  }
  const int i = argmax_first(scores);
  return {i, candidates.targets[i], scores[i]};
}

template <class Real>
double match_loss(std::span<const Real> scores, int gt_index) {
  if (gt_index < 0 || gt_index >= static_cast<int>(scores.size())) {
    throw std::out_of_range("match_loss: ground-truth index " + std::to_string(gt_index) + " outside " +
                            std::to_string(scores.size()) + " candidates");
  }
  double m = scores[0];
  for (Real s : scores) m = std::max<double>(m, s);
  double z = 0;
  for (Real s : scores) z += std::exp(static_cast<double>(s) - m);
  return m + std::log(z) - static_cast<double>(scores[gt_index]);
}

template <class Real>
std::vector<double> match_loss_grad(std::span<const Real> scores, int gt_index) {
  const double lse = match_loss(scores, gt_index) + static_cast<double>(scores[gt_index]);
  std::vector<double> g(scores.size());
  for (std::size_t j = 0; j < scores.size(); ++j) {
    g[j] = std::exp(static_cast<double>(scores[j]) - lse) - (static_cast<int>(j) == gt_index ? 1.0 : 0.0);
  }
  return g;
}

#define ASCM_INSTANTIATE_MATCHER(R)                                                   \
  template std::vector<R> feature_at(const Tensor<R>&, Pixel);                        \
  template std::vector<R> score_candidates(std::span<const R>, const Tensor<R>&);     \
  template int argmax_first(std::span<const R>);                                      \
  template struct Match<R>;                                                           \
  template Match<R> best_match(std::span<const R>, const CandidateSet&);              \
  template double match_loss(std::span<const R>, int);                                \
  template std::vector<double> match_loss_grad(std::span<const R>, int);

ASCM_INSTANTIATE_MATCHER(float)
ASCM_INSTANTIATE_MATCHER(double)

}  // namespace ascm
