#include "ascm/evaluation.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>
#include <stdexcept>

namespace ascm {

double top1_accuracy(std::span<const TrainingTriplet> triplets, std::span<const FeaturePair> features) {
  if (triplets.empty()) throw std::invalid_argument("top1_accuracy: no triplets");
  std::size_t hits = 0;
  for (const auto& t : triplets) {
    if (t.pair_id < 0 || t.pair_id >= static_cast<int>(features.size())) {
      throw std::out_of_range("top1_accuracy: triplet refers to unknown pair " + std::to_string(t.pair_id));
    }
    const FeaturePair& fp = features[t.pair_id];
    const CandidateSet set = t.candidates();
    const std::vector<float> p = feature_at(fp.source, t.source);
    const int D = fp.target.channels();
    Tensor<float> q({static_cast<int>(set.targets.size()), D});
    for (std::size_t j = 0; j < set.targets.size(); ++j) {
      for (int d = 0; d < D; ++d) q[j * D + d] = fp.target.at(d, set.targets[j].row, set.targets[j].col);
    }
    const std::vector<float> scores = score_candidates<float>(p, q);
    hits += best_match<float>(scores, set).index == *set.gt_index;
  }
  return static_cast<double>(hits) / static_cast<double>(triplets.size());
}

double pck_length(double source_width, double source_height, double target_width, double target_height) {
  if (!(source_width > 0 && source_height > 0 && target_width > 0 && target_height > 0)) {
    throw std::invalid_argument("pck_length: image dimensions must be positive");
  }
  return 0.5 * (std::hypot(source_width, source_height) + std::hypot(target_width, target_height));
}

namespace {

double pck_impl(std::span<const KeypointPair> pairs, double alpha, const double* fixed_length) {
  if (!(alpha > 0)) throw std::invalid_argument("pck: alpha must be positive");
  std::size_t visible = 0, correct = 0;
  for (const auto& kp : pairs) {
    if (!kp.visible) continue;
    ++visible;
    const double length = fixed_length ? *fixed_length : kp.reference_length;
    const double err = std::hypot(kp.predicted.x - kp.ground_truth.x, kp.predicted.y - kp.ground_truth.y);
    correct += err <= alpha * length;
  }
  if (visible == 0) throw std::invalid_argument("pck: no visible keypoints");
  return static_cast<double>(correct) / static_cast<double>(visible);
}

std::size_t count_visible(std::span<const KeypointPair> pairs) {
  std::size_t n = 0;
  for (const auto& kp : pairs) n += kp.visible;
  return n;
}

}  // namespace

double pck(std::span<const KeypointPair> pairs, double alpha, double length) {
  return pck_impl(pairs, alpha, &length);
}

double pck(std::span<const KeypointPair> pairs, double alpha) { return pck_impl(pairs, alpha, nullptr); }

std::vector<double> default_pck_alphas() {
  std::vector<double> a;
  for (int i = 1; i <= 10; ++i) a.push_back(i / 100.0);
  return a;
}

std::vector<PckPoint> pck_curve(std::span<const KeypointPair> pairs, std::span<const double> alphas) {
  std::vector<PckPoint> curve;
  const std::size_t visible = count_visible(pairs);
  for (double a : alphas) curve.push_back({a, pck(pairs, a), visible});
  return curve;
}

void write_pck_csv(std::ostream& os, std::span<const PckPoint> curve) {
  os << "alpha,pck,visible\n" << std::setprecision(10);
  for (const auto& p : curve) os << p.alpha << ',' << p.pck << ',' << p.visible << '\n';
}

void write_epe_csv(std::ostream& os, double epe_all, std::size_t n_all, double epe_masked, std::size_t n_masked) {
  os << "epe_all,n_all,epe_masked,n_masked\n" << std::setprecision(10);
  os << epe_all << ',' << n_all << ',';
  if (n_masked > 0) os << epe_masked;
  os << ',' << n_masked << '\n';
}

void write_top1_csv(std::ostream& os, std::span<const Top1Row> rows) {
  os << "configuration,top1,triplets,final_loss\n" << std::setprecision(10);
  for (const auto& r : rows) os << r.configuration << ',' << r.top1 << ',' << r.triplets << ',' << r.final_loss << '\n';
}

}  // namespace ascm
