#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "ascm/trainer.hpp"

namespace ascm {

/// Dense features of one image pair, indexed by TrainingTriplet::pair_id.
struct FeaturePair {
  Tensor<float> source;
  Tensor<float> target;
};

/// Fraction of triplets whose best-scoring candidate is the ground truth.
double top1_accuracy(std::span<const TrainingTriplet> triplets, std::span<const FeaturePair> features);

struct Point2 {
  double x = 0;
  double y = 0;
};

struct KeypointPair {
  Point2 source;
  Point2 ground_truth;
  Point2 predicted;
  bool visible = true;
  /// Per-pair alpha reference length, used by the two-argument pck().
  double reference_length = 0;
};

/// Mean of the two image diagonals.
double pck_length(double source_width, double source_height, double target_width, double target_height);

/// Fraction of visible pairs with |predicted - ground_truth| <= alpha * length.
double pck(std::span<const KeypointPair> pairs, double alpha, double length);
double pck(std::span<const KeypointPair> pairs, double alpha);

struct PckPoint {
  double alpha = 0;
  double pck = 0;
  std::size_t visible = 0;
};

/// 0.01, 0.02, ..., 0.10.
std::vector<double> default_pck_alphas();
std::vector<PckPoint> pck_curve(std::span<const KeypointPair> pairs, std::span<const double> alphas);

/// Columns: alpha,pck,visible
void write_pck_csv(std::ostream& os, std::span<const PckPoint> curve);

/// Columns: epe_all,n_all,epe_masked,n_masked
void write_epe_csv(std::ostream& os, double epe_all, std::size_t n_all, double epe_masked, std::size_t n_masked);

struct Top1Row {
  std::string configuration;
  double top1 = 0;
  std::size_t triplets = 0;
  double final_loss = 0;
};

/// Columns: configuration,top1,triplets,final_loss
void write_top1_csv(std::ostream& os, std::span<const Top1Row> rows);

}  // namespace ascm
