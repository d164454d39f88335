#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "ascm/flow.hpp"
#include "ascm/matcher.hpp"
#include "ascm/model.hpp"

namespace ascm {

/// One source pixel, its ground-truth match and the sampled negatives.
struct TrainingTriplet {
  int pair_id = 0;
  Pixel source;
  Pixel target;
  std::vector<Pixel> negatives;

  /// Ground truth plus negatives sorted row-major; gt_index marks the ground truth.
  CandidateSet candidates() const;
};

/// Sources are drawn without replacement from valid pixels whose rounded
/// ground-truth target lies in the image and in `window`, and whose clipped
/// window can supply `n_neg` negatives. Negatives are drawn without replacement
/// from the clipped window around the source, excluding the ground truth.
std::vector<TrainingTriplet> sample_triplets(const FlowField& ground_truth, int n_pairs, int n_neg,
                                             const SearchWindow& window, std::uint64_t seed, int pair_id = 0);

/// base / factor^floor(iter / step).
double lr_schedule(long iteration, double base = 0.002, long step = 50000, double factor = 5.0);

struct OptimState {
  std::vector<Tensor<float>> velocity;
  long iteration = 0;
  double base_lr = 0.002;
  double momentum = 0.9;

  /// Zero velocities matching `params`.
  static OptimState for_params(std::span<Parameter<float>* const> params, double base_lr, double momentum);
};

/// v <- mu v + g;  w <- w - lr (g + mu v). Throws before touching any state if
/// a gradient is non-finite or shapes disagree.
void nesterov_step(std::span<Parameter<float>* const> params, OptimState& state, double lr);

/// Two images and the flow mapping source pixels onto the target.
struct CorrespondencePair {
  Tensor<float> source;
  Tensor<float> target;
  FlowField flow;
};

struct TrainConfig {
  ModelConfig model;
  int negatives = 200;
  SearchWindow window = SearchWindow::symmetric(8, 8);
  double lr = 0.002;
  double momentum = 0.9;
  long lr_step = 50000;
  double lr_factor = 5.0;
  long iterations = 1000;
  int batch = 32;
  std::uint64_t seed = 1;
  long checkpoint_interval = 0;
  long val_interval = 0;
  int val_triplets = 256;
  long log_interval = 1;

  void validate() const;
};

struct TrainLogRow {
  long iteration = 0;
  double lr = 0;
  double loss = 0;
  std::optional<double> val_top1;
};

struct TrainHooks {
  std::function<void(const TrainLogRow&)> on_log;
  std::function<void(long iteration, const ModelParams<float>&, const OptimState&)> on_checkpoint;
};

/// Mean matching loss of `triplets` on one image pair, recorded on `tape`.
template <class Real>
Var triplet_loss(Tape<Real>& tape, ModelParams<Real>& model, const Tensor<Real>& source, const Tensor<Real>& target,
                 std::span<const TrainingTriplet> triplets, Mode mode);

/// Forward, backward and one optimizer step; returns the batch loss.
double train_step(ModelParams<float>& model, OptimState& state, const CorrespondencePair& pair,
                  std::span<const TrainingTriplet> triplets, double lr);

/// Fixed validation triplets: `count` spread evenly over the pairs.
std::vector<TrainingTriplet> validation_triplets(std::span<const CorrespondencePair> pairs, int count, int n_neg,
                                                 const SearchWindow& window, std::uint64_t seed);

/// Held-out top-1 accuracy of `model` on the given triplets.
double evaluate_top1(const ModelParams<float>& model, std::span<const CorrespondencePair> pairs,
                     std::span<const TrainingTriplet> triplets);

/// Runs state.iteration .. config.iterations. Each step picks a training pair
/// and samples a fresh batch from it; everything is derived from config.seed.
std::vector<TrainLogRow> train_loop(ModelParams<float>& model, OptimState& state, const TrainConfig& config,
                                    std::span<const CorrespondencePair> train,
                                    std::span<const CorrespondencePair> validation, const TrainHooks& hooks = {});

}  // namespace ascm
