#include "ascm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "ascm/evaluation.hpp"
#include "ascm/rng.hpp"

namespace ascm {

CandidateSet TrainingTriplet::candidates() const {
  CandidateSet set;
  set.source = source;
  set.targets = negatives;
  set.targets.push_back(target);
  std::sort(set.targets.begin(), set.targets.end());
  set.gt_index = static_cast<int>(std::lower_bound(set.targets.begin(), set.targets.end(), target) -
                                  set.targets.begin());
  return set;
}

std::vector<TrainingTriplet> sample_triplets(const FlowField& ground_truth, int n_pairs, int n_neg,
                                             const SearchWindow& window, std::uint64_t seed, int pair_id) {
  window.validate();
  if (n_pairs < 1) throw std::invalid_argument("sample_triplets: n_pairs must be positive");
  if (n_neg < 0) throw std::invalid_argument("sample_triplets: n_neg must be non-negative");
  if (window.area() < n_neg + 1) {
    throw std::invalid_argument("sample_triplets: window of " + std::to_string(window.area()) +
                                " pixels cannot supply " + std::to_string(n_neg) + " distinct negatives");
  }
  const int H = ground_truth.height, W = ground_truth.width;

  struct Eligible {
    Pixel source, target;
  };
  std::vector<Eligible> eligible;
  for (int r = 0; r < H; ++r) {
    for (int c = 0; c < W; ++c) {
      const std::size_t i = ground_truth.index(r, c);
      if (!ground_truth.valid[i]) continue;
      const long dy = std::lround(ground_truth.v[i]), dx = std::lround(ground_truth.u[i]);
      const long tr = r + dy, tc = c + dx;
      if (tr < 0 || tr >= H || tc < 0 || tc >= W) continue;
      if (!window.contains(static_cast<int>(dy), static_cast<int>(dx))) continue;
      const long rows = std::min(H - 1, r + window.y_max) - std::max(0, r + window.y_min) + 1;
      const long cols = std::min(W - 1, c + window.x_max) - std::max(0, c + window.x_min) + 1;
      if (rows * cols < n_neg + 1) continue;
      eligible.push_back({{r, c}, {static_cast<int>(tr), static_cast<int>(tc)}});
    }
  }
  if (static_cast<int>(eligible.size()) < n_pairs) {
    throw std::invalid_argument("sample_triplets: only " + std::to_string(eligible.size()) +
                                " usable ground-truth pixels for " + std::to_string(n_pairs) + " pairs");
  }

  Rng rng(seed);
  std::vector<TrainingTriplet> out;
  out.reserve(n_pairs);
  for (int k = 0; k < n_pairs; ++k) {
    const std::size_t pick = k + rng.below(eligible.size() - k);
    std::swap(eligible[k], eligible[pick]);
    const Eligible& e = eligible[k];

    std::vector<Pixel> pool = candidate_window(e.source, window, H, W).targets;
    pool.erase(std::find(pool.begin(), pool.end(), e.target));
    for (int j = 0; j < n_neg; ++j) {
      const std::size_t q = j + rng.below(pool.size() - j);
      std::swap(pool[j], pool[q]);
    }
    pool.resize(n_neg);
    out.push_back({pair_id, e.source, e.target, std::move(pool)});
  }
  return out;
}

double lr_schedule(long iteration, double base, long step, double factor) {
  if (iteration < 0) throw std::invalid_argument("lr_schedule: negative iteration");
  if (step <= 0) throw std::invalid_argument("lr_schedule: step must be positive");
  return base / std::pow(factor, static_cast<double>(iteration / step));
}

OptimState OptimState::for_params(std::span<Parameter<float>* const> params, double base_lr, double momentum) {
  OptimState s;
  s.base_lr = base_lr;
  s.momentum = momentum;
  for (const auto* p : params) s.velocity.emplace_back(p->value.shape());
  return s;
}

void nesterov_step(std::span<Parameter<float>* const> params, OptimState& state, double lr) {
  if (state.velocity.empty()) {
    for (const auto* p : params) state.velocity.emplace_back(p->value.shape());
  }
  if (state.velocity.size() != params.size()) {
    throw std::invalid_argument("nesterov_step: " + std::to_string(state.velocity.size()) + " velocity buffers for " +
                                std::to_string(params.size()) + " parameters");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& p = *params[k];
    if (!p.grad.same_shape(p.value) || !state.velocity[k].same_shape(p.value)) {
      throw std::invalid_argument("nesterov_step: shape mismatch for parameter '" + p.name + "'");
    }
    if (!p.grad.all_finite()) throw std::domain_error("nesterov_step: non-finite gradient in '" + p.name + "'");
  }
  const double mu = state.momentum;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = *params[k];
    auto& vel = state.velocity[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      const double v = mu * vel[i] + g;
      vel[i] = static_cast<float>(v);
      p.value[i] = static_cast<float>(p.value[i] - lr * (g + mu * v));
    }
  }
  ++state.iteration;
}

void TrainConfig::validate() const {
  model.validate();
  window.validate();
  if (negatives < 1) throw std::invalid_argument("train: negatives must be positive");
  if (batch < 1) throw std::invalid_argument("train: batch must be positive");
  if (iterations < 0) throw std::invalid_argument("train: iterations must be non-negative");
  if (!(lr >= 0)) throw std::invalid_argument("train: lr must be non-negative");
  if (!(momentum >= 0 && momentum < 1)) throw std::invalid_argument("train: momentum must be in [0, 1)");
  if (lr_step < 1 || !(lr_factor > 0)) throw std::invalid_argument("train: invalid learning-rate schedule");
  if (window.area() < negatives + 1) {
    throw std::invalid_argument("train: search window holds " + std::to_string(window.area()) +
                                " pixels, fewer than negatives + 1");
  }
}

template <class Real>
Var triplet_loss(Tape<Real>& tape, ModelParams<Real>& model, const Tensor<Real>& source, const Tensor<Real>& target,
                 std::span<const TrainingTriplet> triplets, Mode mode) {
  if (triplets.empty()) throw std::invalid_argument("triplet_loss: empty batch");
  const std::size_t n = triplets.front().negatives.size() + 1;
  std::vector<Pixel> sources;
  std::vector<Pixel> candidates;
  std::vector<int> targets;
  for (const auto& t : triplets) {
    if (t.negatives.size() + 1 != n) throw std::invalid_argument("triplet_loss: unequal candidate counts");
    const CandidateSet set = t.candidates();
    sources.push_back(t.source);
    candidates.insert(candidates.end(), set.targets.begin(), set.targets.end());
    targets.push_back(*set.gt_index);
  }
  const Var fs = autoscale_features(tape, tape.constant(source), model, mode);
  const Var ft = autoscale_features(tape, tape.constant(target), model, mode);
  const Var p = gather_pixels<Real>(tape, fs, sources);
  const Var q = gather_pixels<Real>(tape, ft, candidates);
  const Var scores = grouped_inner_products(tape, p, q, static_cast<int>(n));
  return softmax_cross_entropy<Real>(tape, scores, targets);
}

template Var triplet_loss(Tape<float>&, ModelParams<float>&, const Tensor<float>&, const Tensor<float>&,
                          std::span<const TrainingTriplet>, Mode);
template Var triplet_loss(Tape<double>&, ModelParams<double>&, const Tensor<double>&, const Tensor<double>&,
                          std::span<const TrainingTriplet>, Mode);

double train_step(ModelParams<float>& model, OptimState& state, const CorrespondencePair& pair,
                  std::span<const TrainingTriplet> triplets, double lr) {
  model.zero_grad();
  Tape<float> tape;
  const Var loss = triplet_loss(tape, model, pair.source, pair.target, triplets, Mode::train);
  const double value = tape.value(loss)[0];
  if (!std::isfinite(value)) {
    throw std::domain_error("train: non-finite loss at iteration " + std::to_string(state.iteration));
  }
  tape.backward(loss);
  nesterov_step(model.parameters(), state, lr);
  return value;
}

std::vector<TrainingTriplet> validation_triplets(std::span<const CorrespondencePair> pairs, int count, int n_neg,
                                                 const SearchWindow& window, std::uint64_t seed) {
  if (pairs.empty() || count < 1) return {};
  std::vector<TrainingTriplet> out;
  const int n = static_cast<int>(pairs.size());
  for (int i = 0; i < n; ++i) {
    const int share = count / n + (i < count % n ? 1 : 0);
    if (share == 0) continue;
    auto t = sample_triplets(pairs[i].flow, share, n_neg, window, mix_seed(seed, i), i);
    out.insert(out.end(), std::make_move_iterator(t.begin()), std::make_move_iterator(t.end()));
  }
  return out;
}

double evaluate_top1(const ModelParams<float>& model, std::span<const CorrespondencePair> pairs,
                     std::span<const TrainingTriplet> triplets) {
  std::vector<FeaturePair> features(pairs.size());
  std::vector<bool> used(pairs.size(), false);
  for (const auto& t : triplets) {
    if (t.pair_id < 0 || t.pair_id >= static_cast<int>(pairs.size())) {
      throw std::out_of_range("evaluate_top1: triplet refers to unknown pair");
    }
    used[t.pair_id] = true;
  }
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (!used[i]) continue;
    features[i] = {autoscale_features(pairs[i].source, model), autoscale_features(pairs[i].target, model)};
  }
  return top1_accuracy(triplets, features);
}

std::vector<TrainLogRow> train_loop(ModelParams<float>& model, OptimState& state, const TrainConfig& config,
                                    std::span<const CorrespondencePair> train,
                                    std::span<const CorrespondencePair> validation, const TrainHooks& hooks) {
  config.validate();
  if (!(model.config == config.model)) throw std::invalid_argument("train: model does not match configuration");
  if (train.empty() && state.iteration < config.iterations) throw std::invalid_argument("train: dataset is empty");
  const auto params = model.parameters();
  if (state.velocity.empty()) state = OptimState::for_params(params, config.lr, config.momentum);
  state.base_lr = config.lr;
  state.momentum = config.momentum;

  const auto val = validation_triplets(validation, config.val_triplets, config.negatives, config.window,
                                       mix_seed(config.seed, 0x5eed));
  std::vector<TrainLogRow> log;
  while (state.iteration < config.iterations) {
    const long it = state.iteration;
    Rng rng(mix_seed(config.seed, static_cast<std::uint64_t>(it) + 1));
    const int pair_id = static_cast<int>(rng.below(train.size()));
    const auto batch =
        sample_triplets(train[pair_id].flow, config.batch, config.negatives, config.window, rng.next(), pair_id);
    const double lr = lr_schedule(it, config.lr, config.lr_step, config.lr_factor);

    TrainLogRow row{it, lr, train_step(model, state, train[pair_id], batch, lr), std::nullopt};
    const long done = it + 1;
    if (config.val_interval > 0 && done % config.val_interval == 0 && !val.empty()) {
      row.val_top1 = evaluate_top1(model, validation, val);
    }
    if ((config.log_interval > 0 && done % config.log_interval == 0) || row.val_top1) {
      log.push_back(row);
      if (hooks.on_log) hooks.on_log(row);
    }
    if (config.checkpoint_interval > 0 && done % config.checkpoint_interval == 0 && hooks.on_checkpoint) {
      hooks.on_checkpoint(done, model, state);
    }
  }
  return log;
}

}  // namespace ascm
