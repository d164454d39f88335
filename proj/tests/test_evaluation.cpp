#include <doctest.h>

#include <cmath>
#include <sstream>

#include "ascm/evaluation.hpp"
#include "support.hpp"

using namespace ascm;

namespace {

/// Features where each pixel is a one-hot code of its own position.
Tensor<float> one_hot_positions(int h, int w) {
  Tensor<float> f({h * w, h, w});
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) f.at(r * w + c, r, c) = 1.0f;
  }
  return f;
}

/// Source feature of pixel p is the one-hot code of p + flow.
Tensor<float> shifted_one_hot(const FlowField& flow) {
  const int h = flow.height, w = flow.width;
  Tensor<float> f({h * w, h, w});
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const auto i = flow.index(r, c);
      const int tr = std::clamp(r + static_cast<int>(std::lround(flow.v[i])), 0, h - 1);
      const int tc = std::clamp(c + static_cast<int>(std::lround(flow.u[i])), 0, w - 1);
      f.at(tr * w + tc, r, c) = 1.0f;
    }
  }
  return f;
}

}  // namespace

TEST_SUITE("top1_accuracy") {
  TEST_CASE("oracle features are always right") {
    const FlowField flow = FlowField::constant(12, 12, 1, -1);
    const auto triplets = sample_triplets(flow, 40, 30, SearchWindow::symmetric(3, 3), 1);
    const std::vector<FeaturePair> features{{shifted_one_hot(flow), one_hot_positions(12, 12)}};
    CHECK(top1_accuracy(triplets, features) == 1.0);
  }

  TEST_CASE("constant features hit only when the ground truth comes first") {
    const FlowField flow = FlowField::constant(12, 12, 0, 0);
    const auto triplets = sample_triplets(flow, 60, 10, SearchWindow::symmetric(2, 2), 2);
    const std::vector<FeaturePair> features{{Tensor<float>({3, 12, 12}, 1.0f), Tensor<float>({3, 12, 12}, 1.0f)}};
    std::size_t first = 0;
    for (const auto& t : triplets) first += *t.candidates().gt_index == 0;
    CHECK(top1_accuracy(triplets, features) == static_cast<double>(first) / triplets.size());
  }

  TEST_CASE("random features sit near chance") {
    Rng rng(3);
    const FlowField flow = FlowField::constant(30, 30, 0, 0);
    const auto triplets = sample_triplets(flow, 400, 200, SearchWindow::symmetric(8, 8), 4);
    const std::vector<FeaturePair> features{
        {testing::random_tensor<float>({16, 30, 30}, rng), testing::random_tensor<float>({16, 30, 30}, rng)}};
    const double acc = top1_accuracy(triplets, features);
    CHECK(acc >= 0.0);
    CHECK(acc < 0.03);
  }

  TEST_CASE("invariant to negative order and rejects empty input") {
    Rng rng(5);
    const FlowField flow = FlowField::constant(10, 10, 0, 0);
    auto triplets = sample_triplets(flow, 30, 20, SearchWindow::symmetric(3, 3), 6);
    const std::vector<FeaturePair> features{
        {testing::random_tensor<float>({4, 10, 10}, rng), testing::random_tensor<float>({4, 10, 10}, rng)}};
    const double acc = top1_accuracy(triplets, features);
    for (auto& t : triplets) std::reverse(t.negatives.begin(), t.negatives.end());
    CHECK(top1_accuracy(triplets, features) == acc);
    CHECK_THROWS_AS(top1_accuracy({}, features), std::invalid_argument);
  }
}

TEST_SUITE("pck") {
  TEST_CASE("reference length") {
    CHECK(pck_length(30, 40, 30, 40) == 50.0);
    CHECK(pck_length(30, 40, 60, 80) == 75.0);
    CHECK(pck_length(100, 100, 100, 100) == doctest::Approx(141.42135623730951));
  }

  KeypointPair with_error(double dx, double dy, bool visible = true) {
    KeypointPair kp;
    kp.ground_truth = {10, 20};
    kp.predicted = {10 + dx, 20 + dy};
    kp.visible = visible;
    kp.reference_length = 50;
    return kp;
  }

  TEST_CASE("threshold is closed") {
    CHECK(pck(std::vector{with_error(4, 0)}, 0.1, 50) == 1.0);
    CHECK(pck(std::vector{with_error(6, 0)}, 0.1, 50) == 0.0);
    CHECK(pck(std::vector{with_error(3, 4)}, 0.1, 50) == 1.0);
    CHECK(pck(std::vector{with_error(0, 0), with_error(6, 0)}, 0.1) == 0.5);
  }

  TEST_CASE("invisible keypoints are skipped") {
    CHECK(pck(std::vector{with_error(0, 0), with_error(40, 0, false)}, 0.01, 50) == 1.0);
    CHECK_THROWS_AS(pck(std::vector{with_error(0, 0, false)}, 0.1, 50), std::invalid_argument);
    CHECK_THROWS_AS(pck(std::vector{with_error(0, 0)}, 0.0, 50), std::invalid_argument);
  }

  TEST_CASE("curve is monotone, exact predictions score one, translation changes nothing") {
    Rng rng(7);
    std::vector<KeypointPair> pairs, exact, moved;
    for (int i = 0; i < 100; ++i) {
      auto kp = with_error(rng.normal() * 4, rng.normal() * 4, rng.uniform() < 0.9);
      pairs.push_back(kp);
      auto e = kp;
      e.predicted = e.ground_truth;
      exact.push_back(e);
      kp.ground_truth.x += 17;
      kp.predicted.x += 17;
      kp.source.y -= 3;
      kp.ground_truth.y -= 3;
      kp.predicted.y -= 3;
      moved.push_back(kp);
    }
    const auto alphas = default_pck_alphas();
    REQUIRE(alphas.size() == 10);
    CHECK(alphas.front() == doctest::Approx(0.01));
    CHECK(alphas.back() == doctest::Approx(0.10));
    const auto curve = pck_curve(pairs, alphas);
    for (std::size_t i = 1; i < curve.size(); ++i) CHECK(curve[i].pck >= curve[i - 1].pck);
    for (const auto& p : pck_curve(exact, alphas)) CHECK(p.pck == 1.0);
    const auto shifted = pck_curve(moved, alphas);
    for (std::size_t i = 0; i < curve.size(); ++i) CHECK(shifted[i].pck == curve[i].pck);
  }

  TEST_CASE("csv layout") {
    std::ostringstream os;
    const std::vector<PckPoint> curve{{0.05, 0.5, 4}};
    write_pck_csv(os, curve);
    CHECK(os.str() == "alpha,pck,visible\n0.05,0.5,4\n");
    std::ostringstream e;
    write_epe_csv(e, 1.5, 10, 0.25, 4);
    CHECK(e.str() == "epe_all,n_all,epe_masked,n_masked\n1.5,10,0.25,4\n");
    std::ostringstream t;
    const std::vector<Top1Row> rows{{"single", 0.75, 100, 0.9}};
    write_top1_csv(t, rows);
    CHECK(t.str() == "configuration,top1,triplets,final_loss\nsingle,0.75,100,0.9\n");
  }
}
