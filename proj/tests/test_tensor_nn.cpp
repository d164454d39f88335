#include <doctest.h>

#include <cmath>

#include "ascm/grad_check.hpp"
#include "ascm/layers.hpp"
#include "ascm/parallel.hpp"
#include "support.hpp"

using namespace ascm;
using testing::random_tensor;

namespace {

template <class Real>
ResidualBlockParams<Real> random_block(int width, Rng& rng, double scale = 0.3) {
  ResidualBlockParams<Real> b;
  b.conv1 = {{"c1.w", random_tensor<Real>({width, width, 3, 3}, rng, scale), {}},
             {"c1.b", random_tensor<Real>({width}, rng, 0.1), {}}};
  b.conv2 = {{"c2.w", random_tensor<Real>({width, width, 3, 3}, rng, scale), {}},
             {"c2.b", random_tensor<Real>({width}, rng, 0.1), {}}};
  b.bn1 = BatchNormState<Real>::identity(width, "bn1");
  b.bn2 = BatchNormState<Real>::identity(width, "bn2");
  for (auto& v : b.bn1.gamma.value.values()) v = static_cast<Real>(1 + 0.2 * rng.normal());
  for (auto& v : b.bn2.beta.value.values()) v = static_cast<Real>(0.2 * rng.normal());
  return b;
}

}  // namespace

TEST_SUITE("tensor") {
  TEST_CASE("shape and data length agree") {
    Tensor<float> t({2, 3, 4});
    CHECK(t.size() == 24);
    CHECK_THROWS_AS(Tensor<float>({2, 0}), std::invalid_argument);
    CHECK_THROWS_AS(Tensor<float>({2, 2}, std::vector<float>(3)), std::invalid_argument);
  }
}

TEST_SUITE("conv2d") {
  TEST_CASE("all-ones kernel on all-ones input counts the in-image taps") {
    Tensor<float> x({1, 3, 3}, 1.0f), w({1, 1, 3, 3}, 1.0f), b({1});
    const auto y = conv2d(x, w, b);
    CHECK(y.at(0, 1, 1) == 9.0f);
    CHECK(y.at(0, 0, 0) == 4.0f);
    CHECK(y.at(0, 2, 2) == 4.0f);
    CHECK(y.at(0, 0, 1) == 6.0f);
    CHECK(y.at(0, 1, 2) == 6.0f);
  }

  TEST_CASE("zero weights give the bias") {
    Rng rng(1);
    const auto x = random_tensor<float>({3, 5, 6}, rng);
    Tensor<float> w({2, 3, 3, 3}), b({2});
    b[0] = 1.5f;
    b[1] = -2.0f;
    const auto y = conv2d(x, w, b);
    for (int r = 0; r < 5; ++r) {
      for (int c = 0; c < 6; ++c) {
        CHECK(y.at(0, r, c) == 1.5f);
        CHECK(y.at(1, r, c) == -2.0f);
      }
    }
  }

  TEST_CASE("matches the direct loop") {
    Rng rng(2);
    const auto x = random_tensor<float>({2, 5, 5}, rng);
    const auto w = random_tensor<float>({4, 2, 3, 3}, rng);
    const auto b = random_tensor<float>({4}, rng);
    const auto y = conv2d(x, w, b);
    const auto ref = testing::reference_conv(x, w, b);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-6));

    const auto w1 = random_tensor<float>({3, 2, 1, 1}, rng);
    const auto b1 = random_tensor<float>({3}, rng);
    const auto y1 = conv2d(x, w1, b1);
    const auto ref1 = testing::reference_conv(x, w1, b1);
    for (std::size_t i = 0; i < y1.size(); ++i) CHECK(y1[i] == doctest::Approx(ref1[i]).epsilon(1e-6));
  }

  TEST_CASE("linear for zero bias") {
    Rng rng(3);
    const auto x = random_tensor<float>({2, 6, 7}, rng);
    const auto z = random_tensor<float>({2, 6, 7}, rng);
    const auto w = random_tensor<float>({3, 2, 3, 3}, rng);
    Tensor<float> b({3});
    Tensor<float> mix(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) mix[i] = 2.0f * x[i] - 0.5f * z[i];
    const auto lhs = conv2d(mix, w, b);
    const auto cx = conv2d(x, w, b), cz = conv2d(z, w, b);
    for (std::size_t i = 0; i < lhs.size(); ++i) CHECK(lhs[i] == doctest::Approx(2 * cx[i] - 0.5 * cz[i]).epsilon(1e-5));
  }

  TEST_CASE("shape errors") {
    Tensor<float> x({2, 4, 4});
    CHECK_THROWS_AS(conv2d(x, Tensor<float>({1, 3, 3, 3}), Tensor<float>({1})), std::invalid_argument);
    CHECK_THROWS_AS(conv2d(x, Tensor<float>({1, 2, 3, 3}), Tensor<float>({2})), std::invalid_argument);
    CHECK_THROWS_AS(conv2d(x, Tensor<float>({1, 2, 2, 2}), Tensor<float>({1})), std::invalid_argument);
  }

  TEST_CASE("thread count does not change results") {
    Rng rng(4);
    const auto x = random_tensor<float>({8, 9, 11}, rng);
    const auto w = random_tensor<float>({8, 8, 3, 3}, rng);
    const auto b = random_tensor<float>({8}, rng);
    set_num_threads(1);
    const auto y1 = conv2d(x, w, b);
    set_num_threads(4);
    const auto y4 = conv2d(x, w, b);
    set_num_threads(0);
    CHECK(y1 == y4);
  }
}

TEST_SUITE("batchnorm") {
  TEST_CASE("train mode uses population statistics") {
    Tensor<float> x({1, 1, 3}, std::vector<float>{1, 2, 3});
    auto st = BatchNormState<float>::identity(1, "bn");
    st.eps = 0;
    const auto y = batchnorm(x, st, Mode::train);
    CHECK(y[0] == doctest::Approx(-1.22474).epsilon(1e-5));
    CHECK(y[1] == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(y[2] == doctest::Approx(1.22474).epsilon(1e-5));
    CHECK(st.running_mean[0] == doctest::Approx(0.2));
    CHECK(st.running_var[0] == doctest::Approx(0.9 + 0.1 * 2.0 / 3.0));
  }

  TEST_CASE("gamma zero gives beta") {
    Rng rng(5);
    const auto x = random_tensor<float>({2, 4, 4}, rng);
    auto st = BatchNormState<float>::identity(2, "bn");
    st.gamma.value.fill(0);
    st.beta.value.fill(5);
    for (auto mode : {Mode::train, Mode::infer}) {
      const auto y = batchnorm(x, st, mode);
      for (float v : y.values()) CHECK(v == 5.0f);
    }
  }

  TEST_CASE("infer mode with unit running statistics is the identity") {
    Rng rng(6);
    const auto x = random_tensor<float>({3, 4, 5}, rng);
    auto st = BatchNormState<float>::identity(3, "bn");
    st.eps = 0;
    CHECK(batchnorm(x, st, Mode::infer) == x);
    CHECK(st.running_mean == Tensor<float>({3}));
  }

  TEST_CASE("train output is standardized") {
    Rng rng(7);
    auto x = random_tensor<double>({4, 8, 8}, rng, 3.0);
    for (auto& v : x.values()) v += 2.0;
    auto st = BatchNormState<double>::identity(4, "bn");
    const auto y = batchnorm(x, st, Mode::train);
    for (int c = 0; c < 4; ++c) {
      double m = 0, s = 0;
      for (double v : y.channel(c)) m += v;
      m /= 64;
      for (double v : y.channel(c)) s += (v - m) * (v - m);
      CHECK(std::abs(m) < 1e-5);
      CHECK(std::abs(s / 64 - 1.0) < 1e-4);
    }
  }

  TEST_CASE("channel mismatch") {
    auto st = BatchNormState<float>::identity(2, "bn");
    CHECK_THROWS_AS(batchnorm(Tensor<float>({3, 2, 2}), st, Mode::train), std::invalid_argument);
  }
}

TEST_SUITE("relu") {
  TEST_CASE("values and subgradient") {
    const auto y = relu(Tensor<float>({3}, std::vector<float>{-1, 0, 2}));
    CHECK(y == Tensor<float>({3}, std::vector<float>{0, 0, 2}));
    CHECK(relu(Tensor<float>({4}, -3.0f)) == Tensor<float>({4}));

    Tape<double> tape;
    const Var x = tape.leaf(Tensor<double>({3}, std::vector<double>{-1, 2, 0}));
    tape.backward(sum(tape, relu(tape, x)));
    CHECK(tape.grad(x) == Tensor<double>({3}, std::vector<double>{0, 1, 0}));
  }
}

TEST_SUITE("residual_block") {
  TEST_CASE("zero branch") {
    Rng rng(8);
    const auto x = random_tensor<float>({3, 5, 5}, rng);
    ResidualBlockParams<float> b;
    b.conv1 = {{"w", Tensor<float>({3, 3, 3, 3}), {}}, {"b", Tensor<float>({3}), {}}};
    b.conv2 = b.conv1;
    b.bn1 = BatchNormState<float>::identity(3, "bn1");
    b.bn2 = BatchNormState<float>::identity(3, "bn2");
    CHECK(residual_block(x, b, Mode::infer, true) == relu(x));
    CHECK(residual_block(x, b, Mode::infer, false) == x);
  }

  TEST_CASE("gradient matches central differences") {
    Rng rng(9);
    auto block = random_block<double>(3, rng);
    const auto x = random_tensor<double>({3, 6, 5}, rng);
    const auto probe = random_tensor<double>({3, 6, 5}, rng);
    for (bool final_relu : {true, false}) {
      auto scratch = block;
      const double err = grad_check(
          [&](Tape<double>& t, Var in) {
            return inner_product(t, residual_block(t, in, scratch, Mode::train, final_relu), t.constant(probe));
          },
          x);
      CHECK(err < 1e-4);
      std::vector<Parameter<double>*> params{&block.conv1.weight, &block.conv1.bias, &block.bn1.gamma,
                                             &block.bn1.beta,     &block.conv2.weight, &block.conv2.bias,
                                             &block.bn2.gamma,    &block.bn2.beta};
      const auto perr = grad_check_parameters(
          [&](Tape<double>& t) {
            return inner_product(t, residual_block(t, t.constant(x), block, Mode::train, final_relu),
                                 t.constant(probe));
          },
          params);
      CHECK(perr.max_rel_error < 1e-4);
      CHECK(perr.checked > 0);
    }
  }

  TEST_CASE("channel mismatch") {
    Rng rng(10);
    auto block = random_block<float>(3, rng);
    CHECK_THROWS_AS(residual_block(Tensor<float>({2, 4, 4}), block, Mode::infer, true), std::invalid_argument);
  }
}

TEST_SUITE("bilinear_resize") {
  TEST_CASE("single pixel spreads to a constant") {
    const auto y = bilinear_resize(Tensor<float>({1, 1, 1}, 0.75f), 5, 3);
    for (float v : y.values()) CHECK(v == 0.75f);
  }

  TEST_CASE("same size is an exact copy") {
    Rng rng(11);
    const auto x = random_tensor<float>({2, 7, 5}, rng);
    CHECK(bilinear_resize(x, 7, 5) == x);
  }

  TEST_CASE("2x2 to 4x4 matches the half-pixel formula") {
    const Tensor<double> x({1, 2, 2}, std::vector<double>{0, 1, 2, 3});
    const auto y = bilinear_resize(x, 4, 4);
    auto src = [](int i, int in, int out) {
      const double s = (i + 0.5) * in / out - 0.5;
      return std::clamp(s, 0.0, static_cast<double>(in - 1));
    };
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c < 4; ++c) {
        const double sy = src(r, 2, 4), sx = src(c, 2, 4);
        const int y0 = static_cast<int>(std::floor(sy)), x0 = static_cast<int>(std::floor(sx));
        const int y1 = std::min(y0 + 1, 1), x1 = std::min(x0 + 1, 1);
        const double fy = sy - y0, fx = sx - x0;
        const double expect = (1 - fy) * ((1 - fx) * x.at(0, y0, x0) + fx * x.at(0, y0, x1)) +
                              fy * ((1 - fx) * x.at(0, y1, x0) + fx * x.at(0, y1, x1));
        CHECK(y.at(0, r, c) == doctest::Approx(expect).epsilon(1e-12));
      }
    }
    CHECK(y.at(0, 0, 0) == 0.0);
    CHECK(y.at(0, 3, 3) == 3.0);
    CHECK(y.at(0, 1, 1) == doctest::Approx(0.75));
  }

  TEST_CASE("gradient matches central differences") {
    Rng rng(12);
    const auto x = random_tensor<double>({2, 5, 3}, rng);
    for (auto [h, w] : {std::pair{9, 7}, std::pair{3, 2}, std::pair{5, 3}}) {
      const auto probe = random_tensor<double>({2, h, w}, rng);
      const double err = grad_check(
          [&, h = h, w = w](Tape<double>& t, Var in) {
            return inner_product(t, bilinear_resize(t, in, h, w), t.constant(probe));
          },
          x);
      CHECK(err < 1e-8);
    }
  }

  TEST_CASE("non-positive size") { CHECK_THROWS_AS(bilinear_resize(Tensor<float>({1, 2, 2}), 0, 2), std::invalid_argument); }
}

TEST_SUITE("channel_softmax") {
  TEST_CASE("analytic values") {
    const auto y = channel_softmax(Tensor<double>({4, 1, 1}, 0.3));
    for (double v : y.values()) CHECK(v == doctest::Approx(0.25));
    const auto z = channel_softmax(Tensor<double>({2, 1, 1}, std::vector<double>{std::log(2.0), 0.0}));
    CHECK(z[0] == doctest::Approx(2.0 / 3.0));
    CHECK(z[1] == doctest::Approx(1.0 / 3.0));
  }

  TEST_CASE("shift invariance and simplex") {
    Rng rng(13);
    auto x = random_tensor<double>({3, 4, 4}, rng, 20.0);
    const auto y = channel_softmax(x);
    for (auto& v : x.values()) v += 1000.0;
    const auto y2 = channel_softmax(x);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(y2[i]).epsilon(1e-12));
    for (int p = 0; p < 16; ++p) {
      double s = 0;
      for (int c = 0; c < 3; ++c) {
        s += y[c * 16 + p];
        CHECK(y[c * 16 + p] >= 0.0);
        CHECK(y[c * 16 + p] <= 1.0);
      }
      CHECK(std::abs(s - 1) < 1e-12);
    }
  }

  TEST_CASE("gradient matches central differences") {
    Rng rng(14);
    const auto x = random_tensor<double>({3, 3, 4}, rng);
    const auto probe = random_tensor<double>({3, 3, 4}, rng);
    CHECK(grad_check([&](Tape<double>& t, Var in) { return inner_product(t, channel_softmax(t, in), t.constant(probe)); },
                     x) < 1e-8);
  }
}

TEST_SUITE("autograd") {
  TEST_CASE("sum of a product") {
    Rng rng(15);
    const auto xv = random_tensor<double>({5}, rng);
    Tape<double> tape;
    const Var w = tape.leaf(random_tensor<double>({5}, rng));
    const Var x = tape.constant(xv);
    tape.backward(sum(tape, mul(tape, w, x)));
    CHECK(tape.grad(w) == xv);
  }

  TEST_CASE("inner product") {
    Rng rng(16);
    const auto pv = random_tensor<double>({4}, rng), qv = random_tensor<double>({4}, rng);
    Tape<double> tape;
    const Var p = tape.leaf(pv), q = tape.leaf(qv);
    tape.backward(inner_product(tape, p, q));
    CHECK(tape.grad(p) == qv);
    CHECK(tape.grad(q) == pv);
  }

  TEST_CASE("unreached parameters get zero gradients") {
    Parameter<double> used{"used", Tensor<double>({2}, 1.0), {}};
    Parameter<double> unused{"unused", Tensor<double>({3}, 1.0), {}};
    Tape<double> tape;
    const Var a = tape.param(used);
    tape.param(unused);
    tape.backward(sum(tape, a));
    CHECK(used.grad == Tensor<double>({2}, 1.0));
    CHECK(unused.grad == Tensor<double>({3}));
  }

  TEST_CASE("shared parameters accumulate") {
    Parameter<double> p{"p", Tensor<double>({2}, std::vector<double>{1, 2}), {}};
    Tape<double> tape;
    const Var a = tape.param(p), b = tape.param(p);
    CHECK(a.id == b.id);
    tape.backward(add(tape, inner_product(tape, a, tape.constant(Tensor<double>({2}, 1.0))),
                      inner_product(tape, b, tape.constant(Tensor<double>({2}, 2.0)))));
    CHECK(p.grad == Tensor<double>({2}, 3.0));
  }

  TEST_CASE("non-scalar root and double backward are errors") {
    Tape<double> tape;
    const Var x = tape.leaf(Tensor<double>({3}, 1.0));
    CHECK_THROWS_AS(tape.backward(x), std::invalid_argument);
    const Var s = sum(tape, x);
    tape.backward(s);
    CHECK_THROWS_AS(tape.backward(s), std::logic_error);
  }

  TEST_CASE("non-finite gradients are reported") {
    Tape<double> tape;
    const Var x = tape.leaf(Tensor<double>({1}, 1.0));
    const Var big = tape.constant(Tensor<double>({1}, INFINITY));
    CHECK_THROWS_AS(tape.backward(inner_product(tape, x, mul(tape, big, x))), std::domain_error);
  }
}

TEST_SUITE("grad_check") {
  TEST_CASE("sum of squares") {
    const double err = grad_check([](Tape<double>& t, Var x) { return inner_product(t, x, x); },
                                  Tensor<double>({2}, std::vector<double>{1, 2}));
    CHECK(err < 1e-8);
  }

  TEST_CASE("relu away from the kink") {
    const double err = grad_check([](Tape<double>& t, Var x) { return sum(t, relu(t, x)); },
                                  Tensor<double>({4}, std::vector<double>{-1.5, 0.7, 2.0, -0.2}));
    CHECK(err < 1e-8);
  }

  TEST_CASE("detects a wrong gradient") {
    // inner_product(x, stop(x)) has gradient x while the function's derivative is 2x.
    const double err = grad_check(
        [](Tape<double>& t, Var x) { return inner_product(t, x, t.constant(t.value(x))); },
        Tensor<double>({2}, std::vector<double>{1, 2}));
    CHECK(err > 0.3);
  }

  TEST_CASE("a step across a relu kink is measured again with a smaller step") {
    Parameter<double> p{"p", Tensor<double>({2}, std::vector<double>{5e-5, 0.5}), {}};
    std::vector<Parameter<double>*> params{&p};
    auto loss = [&](Tape<double>& t) { return sum(t, relu(t, t.param(p))); };
    const auto raw = grad_check_parameters(loss, params, 1e-4);
    CHECK(raw.max_rel_error > 0.1);
    CHECK(raw.refined == 0);
    const auto refined = grad_check_parameters(loss, params, 1e-4, 1e-4);
    CHECK(refined.refined == 1);
    CHECK(refined.max_rel_error < 1e-8);
    CHECK(refined.max_rel_error_at_h == raw.max_rel_error);
    CHECK(p.value[0] == 5e-5);
  }

  TEST_CASE("refinement does not hide a wrong gradient") {
    Parameter<double> p{"p", Tensor<double>({2}, std::vector<double>{1, 2}), {}};
    std::vector<Parameter<double>*> params{&p};
    const auto err = grad_check_parameters(
        [&](Tape<double>& t) {
          const Var x = t.param(p);
          return inner_product(t, x, t.constant(t.value(x)));
        },
        params, 1e-4, 1e-4);
    CHECK(err.refined == 2);
    CHECK(err.max_rel_error > 0.3);
  }
}
