#include "ascm/layers.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "ascm/parallel.hpp"

namespace ascm {

namespace {

using std::size_t;

template <class Real>
Real dot(const Real* a, const Real* b, int n) {
  // Fixed lane split so the reduction order never depends on the caller.
  Real lane[8] = {};
  int i = 0;
  for (; i + 8 <= n; i += 8) {
    for (int j = 0; j < 8; ++j) lane[j] += a[i + j] * b[i + j];
  }
  Real tail = 0;
  for (; i < n; ++i) tail += a[i] * b[i];
  return ((lane[0] + lane[1]) + (lane[2] + lane[3])) + ((lane[4] + lane[5]) + (lane[6] + lane[7])) + tail;
}

struct ConvGeometry {
  int in_channels, out_channels, height, width, kernel;
};

template <class Real>
ConvGeometry check_conv(const Tensor<Real>& input, const Tensor<Real>& weight, const Tensor<Real>& bias) {
  require_map(input, "conv2d");
  if (weight.rank() != 4 || weight.dim(2) != weight.dim(3) || weight.dim(2) % 2 == 0) {
    throw std::invalid_argument("conv2d: weight must be O x C x k x k with odd k, got " +
                                shape_to_string(weight.shape()));
  }
  if (weight.dim(1) != input.channels()) {
    throw std::invalid_argument("conv2d: input has " + std::to_string(input.channels()) +
                                " channels, weight expects " + std::to_string(weight.dim(1)));
  }
  if (bias.rank() != 1 || bias.dim(0) != weight.dim(0)) {
    throw std::invalid_argument("conv2d: bias must have " + std::to_string(weight.dim(0)) + " entries, got " +
                                shape_to_string(bias.shape()));
  }
  return {input.channels(), weight.dim(0), input.height(), input.width(), weight.dim(2)};
}

template <class Real>
void conv_forward(const ConvGeometry& g, const Real* in, const Real* w, const Real* b, Real* out) {
  const int pad = g.kernel / 2;
  const size_t plane = static_cast<size_t>(g.height) * g.width;
  parallel_for(g.out_channels, [&](std::ptrdiff_t o) {
    Real* dst = out + o * plane;
    std::fill(dst, dst + plane, b[o]);
    for (int c = 0; c < g.in_channels; ++c) {
      const Real* src = in + c * plane;
      const Real* wk = w + (static_cast<size_t>(o) * g.in_channels + c) * g.kernel * g.kernel;
      for (int ky = 0; ky < g.kernel; ++ky) {
        const int dy = ky - pad;
        const int y0 = std::max(0, -dy), y1 = std::min(g.height, g.height - dy);
        for (int kx = 0; kx < g.kernel; ++kx) {
          const int dx = kx - pad;
          const int x0 = std::max(0, -dx), x1 = std::min(g.width, g.width - dx);
          const Real wv = wk[ky * g.kernel + kx];
          for (int y = y0; y < y1; ++y) {
            Real* drow = dst + static_cast<size_t>(y) * g.width;
            const Real* srow = src + static_cast<size_t>(y + dy) * g.width + dx;
            for (int x = x0; x < x1; ++x) drow[x] += wv * srow[x];
          }
        }
      }
    }
  });
}

template <class Real>
void conv_backward_input(const ConvGeometry& g, const Real* gout, const Real* w, Real* gin) {
  const int pad = g.kernel / 2;
  const size_t plane = static_cast<size_t>(g.height) * g.width;
  parallel_for(g.in_channels, [&](std::ptrdiff_t c) {
    Real* dst = gin + c * plane;
    for (int o = 0; o < g.out_channels; ++o) {
      const Real* src = gout + o * plane;
      const Real* wk = w + (static_cast<size_t>(o) * g.in_channels + c) * g.kernel * g.kernel;
      for (int ky = 0; ky < g.kernel; ++ky) {
        const int dy = ky - pad;
        const int y0 = std::max(0, -dy), y1 = std::min(g.height, g.height - dy);
        for (int kx = 0; kx < g.kernel; ++kx) {
          const int dx = kx - pad;
          const int x0 = std::max(0, -dx), x1 = std::min(g.width, g.width - dx);
          const Real wv = wk[ky * g.kernel + kx];
          for (int y = y0; y < y1; ++y) {
            Real* drow = dst + static_cast<size_t>(y + dy) * g.width + dx;
            const Real* srow = src + static_cast<size_t>(y) * g.width;
            for (int x = x0; x < x1; ++x) drow[x] += wv * srow[x];
          }
        }
      }
    }
  });
}

template <class Real>
void conv_backward_weight(const ConvGeometry& g, const Real* gout, const Real* in, Real* gw, Real* gb) {
  const int pad = g.kernel / 2;
  const size_t plane = static_cast<size_t>(g.height) * g.width;
  parallel_for(g.out_channels, [&](std::ptrdiff_t o) {
    const Real* go = gout + o * plane;
    if (gb) {
      Real s = 0;
      for (size_t i = 0; i < plane; ++i) s += go[i];
      gb[o] += s;
    }
    if (!gw) return;
    for (int c = 0; c < g.in_channels; ++c) {
      const Real* src = in + c * plane;
      Real* wk = gw + (static_cast<size_t>(o) * g.in_channels + c) * g.kernel * g.kernel;
      for (int ky = 0; ky < g.kernel; ++ky) {
        const int dy = ky - pad;
        const int y0 = std::max(0, -dy), y1 = std::min(g.height, g.height - dy);
        for (int kx = 0; kx < g.kernel; ++kx) {
          const int dx = kx - pad;
          const int x0 = std::max(0, -dx), x1 = std::min(g.width, g.width - dx);
          Real acc = 0;
          for (int y = y0; y < y1; ++y) {
            acc += dot(go + static_cast<size_t>(y) * g.width + x0,
                       src + static_cast<size_t>(y + dy) * g.width + x0 + dx, x1 - x0);
          }
          wk[ky * g.kernel + kx] += acc;
        }
      }
    }
  });
}

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> inv_std;
  std::vector<double> var;
};

template <class Real>
ChannelStats batch_stats(const Tensor<Real>& x, double eps) {
  const int C = x.channels();
  const size_t n = x.plane();
  ChannelStats s{std::vector<double>(C), std::vector<double>(C), std::vector<double>(C)};
  for (int c = 0; c < C; ++c) {
    auto ch = x.channel(c);
    double m = 0;
    for (Real v : ch) m += v;
    m /= static_cast<double>(n);
    double var = 0;
    for (Real v : ch) var += (v - m) * (v - m);
    var /= static_cast<double>(n);
    s.mean[c] = m;
    s.var[c] = var;
    s.inv_std[c] = 1.0 / std::sqrt(var + eps);
  }
  return s;
}

template <class Real>
void check_bn(const Tensor<Real>& x, const BatchNormState<Real>& st) {
  require_map(x, "batchnorm");
  if (x.channels() != st.channels()) {
    throw std::invalid_argument("batchnorm: input has " + std::to_string(x.channels()) + " channels, state has " +
                                std::to_string(st.channels()));
  }
  if (x.plane() == 0) throw std::invalid_argument("batchnorm: zero spatial extent");
  if (!(st.eps >= 0)) throw std::invalid_argument("batchnorm: epsilon must be non-negative");
}

// Normalizes `x` with the given statistics; updates running stats in train mode.
template <class Real>
Tensor<Real> bn_apply(const Tensor<Real>& x, BatchNormState<Real>& st, Mode mode, ChannelStats& stats) {
  check_bn(x, st);
  const int C = x.channels();
  if (mode == Mode::train) {
    stats = batch_stats(x, st.eps);
    for (int c = 0; c < C; ++c) {
      st.running_mean[c] = static_cast<Real>((1.0 - st.momentum) * st.running_mean[c] + st.momentum * stats.mean[c]);
      st.running_var[c] =
          static_cast<Real>((1.0 - st.momentum) * st.running_var[c] + st.momentum * stats.var[c]);
    }
  } else {
    stats.mean.assign(C, 0.0);
    stats.inv_std.assign(C, 0.0);
    for (int c = 0; c < C; ++c) {
      stats.mean[c] = st.running_mean[c];
      stats.inv_std[c] = 1.0 / std::sqrt(static_cast<double>(st.running_var[c]) + st.eps);
    }
  }
  Tensor<Real> y(x.shape());
  for (int c = 0; c < C; ++c) {
    const Real gamma = st.gamma.value[c], beta = st.beta.value[c];
    const Real mean = static_cast<Real>(stats.mean[c]);
    const Real inv = static_cast<Real>(stats.inv_std[c]);
    auto src = x.channel(c);
    auto dst = y.channel(c);
    for (size_t i = 0; i < src.size(); ++i) dst[i] = gamma * ((src[i] - mean) * inv) + beta;
  }
  require_finite(y, "batchnorm");
  return y;
}

struct ResizeAxis {
  std::vector<int> lo, hi;
  std::vector<double> frac;
};

ResizeAxis resize_axis(int in, int out) {
  ResizeAxis a;
  a.lo.resize(out);
  a.hi.resize(out);
  a.frac.resize(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (int i = 0; i < out; ++i) {
    double s = (i + 0.5) * scale - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in - 1));
    const int lo = static_cast<int>(std::floor(s));
    a.lo[i] = lo;
    a.hi[i] = std::min(lo + 1, in - 1);
    a.frac[i] = s - lo;
  }
  return a;
}

}  // namespace

template <class Real>
BatchNormState<Real> BatchNormState<Real>::identity(int channels, const std::string& name) {
  BatchNormState s;
  s.gamma = {name + ".gamma", Tensor<Real>({channels}, Real(1)), {}};
  s.beta = {name + ".beta", Tensor<Real>({channels}, Real(0)), {}};
  s.running_mean = Tensor<Real>({channels}, Real(0));
  s.running_var = Tensor<Real>({channels}, Real(1));
  return s;
}

// ---- plain kernels ----------------------------------------------------------

template <class Real>
Tensor<Real> conv2d(const Tensor<Real>& input, const Tensor<Real>& weight, const Tensor<Real>& bias) {
  const ConvGeometry g = check_conv(input, weight, bias);
  Tensor<Real> out({g.out_channels, g.height, g.width});
  conv_forward(g, input.data(), weight.data(), bias.data(), out.data());
  return out;
}

template <class Real>
Tensor<Real> batchnorm(const Tensor<Real>& input, BatchNormState<Real>& state, Mode mode) {
  ChannelStats stats;
  return bn_apply(input, state, mode, stats);
}

template <class Real>
Tensor<Real> relu(const Tensor<Real>& input) {
  Tensor<Real> out = input;
  for (auto& v : out.values()) v = v > Real(0) ? v : Real(0);
  return out;
}

template <class Real>
Tensor<Real> bilinear_resize(const Tensor<Real>& input, int out_height, int out_width) {
  require_map(input, "bilinear_resize");
  if (out_height < 1 || out_width < 1) {
    throw std::invalid_argument("bilinear_resize: target size must be positive, got " +
                                std::to_string(out_height) + "x" + std::to_string(out_width));
  }
  if (out_height == input.height() && out_width == input.width()) return input;
  const ResizeAxis ay = resize_axis(input.height(), out_height);
  const ResizeAxis ax = resize_axis(input.width(), out_width);
  Tensor<Real> out({input.channels(), out_height, out_width});
  parallel_for(input.channels(), [&](std::ptrdiff_t c) {
    for (int y = 0; y < out_height; ++y) {
      const Real wy = static_cast<Real>(ay.frac[y]);
      for (int x = 0; x < out_width; ++x) {
        const Real wx = static_cast<Real>(ax.frac[x]);
        const Real top = (Real(1) - wx) * input.at(c, ay.lo[y], ax.lo[x]) + wx * input.at(c, ay.lo[y], ax.hi[x]);
        const Real bot = (Real(1) - wx) * input.at(c, ay.hi[y], ax.lo[x]) + wx * input.at(c, ay.hi[y], ax.hi[x]);
        out.at(c, y, x) = (Real(1) - wy) * top + wy * bot;
      }
    }
  });
  return out;
}

template <class Real>
Tensor<Real> channel_softmax(const Tensor<Real>& input) {
  require_map(input, "channel_softmax");
  const int S = input.channels();
  const size_t plane = input.plane();
  Tensor<Real> out(input.shape());
  for (size_t p = 0; p < plane; ++p) {
    Real m = input[p];
    for (int s = 1; s < S; ++s) m = std::max(m, input[s * plane + p]);
    Real total = 0;
    for (int s = 0; s < S; ++s) {
      const Real e = std::exp(input[s * plane + p] - m);
      out[s * plane + p] = e;
      total += e;
    }
    for (int s = 0; s < S; ++s) out[s * plane + p] /= total;
  }
  return out;
}

template <class Real>
Tensor<Real> residual_block(const Tensor<Real>& input, ResidualBlockParams<Real>& params, Mode mode,
                            bool final_relu) {
  Tape<Real> tape(false);
  const Var out = residual_block(tape, tape.constant(input), params, mode, final_relu);
  return tape.value(out);
}

// ---- recorded operations ------------------------------------------------------

template <class Real>
Var conv2d(Tape<Real>& tape, Var input, Var weight, Var bias) {
  const ConvGeometry g = check_conv(tape.value(input), tape.value(weight), tape.value(bias));
  Tensor<Real> out({g.out_channels, g.height, g.width});
  conv_forward(g, tape.value(input).data(), tape.value(weight).data(), tape.value(bias).data(), out.data());
  return tape.record(std::move(out), {input, weight, bias}, [g](BackwardContext<Real>& ctx) {
    const Real* gout = ctx.out_grad().data();
    if (ctx.needs_grad(0)) conv_backward_input(g, gout, ctx.input(1).data(), ctx.input_grad(0).data());
    Real* gw = ctx.needs_grad(1) ? ctx.input_grad(1).data() : nullptr;
    Real* gb = ctx.needs_grad(2) ? ctx.input_grad(2).data() : nullptr;
    if (gw || gb) conv_backward_weight(g, gout, ctx.input(0).data(), gw, gb);
  });
}

template <class Real>
Var conv2d(Tape<Real>& tape, Var input, ConvParams<Real>& conv) {
  return conv2d(tape, input, tape.param(conv.weight), tape.param(conv.bias));
}

template <class Real>
Var batchnorm(Tape<Real>& tape, Var input, BatchNormState<Real>& state, Mode mode) {
  ChannelStats stats;
  Tensor<Real> y = bn_apply(tape.value(input), state, mode, stats);
  const Var gamma = tape.param(state.gamma);
  const Var beta = tape.param(state.beta);
  return tape.record(std::move(y), {input, gamma, beta}, [stats, mode](BackwardContext<Real>& ctx) {
    const Tensor<Real>& x = ctx.input(0);
    const Tensor<Real>& gamma = ctx.input(1);
    const Tensor<Real>& gy = ctx.out_grad();
    const int C = x.channels();
    const size_t n = x.plane();
    for (int c = 0; c < C; ++c) {
      auto xs = x.channel(c);
      auto gs = gy.channel(c);
      const double mean = stats.mean[c], inv = stats.inv_std[c];
      double sum_g = 0, sum_gx = 0;
      for (size_t i = 0; i < n; ++i) {
        sum_g += gs[i];
        sum_gx += gs[i] * ((xs[i] - mean) * inv);
      }
      if (ctx.needs_grad(1)) ctx.input_grad(1)[c] += static_cast<Real>(sum_gx);
      if (ctx.needs_grad(2)) ctx.input_grad(2)[c] += static_cast<Real>(sum_g);
      if (!ctx.needs_grad(0)) continue;
      auto gx = ctx.input_grad(0).channel(c);
      const double scale = gamma[c] * inv;
      if (mode == Mode::train) {
        const double dn = static_cast<double>(n);
        for (size_t i = 0; i < n; ++i) {
          const double xhat = (xs[i] - mean) * inv;
          gx[i] += static_cast<Real>(scale * (gs[i] - sum_g / dn - xhat * sum_gx / dn));
        }
      } else {
        for (size_t i = 0; i < n; ++i) gx[i] += static_cast<Real>(scale * gs[i]);
      }
    }
  });
}

template <class Real>
Var relu(Tape<Real>& tape, Var input) {
  return tape.record(relu(tape.value(input)), {input}, [](BackwardContext<Real>& ctx) {
    const auto& x = ctx.input(0);
    const auto& g = ctx.out_grad();
    auto& gx = ctx.input_grad(0);
    for (size_t i = 0; i < x.size(); ++i) {
      if (x[i] > Real(0)) gx[i] += g[i];
    }
  });
}

template <class Real>
Var add(Tape<Real>& tape, Var a, Var b) {
  const auto& va = tape.value(a);
  const auto& vb = tape.value(b);
  if (!va.same_shape(vb)) {
    throw std::invalid_argument("add: shape mismatch " + shape_to_string(va.shape()) + " vs " +
                                shape_to_string(vb.shape()));
  }
  Tensor<Real> out = va;
  for (size_t i = 0; i < out.size(); ++i) out[i] += vb[i];
  return tape.record(std::move(out), {a, b}, [](BackwardContext<Real>& ctx) {
    const auto& g = ctx.out_grad();
    for (size_t k = 0; k < 2; ++k) {
      if (!ctx.needs_grad(k)) continue;
      auto& gi = ctx.input_grad(k);
      for (size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  });
}

template <class Real>
Var mul(Tape<Real>& tape, Var a, Var b) {
  const auto& va = tape.value(a);
  const auto& vb = tape.value(b);
  if (!va.same_shape(vb)) {
    throw std::invalid_argument("mul: shape mismatch " + shape_to_string(va.shape()) + " vs " +
                                shape_to_string(vb.shape()));
  }
  Tensor<Real> out = va;
  for (size_t i = 0; i < out.size(); ++i) out[i] *= vb[i];
  return tape.record(std::move(out), {a, b}, [](BackwardContext<Real>& ctx) {
    const auto& g = ctx.out_grad();
    if (ctx.needs_grad(0)) {
      auto& ga = ctx.input_grad(0);
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * ctx.input(1)[i];
    }
    if (ctx.needs_grad(1)) {
      auto& gb = ctx.input_grad(1);
      for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ctx.input(0)[i];
    }
  });
}

template <class Real>
Var sum(Tape<Real>& tape, Var input) {
  Real total = 0;
  for (Real v : tape.value(input).values()) total += v;
  return tape.record(Tensor<Real>({1}, total), {input}, [](BackwardContext<Real>& ctx) {
    const Real g = ctx.out_grad()[0];
    for (auto& v : ctx.input_grad(0).values()) v += g;
  });
}

template <class Real>
Var inner_product(Tape<Real>& tape, Var a, Var b) {
  return sum(tape, mul(tape, a, b));
}

template <class Real>
Var bilinear_resize(Tape<Real>& tape, Var input, int out_height, int out_width) {
  const Tensor<Real>& x = tape.value(input);
  Tensor<Real> out = bilinear_resize(x, out_height, out_width);
  const int in_h = x.height(), in_w = x.width();
  return tape.record(std::move(out), {input}, [in_h, in_w, out_height, out_width](BackwardContext<Real>& ctx) {
    const auto& g = ctx.out_grad();
    auto& gx = ctx.input_grad(0);
    if (in_h == out_height && in_w == out_width) {
      for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      return;
    }
    const ResizeAxis ay = resize_axis(in_h, out_height);
    const ResizeAxis ax = resize_axis(in_w, out_width);
    parallel_for(g.channels(), [&](std::ptrdiff_t c) {
      for (int y = 0; y < out_height; ++y) {
        const Real wy = static_cast<Real>(ay.frac[y]);
        for (int x = 0; x < out_width; ++x) {
          const Real wx = static_cast<Real>(ax.frac[x]);
          const Real v = g.at(c, y, x);
          gx.at(c, ay.lo[y], ax.lo[x]) += (Real(1) - wy) * (Real(1) - wx) * v;
          gx.at(c, ay.lo[y], ax.hi[x]) += (Real(1) - wy) * wx * v;
          gx.at(c, ay.hi[y], ax.lo[x]) += wy * (Real(1) - wx) * v;
          gx.at(c, ay.hi[y], ax.hi[x]) += wy * wx * v;
        }
      }
    });
  });
}

template <class Real>
Var channel_softmax(Tape<Real>& tape, Var input) {
  return tape.record(channel_softmax(tape.value(input)), {input}, [](BackwardContext<Real>& ctx) {
    const auto& y = ctx.out_value();
    const auto& g = ctx.out_grad();
    auto& gx = ctx.input_grad(0);
    const int S = y.channels();
    const size_t plane = y.plane();
    for (size_t p = 0; p < plane; ++p) {
      Real dotp = 0;
      for (int s = 0; s < S; ++s) dotp += y[s * plane + p] * g[s * plane + p];
      for (int s = 0; s < S; ++s) gx[s * plane + p] += y[s * plane + p] * (g[s * plane + p] - dotp);
    }
  });
}

template <class Real>
Var residual_block(Tape<Real>& tape, Var input, ResidualBlockParams<Real>& params, Mode mode, bool final_relu,
                   Var* pre_relu) {
  const int channels = tape.value(input).channels();
  if (params.conv2.weight.value.dim(0) != channels || params.conv1.weight.value.dim(1) != channels) {
    throw std::invalid_argument("residual_block: block maps " + std::to_string(params.conv1.weight.value.dim(1)) +
                                " -> " + std::to_string(params.conv2.weight.value.dim(0)) +
                                " channels but input has " + std::to_string(channels));
  }
  Var h = conv2d(tape, input, params.conv1);
  h = batchnorm(tape, h, params.bn1, mode);
  h = relu(tape, h);
  h = conv2d(tape, h, params.conv2);
  h = batchnorm(tape, h, params.bn2, mode);
  const Var s = add(tape, input, h);
  if (pre_relu) *pre_relu = s;
  return final_relu ? relu(tape, s) : s;
}

template <class Real>
Var weighted_scale_sum(Tape<Real>& tape, Var weights, std::span<const Var> features) {
  const Tensor<Real>& a = tape.value(weights);
  require_map(a, "weighted_scale_sum");
  const int S = a.channels();
  if (static_cast<int>(features.size()) != S || S == 0) {
    throw std::invalid_argument("weighted_scale_sum: " + std::to_string(features.size()) +
                                " feature maps for " + std::to_string(S) + " weight channels");
  }
  const Tensor<Real>& f0 = tape.value(features[0]);
  require_map(f0, "weighted_scale_sum");
  for (Var f : features) {
    if (!tape.value(f).same_shape(f0) || f0.height() != a.height() || f0.width() != a.width()) {
      throw std::invalid_argument("weighted_scale_sum: feature maps must share the weight map's spatial size");
    }
  }
  const int D = f0.channels();
  const size_t plane = f0.plane();
  Tensor<Real> out(f0.shape());
  for (int d = 0; d < D; ++d) {
    for (size_t p = 0; p < plane; ++p) {
      Real acc = a[p] * f0[d * plane + p];
      for (int s = 1; s < S; ++s) acc += a[s * plane + p] * tape.value(features[s])[d * plane + p];
      out[d * plane + p] = acc;
    }
  }
  std::vector<Var> inputs{weights};
  inputs.insert(inputs.end(), features.begin(), features.end());
  return tape.record(std::move(out), std::move(inputs), [S, D, plane](BackwardContext<Real>& ctx) {
    const auto& g = ctx.out_grad();
    const auto& a = ctx.input(0);
    for (int s = 0; s < S; ++s) {
      const auto& f = ctx.input(1 + s);
      if (ctx.needs_grad(0)) {
        auto& ga = ctx.input_grad(0);
        for (int d = 0; d < D; ++d) {
          for (size_t p = 0; p < plane; ++p) ga[s * plane + p] += g[d * plane + p] * f[d * plane + p];
        }
      }
      if (ctx.needs_grad(1 + s)) {
        auto& gf = ctx.input_grad(1 + s);
        for (int d = 0; d < D; ++d) {
          for (size_t p = 0; p < plane; ++p) gf[d * plane + p] += a[s * plane + p] * g[d * plane + p];
        }
      }
    }
  });
}

template <class Real>
Var concat_channels(Tape<Real>& tape, std::span<const Var> maps) {
  if (maps.empty()) throw std::invalid_argument("concat_channels: no inputs");
  const Tensor<Real>& first = tape.value(maps[0]);
  require_map(first, "concat_channels");
  int total = 0;
  std::vector<int> offsets;
  for (Var m : maps) {
    const auto& t = tape.value(m);
    require_map(t, "concat_channels");
    if (t.height() != first.height() || t.width() != first.width()) {
      throw std::invalid_argument("concat_channels: spatial size mismatch");
    }
    offsets.push_back(total);
    total += t.channels();
  }
  Tensor<Real> out({total, first.height(), first.width()});
  for (size_t i = 0; i < maps.size(); ++i) {
    const auto& t = tape.value(maps[i]);
    std::copy(t.values().begin(), t.values().end(), out.data() + offsets[i] * first.plane());
  }
  return tape.record(std::move(out), std::vector<Var>(maps.begin(), maps.end()),
                     [offsets, plane = first.plane()](BackwardContext<Real>& ctx) {
                       const auto& g = ctx.out_grad();
                       for (size_t i = 0; i < offsets.size(); ++i) {
                         if (!ctx.needs_grad(i)) continue;
                         auto& gi = ctx.input_grad(i);
                         const Real* src = g.data() + offsets[i] * plane;
                         for (size_t k = 0; k < gi.size(); ++k) gi[k] += src[k];
                       }
                     });
}

template <class Real>
Var gather_pixels(Tape<Real>& tape, Var feature_map, std::span<const Pixel> pixels) {
  const Tensor<Real>& f = tape.value(feature_map);
  require_map(f, "gather_pixels");
  const int D = f.channels();
  const int N = static_cast<int>(pixels.size());
  if (N == 0) throw std::invalid_argument("gather_pixels: no pixels");
  for (const Pixel& p : pixels) {
    if (p.row < 0 || p.row >= f.height() || p.col < 0 || p.col >= f.width()) {
      throw std::out_of_range("gather_pixels: pixel (" + std::to_string(p.row) + "," + std::to_string(p.col) +
                              ") outside feature map");
    }
  }
  Tensor<Real> out({N, D});
  for (int n = 0; n < N; ++n) {
    for (int d = 0; d < D; ++d) out[static_cast<size_t>(n) * D + d] = f.at(d, pixels[n].row, pixels[n].col);
  }
  std::vector<Pixel> px(pixels.begin(), pixels.end());
  return tape.record(std::move(out), {feature_map}, [px = std::move(px), D](BackwardContext<Real>& ctx) {
    const auto& g = ctx.out_grad();
    auto& gf = ctx.input_grad(0);
    for (size_t n = 0; n < px.size(); ++n) {
      for (int d = 0; d < D; ++d) gf.at(d, px[n].row, px[n].col) += g[n * D + d];
    }
  });
}

template <class Real>
Var grouped_inner_products(Tape<Real>& tape, Var sources, Var candidates, int group_size) {
  const auto& src = tape.value(sources);
  const auto& cand = tape.value(candidates);
  if (src.rank() != 2 || cand.rank() != 2 || src.dim(1) != cand.dim(1) || group_size < 1 ||
      cand.dim(0) != src.dim(0) * group_size) {
    throw std::invalid_argument("grouped_inner_products: incompatible shapes " + shape_to_string(src.shape()) +
                                " and " + shape_to_string(cand.shape()));
  }
  const int B = src.dim(0), D = src.dim(1), N = group_size;
  Tensor<Real> out({B, N});
  for (int b = 0; b < B; ++b) {
    for (int j = 0; j < N; ++j) {
      Real acc = 0;
      const Real* q = cand.data() + (static_cast<size_t>(b) * N + j) * D;
      const Real* p = src.data() + static_cast<size_t>(b) * D;
      for (int d = 0; d < D; ++d) acc += p[d] * q[d];
      out[static_cast<size_t>(b) * N + j] = acc;
    }
  }
  return tape.record(std::move(out), {sources, candidates}, [B, D, N](BackwardContext<Real>& ctx) {
    const auto& g = ctx.out_grad();
    const auto& src = ctx.input(0);
    const auto& cand = ctx.input(1);
    for (int b = 0; b < B; ++b) {
      for (int j = 0; j < N; ++j) {
        const Real gv = g[static_cast<size_t>(b) * N + j];
        const size_t qo = (static_cast<size_t>(b) * N + j) * D, po = static_cast<size_t>(b) * D;
        if (ctx.needs_grad(0)) {
          auto& gs = ctx.input_grad(0);
          for (int d = 0; d < D; ++d) gs[po + d] += gv * cand[qo + d];
        }
        if (ctx.needs_grad(1)) {
          auto& gc = ctx.input_grad(1);
          for (int d = 0; d < D; ++d) gc[qo + d] += gv * src[po + d];
        }
      }
    }
  });
}

template <class Real>
Var softmax_cross_entropy(Tape<Real>& tape, Var scores, std::span<const int> targets) {
  const auto& s = tape.value(scores);
  if (s.rank() != 2 || s.dim(0) != static_cast<int>(targets.size())) {
    throw std::invalid_argument("softmax_cross_entropy: need one target per score row");
  }
  const int B = s.dim(0), N = s.dim(1);
  for (int t : targets) {
    if (t < 0 || t >= N) throw std::out_of_range("softmax_cross_entropy: target index out of range");
  }
  std::vector<double> lse(B);
  double total = 0;
  for (int b = 0; b < B; ++b) {
    const Real* row = s.data() + static_cast<size_t>(b) * N;
    double m = row[0];
    for (int j = 1; j < N; ++j) m = std::max<double>(m, row[j]);
    double z = 0;
    for (int j = 0; j < N; ++j) z += std::exp(row[j] - m);
    lse[b] = m + std::log(z);
    total += lse[b] - row[targets[b]];
  }
  const Real loss = static_cast<Real>(total / B);
  if (!std::isfinite(loss)) throw std::domain_error("softmax_cross_entropy: non-finite loss");
  std::vector<int> tg(targets.begin(), targets.end());
  return tape.record(Tensor<Real>({1}, loss), {scores},
                     [lse = std::move(lse), tg = std::move(tg), B, N](BackwardContext<Real>& ctx) {
                       const double g = ctx.out_grad()[0] / B;
                       const auto& s = ctx.input(0);
                       auto& gs = ctx.input_grad(0);
                       for (int b = 0; b < B; ++b) {
                         for (int j = 0; j < N; ++j) {
                           const size_t k = static_cast<size_t>(b) * N + j;
                           const double p = std::exp(s[k] - lse[b]);
                           gs[k] += static_cast<Real>(g * (p - (j == tg[b] ? 1.0 : 0.0)));
                         }
                       }
                     });
}

#define ASCM_INSTANTIATE_LAYERS(R)                                                                              \
  template struct BatchNormState<R>;                                                                            \
  template Tensor<R> conv2d(const Tensor<R>&, const Tensor<R>&, const Tensor<R>&);                               \
  template Tensor<R> batchnorm(const Tensor<R>&, BatchNormState<R>&, Mode);                                     \
  template Tensor<R> relu(const Tensor<R>&);                                                                    \
  template Tensor<R> bilinear_resize(const Tensor<R>&, int, int);                                               \
  template Tensor<R> channel_softmax(const Tensor<R>&);                                                         \
  template Tensor<R> residual_block(const Tensor<R>&, ResidualBlockParams<R>&, Mode, bool);                     \
  template Var conv2d(Tape<R>&, Var, Var, Var);                                                                 \
  template Var conv2d(Tape<R>&, Var, ConvParams<R>&);                                                           \
  template Var batchnorm(Tape<R>&, Var, BatchNormState<R>&, Mode);                                              \
  template Var relu(Tape<R>&, Var);                                                                             \
  template Var add(Tape<R>&, Var, Var);                                                                         \
  template Var mul(Tape<R>&, Var, Var);                                                                         \
  template Var sum(Tape<R>&, Var);                                                                              \
  template Var inner_product(Tape<R>&, Var, Var);                                                               \
  template Var bilinear_resize(Tape<R>&, Var, int, int);                                                        \
  template Var channel_softmax(Tape<R>&, Var);                                                                  \
  template Var residual_block(Tape<R>&, Var, ResidualBlockParams<R>&, Mode, bool, Var*);                        \
  template Var weighted_scale_sum(Tape<R>&, Var, std::span<const Var>);                                         \
  template Var concat_channels(Tape<R>&, std::span<const Var>);                                                 \
  template Var gather_pixels(Tape<R>&, Var, std::span<const Pixel>);                                            \
  template Var grouped_inner_products(Tape<R>&, Var, Var, int);                                                 \
  template Var softmax_cross_entropy(Tape<R>&, Var, std::span<const int>);

ASCM_INSTANTIATE_LAYERS(float)
ASCM_INSTANTIATE_LAYERS(double)

}  // namespace ascm
