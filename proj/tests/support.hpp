#pragma once

#include <cmath>
#include <vector>

#include "ascm/flow.hpp"
#include "ascm/io.hpp"
#include "ascm/rng.hpp"
#include "ascm/tensor.hpp"

namespace testing {

template <class Real>
ascm::Tensor<Real> random_tensor(const ascm::Shape& shape, ascm::Rng& rng, double scale = 1.0) {
  ascm::Tensor<Real> t(shape);
  for (auto& v : t.values()) v = static_cast<Real>(scale * rng.normal());
  return t;
}

/// Direct six-loop zero-padded cross-correlation.
template <class Real>
ascm::Tensor<Real> reference_conv(const ascm::Tensor<Real>& x, const ascm::Tensor<Real>& w,
                                  const ascm::Tensor<Real>& b) {
  const int C = x.channels(), H = x.height(), W = x.width(), O = w.dim(0), k = w.dim(2), pad = k / 2;
  ascm::Tensor<Real> out({O, H, W});
  for (int o = 0; o < O; ++o) {
    for (int r = 0; r < H; ++r) {
      for (int c = 0; c < W; ++c) {
        double s = b[o];
        for (int ci = 0; ci < C; ++ci) {
          for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
              const int y = r + ky - pad, xx = c + kx - pad;
              if (y < 0 || y >= H || xx < 0 || xx >= W) continue;
              s += static_cast<double>(w[((static_cast<std::size_t>(o) * C + ci) * k + ky) * k + kx]) *
                   x.at(ci, y, xx);
            }
          }
        }
        out.at(o, r, c) = static_cast<Real>(s);
      }
    }
  }
  return out;
}

/// Mean-free, unit-norm (2r+1)^2 patches of a single-channel image, zero
/// outside the image: a hand-made feature map whose inner product is the
/// normalized cross-correlation.
inline ascm::Tensor<float> patch_features(const ascm::Tensor<float>& image, int r = 2) {
  const int H = image.height(), W = image.width(), k = 2 * r + 1;
  ascm::Tensor<float> f({k * k, H, W});
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      std::vector<double> p;
      for (int dy = -r; dy <= r; ++dy) {
        for (int dx = -r; dx <= r; ++dx) {
          const int yy = y + dy, xx = x + dx;
          p.push_back(yy >= 0 && yy < H && xx >= 0 && xx < W ? image.at(0, yy, xx) : 0.0);
        }
      }
      double mean = 0, norm = 0;
      for (double v : p) mean += v;
      mean /= static_cast<double>(p.size());
      for (double& v : p) norm += (v - mean) * (v - mean);
      norm = std::sqrt(norm) + 1e-12;
      for (int i = 0; i < k * k; ++i) f.at(i, y, x) = static_cast<float>((p[i] - mean) / norm);
    }
  }
  return f;
}

/// Perfect features for a known flow: every target pixel gets a random unit
/// code and each source pixel carries the code of its ground-truth target.
inline std::pair<ascm::Tensor<float>, ascm::Tensor<float>> oracle_features(const ascm::FlowField& flow, int dim,
                                                                           std::uint64_t seed) {
  const int H = flow.height, W = flow.width;
  ascm::Rng rng(seed);
  auto unit_code = [&](ascm::Tensor<float>& f, int r, int c) {
    double n = 0;
    for (int d = 0; d < dim; ++d) n += std::pow(f.at(d, r, c) = static_cast<float>(rng.normal()), 2);
    for (int d = 0; d < dim; ++d) f.at(d, r, c) = static_cast<float>(f.at(d, r, c) / std::sqrt(n));
  };
  ascm::Tensor<float> src({dim, H, W}), tgt({dim, H, W});
  for (int r = 0; r < H; ++r) {
    for (int c = 0; c < W; ++c) unit_code(tgt, r, c);
  }
  for (int r = 0; r < H; ++r) {
    for (int c = 0; c < W; ++c) {
      const auto i = flow.index(r, c);
      const int tr = r + static_cast<int>(std::lround(flow.v[i])), tc = c + static_cast<int>(std::lround(flow.u[i]));
      if (flow.valid[i] && tr >= 0 && tr < H && tc >= 0 && tc < W) {
        for (int d = 0; d < dim; ++d) src.at(d, r, c) = tgt.at(d, tr, tc);
      } else {
        unit_code(src, r, c);
      }
    }
  }
  return {src, tgt};
}

inline ascm::FlowField random_flow(int h, int w, ascm::Rng& rng) {
  ascm::FlowField f(h, w);
  for (std::size_t i = 0; i < f.size(); ++i) {
    f.u[i] = static_cast<float>(rng.uniform(-50, 50));
    f.v[i] = static_cast<float>(rng.uniform(-50, 50));
    f.valid[i] = rng.uniform() < 0.9;
    if (!f.valid[i]) f.u[i] = f.v[i] = ascm::kFloInvalid;
  }
  return f;
}

/// Exhaustive per-pixel scorer over the clipped window, first maximum kept.
inline ascm::FlowField naive_match(const ascm::Tensor<float>& fs, const ascm::Tensor<float>& ft, int ry, int rx) {
  const int D = fs.channels(), H = fs.height(), W = fs.width();
  ascm::FlowField out(H, W);
  for (int r = 0; r < H; ++r) {
    for (int c = 0; c < W; ++c) {
      bool first = true;
      float best = 0;
      int by = 0, bx = 0;
      for (int dy = -ry; dy <= ry; ++dy) {
        for (int dx = -rx; dx <= rx; ++dx) {
          const int y = r + dy, x = c + dx;
          if (y < 0 || y >= H || x < 0 || x >= W) continue;
          float s = 0;
          for (int d = 0; d < D; ++d) s += fs.at(d, r, c) * ft.at(d, y, x);
          if (first || s > best) {
            best = s;
            by = dy;
            bx = dx;
            first = false;
          }
        }
      }
      const auto i = out.index(r, c);
      out.u[i] = static_cast<float>(bx);
      out.v[i] = static_cast<float>(by);
      out.valid[i] = 1;
    }
  }
  return out;
}

}  // namespace testing
