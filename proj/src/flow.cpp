#include "ascm/flow.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "ascm/parallel.hpp"

namespace ascm {

FlowField::FlowField(int h, int w) : height(h), width(w) {
  if (h < 1 || w < 1) throw std::invalid_argument("flow field dimensions must be positive");
  u.assign(size(), 0.0f);
  v.assign(size(), 0.0f);
  valid.assign(size(), 1);
}

FlowField FlowField::constant(int h, int w, float cu, float cv) {
  FlowField f(h, w);
  std::fill(f.u.begin(), f.u.end(), cu);
  std::fill(f.v.begin(), f.v.end(), cv);
  return f;
}

std::size_t FlowField::valid_count() const {
  std::size_t n = 0;
  for (auto m : valid) n += m != 0;
  return n;
}

namespace {

// D x H x W -> (H*W) x D so that every pixel's descriptor is contiguous.
std::vector<float> pixel_major(const Tensor<float>& f) {
  const int D = f.channels();
  const std::size_t plane = f.plane();
  std::vector<float> out(plane * D);
  for (int d = 0; d < D; ++d) {
    for (std::size_t p = 0; p < plane; ++p) out[p * D + d] = f[d * plane + p];
  }
  return out;
}

void require_same_dims(const FlowField& a, const FlowField& b, const char* what) {
  if (a.height != b.height || a.width != b.width) {
    throw std::invalid_argument(std::string(what) + ": flow fields differ in size");
  }
}

}  // namespace

FlowField dense_match(const Tensor<float>& source_features, const Tensor<float>& target_features,
                      const SearchWindow& window) {
  require_map(source_features, "dense_match");
  require_map(target_features, "dense_match");
  if (!source_features.same_shape(target_features)) {
    throw std::invalid_argument("dense_match: feature maps " + shape_to_string(source_features.shape()) + " and " +
                                shape_to_string(target_features.shape()) + " differ");
  }
  window.validate();
  const int H = source_features.height(), W = source_features.width(), D = source_features.channels();
  const std::vector<float> src = pixel_major(source_features);
  const std::vector<float> tgt = pixel_major(target_features);
  FlowField flow(H, W);
  parallel_for(H, [&](std::ptrdiff_t row) {
    const int r = static_cast<int>(row);
    const int r0 = std::max(0, r + window.y_min), r1 = std::min(H - 1, r + window.y_max);
    for (int c = 0; c < W; ++c) {
      const int c0 = std::max(0, c + window.x_min), c1 = std::min(W - 1, c + window.x_max);
      const float* p = src.data() + (static_cast<std::size_t>(r) * W + c) * D;
      float best = -std::numeric_limits<float>::infinity();
      int best_r = r, best_c = c;
      bool found = false;
      // Row-major candidate order with strict '>' keeps the first maximum.
      for (int qr = r0; qr <= r1; ++qr) {
        for (int qc = c0; qc <= c1; ++qc) {
          const float* q = tgt.data() + (static_cast<std::size_t>(qr) * W + qc) * D;
          float s = 0;
          for (int d = 0; d < D; ++d) s += p[d] * q[d];
          if (!found || s > best) {
            best = s;
            best_r = qr;
            best_c = qc;
            found = true;
          }
        }
      }
      const std::size_t i = flow.index(r, c);
      flow.u[i] = static_cast<float>(best_c - c);
      flow.v[i] = static_cast<float>(best_r - r);
      flow.valid[i] = found ? 1 : 0;
    }
  });
  return flow;
}

FlowField dense_match(const Tensor<float>& source_features, const Tensor<float>& target_features, int radius_y,
                      int radius_x) {
  return dense_match(source_features, target_features, SearchWindow::symmetric(radius_y, radius_x));
}

FlowField fb_consistency_filter(const FlowField& forward, const FlowField& backward, double threshold) {
  require_same_dims(forward, backward, "fb_consistency_filter");
  FlowField out = forward;
  for (int r = 0; r < forward.height; ++r) {
    for (int c = 0; c < forward.width; ++c) {
      const std::size_t i = forward.index(r, c);
      if (!forward.valid[i]) continue;
      const double uf = forward.u[i], vf = forward.v[i];
      const long qc = std::lround(c + uf), qr = std::lround(r + vf);
      bool keep = qr >= 0 && qr < forward.height && qc >= 0 && qc < forward.width;
      if (keep) {
        const std::size_t j = backward.index(static_cast<int>(qr), static_cast<int>(qc));
        keep = backward.valid[j] && std::hypot(backward.u[j] + uf, backward.v[j] + vf) <= threshold;
      }
      out.valid[i] = keep ? 1 : 0;
    }
  }
  return out;
}

FlowField fill_flow(const FlowField& masked) {
  if (masked.valid_count() == 0) throw std::invalid_argument("fill_flow: no valid pixels");
  const int H = masked.height, W = masked.width;
  FlowField out = masked;
  for (int r = 0; r < H; ++r) {
    for (int c = 0; c < W; ++c) {
      const std::size_t i = masked.index(r, c);
      if (masked.valid[i]) continue;
      // Expanding square rings; a ring at Chebyshev radius k has squared
      // distance >= k^2, so the search stops once that exceeds the best.
      long best_d2 = std::numeric_limits<long>::max();
      std::size_t best = 0;
      for (int k = 1;; ++k) {
        if (static_cast<long>(k) * k > best_d2) break;
        if (k > H && k > W) break;
        for (int rr = r - k; rr <= r + k; ++rr) {
          if (rr < 0 || rr >= H) continue;
          const bool edge_row = rr == r - k || rr == r + k;
          const int step = edge_row ? 1 : 2 * k;
          for (int cc = c - k; cc <= c + k; cc += step) {
            if (cc < 0 || cc >= W) continue;
            const std::size_t j = masked.index(rr, cc);
            if (!masked.valid[j]) continue;
            const long d2 = static_cast<long>(rr - r) * (rr - r) + static_cast<long>(cc - c) * (cc - c);
            if (d2 < best_d2 || (d2 == best_d2 && j < best)) {
              best_d2 = d2;
              best = j;
            }
          }
        }
      }
      out.u[i] = masked.u[best];
      out.v[i] = masked.v[best];
      out.valid[i] = 1;
    }
  }
  return out;
}

double epe(const FlowField& predicted, const FlowField& ground_truth, std::span<const std::uint8_t> mask) {
  require_same_dims(predicted, ground_truth, "epe");
  if (mask.size() != predicted.size()) throw std::invalid_argument("epe: mask size differs from flow size");
  double total = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    total += std::hypot(static_cast<double>(predicted.u[i]) - ground_truth.u[i],
                        static_cast<double>(predicted.v[i]) - ground_truth.v[i]);
    ++n;
  }
  if (n == 0) throw std::invalid_argument("epe: empty mask");
  return total / static_cast<double>(n);
}

double epe(const FlowField& predicted, const FlowField& ground_truth) {
  return epe(predicted, ground_truth, ground_truth.valid);
}

FlowEstimate estimate_flow(const Tensor<float>& source_features, const Tensor<float>& target_features,
                           const SearchWindow& window, double threshold) {
  FlowEstimate e;
  e.forward = dense_match(source_features, target_features, window);
  const SearchWindow reverse{-window.y_max, -window.y_min, -window.x_max, -window.x_min};
  e.backward = dense_match(target_features, source_features, reverse);
  e.filtered = fb_consistency_filter(e.forward, e.backward, threshold);
  e.filled = e.filtered.valid_count() > 0 ? fill_flow(e.filtered) : e.filtered;
  return e;
}

}  // namespace ascm
