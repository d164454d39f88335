#include "ascm/synth.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "ascm/rng.hpp"

namespace ascm {

namespace {

constexpr int kContrastWindow = 7;
constexpr int kMaxAttempts = 64;

struct Layer {
  int y0, x0, y1, x1;  // source-frame rectangle, exclusive end
  int u, v;
  int margin;           // texture covers [y0 - margin, y1 + margin) etc.
  std::vector<double> texture;
  int tex_w;

  bool covers_source(int r, int c) const { return r >= y0 && r < y1 && c >= x0 && c < x1; }
  bool covers_target(int r, int c) const { return covers_source(r - v, c - u); }
  double sample(int r, int c) const {
    return texture[static_cast<std::size_t>(r - y0 + margin) * tex_w + (c - x0 + margin)];
  }
};

std::vector<double> gaussian_kernel(double sigma) {
  if (sigma <= 0) return {1.0};
  const int r = static_cast<int>(std::ceil(3 * sigma));
  std::vector<double> k(2 * r + 1);
  double s = 0;
  for (int i = -r; i <= r; ++i) s += k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= s;
  return k;
}

// Smoothed white noise with zero mean and unit std-dev.
std::vector<double> texture(int h, int w, double blur, Rng& rng) {
  const auto k = gaussian_kernel(blur);
  const int r = static_cast<int>(k.size() / 2);
  const int ph = h + 2 * r, pw = w + 2 * r;
  std::vector<double> noise(static_cast<std::size_t>(ph) * pw);
  for (auto& v : noise) v = rng.normal();
  std::vector<double> tmp(static_cast<std::size_t>(ph) * w, 0.0);
  for (int y = 0; y < ph; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = 0;
      for (int i = 0; i < static_cast<int>(k.size()); ++i) s += k[i] * noise[static_cast<std::size_t>(y) * pw + x + i];
      tmp[static_cast<std::size_t>(y) * w + x] = s;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(h) * w, 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = 0;
      for (int i = 0; i < static_cast<int>(k.size()); ++i) s += k[i] * tmp[static_cast<std::size_t>(y + i) * w + x];
      out[static_cast<std::size_t>(y) * w + x] = s;
    }
  }
  double mean = 0, sq = 0;
  for (double v : out) mean += v;
  mean /= static_cast<double>(out.size());
  for (double v : out) sq += (v - mean) * (v - mean);
  const double sd = std::sqrt(sq / static_cast<double>(out.size()));
  for (auto& v : out) v = (v - mean) / (sd > 0 ? sd : 1.0);
  return out;
}

std::uint8_t quantize(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

SyntheticPair render(const SynthConfig& cfg, std::uint64_t seed, Rng& rng) {
  const int H = cfg.height, W = cfg.width;
  auto pick_flow = [&]() -> std::pair<int, int> {
    if (cfg.fixed_flow) return *cfg.fixed_flow;
    return {rng.range(-cfg.max_flow, cfg.max_flow), rng.range(-cfg.max_flow, cfg.max_flow)};
  };
  const int margin = cfg.fixed_flow ? std::max(std::abs(cfg.fixed_flow->first), std::abs(cfg.fixed_flow->second))
                                    : cfg.max_flow;

  std::vector<Layer> layers;
  auto add_layer = [&](int y0, int x0, int y1, int x1) {
    Layer l{y0, x0, y1, x1, 0, 0, margin, {}, 0};
    std::tie(l.u, l.v) = pick_flow();
    l.tex_w = x1 - x0 + 2 * margin;
    l.texture = texture(y1 - y0 + 2 * margin, l.tex_w, cfg.blur, rng);
    for (auto& t : l.texture) t = 128.0 + cfg.contrast * t;
    for (auto& t : l.texture) t = quantize(t);
    layers.push_back(std::move(l));
  };
  add_layer(0, 0, H, W);
  for (int k = 0; k < cfg.regions; ++k) {
    const int h = rng.range(std::max(4, H / 5), std::max(4, H / 2));
    const int w = rng.range(std::max(4, W / 5), std::max(4, W / 2));
    const int y0 = rng.range(0, H - h), x0 = rng.range(0, W - w);
    add_layer(y0, x0, y0 + h, x0 + w);
  }

  SyntheticPair out{Image8(W, H, 1), Image8(W, H, 1), FlowField(H, W), cfg, seed};
  auto top_source = [&](int r, int c) {
    for (int k = static_cast<int>(layers.size()) - 1; k > 0; --k) {
      if (layers[k].covers_source(r, c)) return k;
    }
    return 0;
  };
  auto top_target = [&](int r, int c) {
    for (int k = static_cast<int>(layers.size()) - 1; k > 0; --k) {
      if (layers[k].covers_target(r, c)) return k;
    }
    return 0;
  };
  for (int r = 0; r < H; ++r) {
    for (int c = 0; c < W; ++c) {
      const int ks = top_source(r, c);
      const Layer& ls = layers[ks];
      out.source.at(r, c) = static_cast<std::uint8_t>(ls.sample(r, c));
      const int kt = top_target(r, c);
      const Layer& lt = layers[kt];
      out.target.at(r, c) = static_cast<std::uint8_t>(lt.sample(r - lt.v, c - lt.u));

      const std::size_t i = out.flow.index(r, c);
      out.flow.u[i] = static_cast<float>(ls.u);
      out.flow.v[i] = static_cast<float>(ls.v);
      const int tr = r + ls.v, tc = c + ls.u;
      out.flow.valid[i] = tr >= 0 && tr < H && tc >= 0 && tc < W && top_target(tr, tc) == ks;
    }
  }
  return out;
}

void perturb(Image8& image, double offset, double sigma, Rng& rng) {
  if (offset == 0 && sigma == 0) return;
  for (auto& p : image.pixels) p = quantize(p + offset + (sigma > 0 ? sigma * rng.normal() : 0.0));
}

}  // namespace

void SynthConfig::validate() const {
  if (height < 16 || width < 16) {
    throw std::invalid_argument("synth: image dimensions must be at least 16, got " + std::to_string(height) + "x" +
                                std::to_string(width));
  }
  if (regions < 0) throw std::invalid_argument("synth: regions must be non-negative");
  if (max_flow < 0) throw std::invalid_argument("synth: max_flow must be non-negative");
  const int largest =
      fixed_flow ? std::max(std::abs(fixed_flow->first), std::abs(fixed_flow->second)) : max_flow;
  if (largest >= radius) {
    throw std::invalid_argument("synth: flow magnitude " + std::to_string(largest) + " must stay below radius " +
                                std::to_string(radius));
  }
  if (largest >= std::min(height, width)) throw std::invalid_argument("synth: flow larger than the image");
  if (!(noise_sigma >= 0) || !(blur >= 0) || !(contrast > 0) || !(min_local_contrast >= 0) ||
      !std::isfinite(brightness)) {
    throw std::invalid_argument("synth: noise, blur, contrast and contrast floor must be non-negative");
  }
}

double min_local_contrast(const Image8& image) {
  const int H = image.height, W = image.width, k = kContrastWindow;
  double lowest = INFINITY;
  for (int r = 0; r + k <= H; ++r) {
    for (int c = 0; c + k <= W; ++c) {
      double s = 0, sq = 0;
      for (int y = r; y < r + k; ++y) {
        for (int x = c; x < c + k; ++x) {
          const double v = image.at(y, x);
          s += v;
          sq += v * v;
        }
      }
      const double n = k * k, mean = s / n;
      lowest = std::min(lowest, std::sqrt(std::max(0.0, sq / n - mean * mean)));
    }
  }
  return lowest;
}

SyntheticPair synth_pair(const SynthConfig& config, std::uint64_t seed) {
  config.validate();
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(attempt)));
    SyntheticPair pair = render(config, seed, rng);
    if (min_local_contrast(pair.source) < config.min_local_contrast) continue;
    perturb(pair.source, 0.0, config.noise_sigma, rng);
    perturb(pair.target, config.brightness, config.noise_sigma, rng);
    return pair;
  }
  throw std::runtime_error("synth: no texture above the local contrast floor after " + std::to_string(kMaxAttempts) +
                           " attempts");
}

CorrespondencePair to_correspondence(const SyntheticPair& pair) {
  return {image_to_tensor(pair.source), image_to_tensor(pair.target), pair.flow};
}

}  // namespace ascm
