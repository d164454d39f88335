#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ascm/flow.hpp"
#include "ascm/model.hpp"
#include "ascm/trainer.hpp"

namespace ascm {

/// Malformed, corrupted or unsupported file contents.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---- optical flow (.flo) ------------------------------------------------------

inline constexpr float kFloMagic = 202021.25f;
/// Written in place of invalid pixels; values with magnitude >= kFloInvalidBound read back as invalid.
inline constexpr float kFloInvalid = 1e10f;
inline constexpr float kFloInvalidBound = 1e9f;

std::vector<std::uint8_t> encode_flo(const FlowField& flow);
FlowField decode_flo(std::span<const std::uint8_t> bytes);
void write_flo(const std::string& path, const FlowField& flow);
FlowField read_flo(const std::string& path);

// ---- 8-bit images (binary PGM / PPM) ---------------------------------------

struct Image8 {
  int width = 0;
  int height = 0;
  int channels = 1;  // 1 (P5) or 3 (P6), interleaved
  std::vector<std::uint8_t> pixels;

  Image8() = default;
  Image8(int w, int h, int c, std::uint8_t fill = 0);
  std::uint8_t& at(int row, int col, int ch = 0) {
    return pixels[(static_cast<std::size_t>(row) * width + col) * channels + ch];
  }
  std::uint8_t at(int row, int col, int ch = 0) const {
    return pixels[(static_cast<std::size_t>(row) * width + col) * channels + ch];
  }
  friend bool operator==(const Image8&, const Image8&) = default;
};

std::vector<std::uint8_t> encode_pnm(const Image8& image);
Image8 decode_pnm(std::span<const std::uint8_t> bytes);
void write_pnm(const std::string& path, const Image8& image);
Image8 read_pnm(const std::string& path);

/// Network input in [0, 1]. With `grayscale`, color images are reduced with
/// weights (0.299, 0.587, 0.114); otherwise every channel is kept.
Tensor<float> image_to_tensor(const Image8& image, bool grayscale = true);

// ---- checkpoints ------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelParams<float> model;
  std::optional<OptimState> optim;
};

/// Layout, all little-endian: "ASCM", u32 version, u32 in_channels, u32 width,
/// u32 scale count, f64 scales, u32 fusion, u32 record count, records
/// (u32 name length, name, u32 rank, u32 extents, f32 payload), u8 optimizer
/// flag [u64 iteration, f64 base lr, f64 momentum, u32 count, records],
/// u32 CRC-32 of everything before it.
std::vector<std::uint8_t> encode_checkpoint(const ModelParams<float>& model, const OptimState* optim = nullptr);
/// With `expected`, record shapes and hyperparameters must match it.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes, const ModelConfig* expected = nullptr);
void save_checkpoint(const std::string& path, const ModelParams<float>& model, const OptimState* optim = nullptr);
Checkpoint load_checkpoint(const std::string& path, const ModelConfig* expected = nullptr);

// ---- attention export ------------------------------------------------------

/// Argmax colors for up to four scales, finest first.
inline constexpr std::uint8_t kScaleColors[4][3] = {
    {252, 103, 105}, {254, 230, 74}, {90, 253, 137}, {176, 74, 251}};

std::array<std::uint8_t, 3> scale_color(int scale_index, int num_scales);

/// Writes <prefix>_scale<k>.pgm per scale (weight * 255, rounded) and
/// <prefix>_argmax.ppm. Returns the written paths.
std::vector<std::string> export_attention(const Tensor<float>& attention, const std::string& prefix);

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, std::span<const std::uint8_t> bytes);

}  // namespace ascm
