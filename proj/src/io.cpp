#include "ascm/io.hpp"

#include <zlib.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

namespace ascm {

namespace {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  std::vector<std::uint8_t>& buffer() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> in, const char* what) : in_(in), what_(what) {}

  std::uint8_t u8() { return take(1)[0]; }
  std::uint32_t u32() {
    auto b = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    auto b = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::span<const std::uint8_t> take(std::size_t n) {
    if (n > in_.size() - pos_) throw FormatError(std::string(what_) + ": truncated payload");
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
  const char* what_;
};

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t off = 0;
  while (off < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
    crc = crc32(crc, bytes.data() + off, chunk);
    off += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

// ---- .flo ----------------------------------------------------------------------

std::vector<std::uint8_t> encode_flo(const FlowField& flow) {
  if (flow.height < 1 || flow.width < 1) throw std::invalid_argument("write_flo: empty flow field");
  ByteWriter w;
  w.f32(kFloMagic);
  w.i32(flow.width);
  w.i32(flow.height);
  for (std::size_t i = 0; i < flow.size(); ++i) {
    if (flow.valid[i]) {
      w.f32(flow.u[i]);
      w.f32(flow.v[i]);
    } else {
      w.f32(kFloInvalid);
      w.f32(kFloInvalid);
    }
  }
  return std::move(w.buffer());
}

FlowField decode_flo(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "invalid flow file");
  if (r.f32() != kFloMagic) throw FormatError("invalid flow file: bad magic");
  const std::int32_t width = r.i32();
  const std::int32_t height = r.i32();
  if (width <= 0 || height <= 0) throw FormatError("invalid flow file: non-positive dimensions");
  const std::size_t n = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  if (r.remaining() / 8 < n) throw FormatError("invalid flow file: truncated payload");
  FlowField f(height, width);
  for (std::size_t i = 0; i < n; ++i) {
    f.u[i] = r.f32();
    f.v[i] = r.f32();
    f.valid[i] = std::abs(f.u[i]) < kFloInvalidBound && std::abs(f.v[i]) < kFloInvalidBound;
  }
  return f;
}

void write_flo(const std::string& path, const FlowField& flow) { write_file(path, encode_flo(flow)); }

FlowField read_flo(const std::string& path) { return decode_flo(read_file(path)); }

// ---- PNM -----------------------------------------------------------------------

Image8::Image8(int w, int h, int c, std::uint8_t fill) : width(w), height(h), channels(c) {
  if (w < 1 || h < 1 || (c != 1 && c != 3)) throw std::invalid_argument("image: invalid dimensions");
  pixels.assign(static_cast<std::size_t>(w) * h * c, fill);
}

std::vector<std::uint8_t> encode_pnm(const Image8& image) {
  if (image.channels != 1 && image.channels != 3) throw std::invalid_argument("write_pnm: 1 or 3 channels only");
  const std::string header = std::string(image.channels == 1 ? "P5" : "P6") + "\n" + std::to_string(image.width) +
                             " " + std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), image.pixels.begin(), image.pixels.end());
  return out;
}

Image8 decode_pnm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&] {
    skip_space();
    long v = 0;
    const std::size_t start = pos;
    while (pos < bytes.size() && std::isdigit(bytes[pos]) && v < 1'000'000) v = v * 10 + (bytes[pos++] - '0');
    if (pos == start) throw FormatError("invalid PNM header");
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P') throw FormatError("unsupported PNM format: missing magic");
  const char kind = static_cast<char>(bytes[1]);
  if (kind != '5' && kind != '6') {
    throw FormatError(std::string("unsupported PNM format: P") + kind + " (only binary P5/P6)");
  }
  pos = 2;
  const long width = number(), height = number(), maxval = number();
  if (maxval != 255) throw FormatError("unsupported PNM maxval " + std::to_string(maxval) + " (only 255)");
  if (width < 1 || height < 1) throw FormatError("invalid PNM header: non-positive dimensions");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw FormatError("invalid PNM header");
  ++pos;
  Image8 img(static_cast<int>(width), static_cast<int>(height), kind == '5' ? 1 : 3);
  if (bytes.size() - pos < img.pixels.size()) throw FormatError("truncated PNM payload");
  std::memcpy(img.pixels.data(), bytes.data() + pos, img.pixels.size());
  return img;
}

void write_pnm(const std::string& path, const Image8& image) { write_file(path, encode_pnm(image)); }

Image8 read_pnm(const std::string& path) { return decode_pnm(read_file(path)); }

Tensor<float> image_to_tensor(const Image8& image, bool grayscale) {
  if (image.channels == 1 || !grayscale) {
    Tensor<float> t({image.channels, image.height, image.width});
    for (int c = 0; c < image.channels; ++c) {
      for (int r = 0; r < image.height; ++r) {
        for (int x = 0; x < image.width; ++x) t.at(c, r, x) = image.at(r, x, c) / 255.0f;
      }
    }
    return t;
  }
  Tensor<float> t({1, image.height, image.width});
  for (int r = 0; r < image.height; ++r) {
    for (int x = 0; x < image.width; ++x) {
      const double y = 0.299 * image.at(r, x, 0) + 0.587 * image.at(r, x, 1) + 0.114 * image.at(r, x, 2);
      t.at(0, r, x) = static_cast<float>(y / 255.0);
    }
  }
  return t;
}

// ---- checkpoints ---------------------------------------------------------------

namespace {

void write_record(ByteWriter& w, const std::string& name, const Tensor<float>& t) {
  w.u32(static_cast<std::uint32_t>(name.size()));
  w.bytes(name.data(), name.size());
  w.u32(static_cast<std::uint32_t>(t.rank()));
  for (int e : t.shape()) w.u32(static_cast<std::uint32_t>(e));
  for (float v : t.values()) w.f32(v);
}

struct Record {
  std::string name;
  Tensor<float> value;
};

Record read_record(ByteReader& r) {
  Record rec;
  const std::uint32_t len = r.u32();
  if (len > 4096) throw FormatError("checkpoint: record name too long");
  auto name = r.take(len);
  rec.name.assign(name.begin(), name.end());
  const std::uint32_t rank = r.u32();
  if (rank < 1 || rank > 8) throw FormatError("checkpoint: record '" + rec.name + "' has invalid rank");
  Shape shape(rank);
  std::size_t n = 1;
  for (auto& e : shape) {
    const std::uint32_t v = r.u32();
    if (v == 0 || v > (1u << 28)) throw FormatError("checkpoint: record '" + rec.name + "' has invalid extent");
    e = static_cast<int>(v);
    n *= v;
  }
  if (r.remaining() / 4 < n) throw FormatError("checkpoint: truncated payload");
  std::vector<float> data(n);
  for (auto& v : data) v = r.f32();
  rec.value = Tensor<float>(std::move(shape), std::move(data));
  return rec;
}

std::string bn_base(const BatchNormState<float>& bn) {
  const std::string& g = bn.gamma.name;
  return g.substr(0, g.size() - std::string(".gamma").size());
}

void assign_record(std::map<std::string, Tensor<float>>& records, const std::string& name, Tensor<float>& dst) {
  auto it = records.find(name);
  if (it == records.end()) throw FormatError("checkpoint: missing record '" + name + "'");
  if (!it->second.same_shape(dst)) {
    throw FormatError("checkpoint: shape mismatch for record '" + name + "': file has " +
                      shape_to_string(it->second.shape()) + ", configuration expects " +
                      shape_to_string(dst.shape()));
  }
  dst = std::move(it->second);
  records.erase(it);
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ModelParams<float>& model, const OptimState* optim) {
  const ModelConfig& cfg = model.config;
  ByteWriter w;
  w.bytes("ASCM", 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(cfg.in_channels));
  w.u32(static_cast<std::uint32_t>(cfg.width));
  w.u32(static_cast<std::uint32_t>(cfg.scales.size()));
  for (double s : cfg.scales) w.f64(s);
  w.u32(static_cast<std::uint32_t>(cfg.fusion));

  const auto params = model.parameters();
  const auto bns = model.batchnorms();
  w.u32(static_cast<std::uint32_t>(params.size() + 2 * bns.size()));
  for (const auto* p : params) write_record(w, p->name, p->value);
  for (const auto* bn : bns) {
    write_record(w, bn_base(*bn) + ".running_mean", bn->running_mean);
    write_record(w, bn_base(*bn) + ".running_var", bn->running_var);
  }

  w.u8(optim ? 1 : 0);
  if (optim) {
    if (optim->velocity.size() != params.size()) {
      throw std::invalid_argument("save_checkpoint: optimizer state does not match the model");
    }
    w.u64(static_cast<std::uint64_t>(optim->iteration));
    w.f64(optim->base_lr);
    w.f64(optim->momentum);
    w.u32(static_cast<std::uint32_t>(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) write_record(w, "velocity/" + params[i]->name, optim->velocity[i]);
  }
  w.u32(crc32_of(w.buffer()));
  return std::move(w.buffer());
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes, const ModelConfig* expected) {
  if (bytes.size() < 12) throw FormatError("checkpoint: checksum mismatch (file too short)");
  const auto body = bytes.first(bytes.size() - 4);
  ByteReader tail(bytes.last(4), "checkpoint");
  if (tail.u32() != crc32_of(body)) throw FormatError("checkpoint: checksum mismatch");

  ByteReader r(body, "checkpoint");
  const auto magic = r.take(4);
  if (std::memcmp(magic.data(), "ASCM", 4) != 0) throw FormatError("checkpoint: bad magic");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  ModelConfig cfg;
  cfg.in_channels = static_cast<int>(r.u32());
  cfg.width = static_cast<int>(r.u32());
  const std::uint32_t n_scales = r.u32();
  if (n_scales == 0 || n_scales > 64) throw FormatError("checkpoint: invalid scale count");
  cfg.scales.resize(n_scales);
  for (auto& s : cfg.scales) s = r.f64();
  const std::uint32_t fusion = r.u32();
  if (fusion > 1) throw FormatError("checkpoint: unknown fusion mode");
  cfg.fusion = static_cast<Fusion>(fusion);
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }

  std::map<std::string, Tensor<float>> records;
  const std::uint32_t n_records = r.u32();
  for (std::uint32_t i = 0; i < n_records; ++i) {
    Record rec = read_record(r);
    records[rec.name] = std::move(rec.value);
  }

  // Shapes come from the requesting configuration when one is given, so a
  // width mismatch is reported against the first record that disagrees.
  const ModelConfig& target = expected ? *expected : cfg;
  Checkpoint ck{ModelParams<float>::init(target, 0), std::nullopt};
  for (auto* p : ck.model.parameters()) assign_record(records, p->name, p->value);
  for (auto* bn : ck.model.batchnorms()) {
    assign_record(records, bn_base(*bn) + ".running_mean", bn->running_mean);
    assign_record(records, bn_base(*bn) + ".running_var", bn->running_var);
  }
  if (!records.empty()) throw FormatError("checkpoint: unexpected record '" + records.begin()->first + "'");
  if (expected && !(cfg == *expected)) {
    throw FormatError("checkpoint: hyperparameters (scales/fusion/channels) differ from the requested configuration");
  }

  if (r.u8()) {
    OptimState st;
    st.iteration = static_cast<long>(r.u64());
    st.base_lr = r.f64();
    st.momentum = r.f64();
    const std::uint32_t n = r.u32();
    auto params = ck.model.parameters();
    if (n != params.size()) throw FormatError("checkpoint: optimizer section does not match the model");
    for (std::uint32_t i = 0; i < n; ++i) {
      Record rec = read_record(r);
      if (rec.name != "velocity/" + params[i]->name || !rec.value.same_shape(params[i]->value)) {
        throw FormatError("checkpoint: bad optimizer record '" + rec.name + "'");
      }
      st.velocity.push_back(std::move(rec.value));
    }
    ck.optim = std::move(st);
  }
  if (r.remaining() != 0) throw FormatError("checkpoint: trailing bytes");
  return ck;
}

void save_checkpoint(const std::string& path, const ModelParams<float>& model, const OptimState* optim) {
  write_file(path, encode_checkpoint(model, optim));
}

Checkpoint load_checkpoint(const std::string& path, const ModelConfig* expected) {
  return decode_checkpoint(read_file(path), expected);
}

// ---- attention export -----------------------------------------------------------

std::array<std::uint8_t, 3> scale_color(int k, int num_scales) {
  if (num_scales <= 4) return {kScaleColors[k][0], kScaleColors[k][1], kScaleColors[k][2]};
  // Evenly spaced hues at full saturation and value.
  const double h = 6.0 * k / num_scales;
  const int sector = static_cast<int>(std::floor(h)) % 6;
  const double f = h - std::floor(h);
  auto byte = [](double x) { return static_cast<std::uint8_t>(std::lround(255.0 * x)); };
  const std::uint8_t hi = 255, up = byte(f), down = byte(1.0 - f), lo = 0;
  switch (sector) {
    case 0: return {hi, up, lo};
    case 1: return {down, hi, lo};
    case 2: return {lo, hi, up};
    case 3: return {lo, down, hi};
    case 4: return {up, lo, hi};
    default: return {hi, lo, down};
  }
}

std::vector<std::string> export_attention(const Tensor<float>& attention, const std::string& prefix) {
  require_map(attention, "export_attention");
  const int S = attention.channels(), H = attention.height(), W = attention.width();
  std::vector<std::string> paths;
  for (int s = 0; s < S; ++s) {
    Image8 img(W, H, 1);
    for (int r = 0; r < H; ++r) {
      for (int c = 0; c < W; ++c) {
        const double v = std::clamp(static_cast<double>(attention.at(s, r, c)), 0.0, 1.0);
        img.at(r, c) = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
    }
    paths.push_back(prefix + "_scale" + std::to_string(s) + ".pgm");
    write_pnm(paths.back(), img);
  }
  Image8 argmax(W, H, 3);
  for (int r = 0; r < H; ++r) {
    for (int c = 0; c < W; ++c) {
      int best = 0;
      for (int s = 1; s < S; ++s) {
        if (attention.at(s, r, c) > attention.at(best, r, c)) best = s;
      }
      const auto color = scale_color(best, S);
      for (int ch = 0; ch < 3; ++ch) argmax.at(r, c, ch) = color[ch];
    }
  }
  paths.push_back(prefix + "_argmax.ppm");
  write_pnm(paths.back(), argmax);
  return paths;
}

}  // namespace ascm
