#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "introspect/raster.hpp"

namespace introspect {

struct FeaturizerError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Spatial feature tensor f_k(x,y); index (y*w + x)*k + ch.
struct FeatureMap {
  int h = 0;
  int w = 0;
  int k = 0;
  int stride = 1;           // pixels per grid cell in the producing input
  int receptive_field = 1;  // pixels
  std::vector<double> values;

  FeatureMap() = default;
  FeatureMap(int h_, int w_, int k_, int stride_, int rf)
      : h(h_), w(w_), k(k_), stride(stride_), receptive_field(rf),
        values(static_cast<size_t>(h_) * w_ * k_, 0.0) {}

  double& at(int x, int y, int ch) {
    return values[(static_cast<size_t>(y) * w + x) * k + ch];
  }
  double at(int x, int y, int ch) const {
    return values[(static_cast<size_t>(y) * w + x) * k + ch];
  }
};

// Per-channel spatial mean of a FeatureMap (the classifier input).
struct GapFeature {
  std::vector<double> values;
  int k() const { return static_cast<int>(values.size()); }
};

inline GapFeature gap(const FeatureMap& fm) {
  if (fm.h < 1 || fm.w < 1) throw FeaturizerError("gap: empty feature map");
  GapFeature out;
  out.values.assign(fm.k, 0.0);
  for (int y = 0; y < fm.h; ++y)
    for (int x = 0; x < fm.w; ++x)
      for (int c = 0; c < fm.k; ++c) out.values[c] += fm.at(x, y, c);
  const double inv = 1.0 / (static_cast<double>(fm.h) * fm.w);
  for (double& v : out.values) v *= inv;
  return out;
}

enum class ExtractorKind : uint8_t { TinyConv = 0, FilterBank = 1 };

enum class LayerType : uint8_t { Conv3x3 = 0, MaxPool2x2 = 1 };

struct ExtractorLayer {
  LayerType type = LayerType::Conv3x3;
  int in_ch = 0;
  int out_ch = 0;
  std::vector<double> weights;  // out_ch * in_ch * 9, conv only
  std::vector<double> biases;   // out_ch, conv only
};

struct ExtractorSpec {
  ExtractorKind kind = ExtractorKind::FilterBank;
  int input_channels = 3;
  int stride_total = 8;
  int receptive_field = 8;
  int channels = 32;  // K
  std::vector<ExtractorLayer> layers;  // tiny-conv only
};

namespace detail {

// Portable uniform double in [-1,1) from a raw 64-bit stream.
inline double sym_unit(std::uint64_t bits) {
  return (bits >> 11) * (1.0 / 9007199254740992.0) * 2.0 - 1.0;
}

}  // namespace detail

// Seeded tiny-conv geometry: conv(3->16) pool conv(16->32) pool conv(32->K)
// pool, so stride_total is 8 and grids are floor(side/8).
inline ExtractorSpec make_tiny_conv(int k, std::uint64_t seed,
                                    int input_channels = 3) {
  ExtractorSpec spec;
  spec.kind = ExtractorKind::TinyConv;
  spec.input_channels = input_channels;
  spec.stride_total = 8;
  spec.receptive_field = 8;
  spec.channels = k;
  std::mt19937_64 rng(seed);
  const int chain[4] = {input_channels, 16, 32, k};
  for (int i = 0; i < 3; ++i) {
    ExtractorLayer conv;
    conv.type = LayerType::Conv3x3;
    conv.in_ch = chain[i];
    conv.out_ch = chain[i + 1];
    const double scale = std::sqrt(2.0 / (conv.in_ch * 9.0));
    conv.weights.resize(static_cast<size_t>(conv.out_ch) * conv.in_ch * 9);
    for (double& w : conv.weights) w = detail::sym_unit(rng()) * scale;
    conv.biases.assign(conv.out_ch, 0.0);
    spec.layers.push_back(std::move(conv));
    ExtractorLayer pool;
    pool.type = LayerType::MaxPool2x2;
    pool.in_ch = pool.out_ch = chain[i + 1];
    spec.layers.push_back(std::move(pool));
  }
  return spec;
}

inline ExtractorSpec make_filter_bank(int input_channels = 3) {
  ExtractorSpec spec;
  spec.kind = ExtractorKind::FilterBank;
  spec.input_channels = input_channels;
  spec.stride_total = 8;
  spec.receptive_field = 8;
  spec.channels = 32;
  return spec;
}

namespace detail {

struct PlanarTensor {
  int w = 0, h = 0, c = 0;
  std::vector<double> v;  // (ch * h + y) * w + x
  PlanarTensor(int w_, int h_, int c_)
      : w(w_), h(h_), c(c_), v(static_cast<size_t>(w_) * h_ * c_, 0.0) {}
  double& at(int x, int y, int ch) {
    return v[(static_cast<size_t>(ch) * h + y) * w + x];
  }
  double at(int x, int y, int ch) const {
    return v[(static_cast<size_t>(ch) * h + y) * w + x];
  }
};

inline PlanarTensor conv3x3_relu(const PlanarTensor& in,
                                 const ExtractorLayer& layer) {
  PlanarTensor out(in.w, in.h, layer.out_ch);
  for (int oc = 0; oc < layer.out_ch; ++oc) {
    for (int y = 0; y < in.h; ++y) {
      for (int x = 0; x < in.w; ++x) {
        double acc = layer.biases[oc];
        for (int ic = 0; ic < layer.in_ch; ++ic) {
          const double* w =
              &layer.weights[(static_cast<size_t>(oc) * layer.in_ch + ic) * 9];
          for (int dy = -1; dy <= 1; ++dy) {
            const int yy = y + dy;
            if (yy < 0 || yy >= in.h) continue;
            for (int dx = -1; dx <= 1; ++dx) {
              const int xx = x + dx;
              if (xx < 0 || xx >= in.w) continue;
              acc += w[(dy + 1) * 3 + (dx + 1)] * in.at(xx, yy, ic);
            }
          }
        }
        out.at(x, y, oc) = acc > 0.0 ? acc : 0.0;
      }
    }
  }
  return out;
}

inline PlanarTensor maxpool2x2(const PlanarTensor& in) {
  PlanarTensor out(in.w / 2, in.h / 2, in.c);
  for (int ch = 0; ch < in.c; ++ch)
    for (int y = 0; y < out.h; ++y)
      for (int x = 0; x < out.w; ++x) {
        double m = in.at(2 * x, 2 * y, ch);
        m = std::max(m, in.at(2 * x + 1, 2 * y, ch));
        m = std::max(m, in.at(2 * x, 2 * y + 1, ch));
        m = std::max(m, in.at(2 * x + 1, 2 * y + 1, ch));
        out.at(x, y, ch) = m;
      }
  return out;
}

// 8x8 oriented gratings, period 4 px, odd (sine) and even (cosine) phase,
// zero-mean and unit-norm. Orientation index o in {0,1,2,3} = {0,45,90,135}
// degrees measured as the direction of intensity variation.
inline const std::vector<double>& grating_kernel(int orient, bool even) {
  static std::vector<std::vector<double>> cache = [] {
    std::vector<std::vector<double>> ks;
    const double period = 4.0;
    for (int o = 0; o < 4; ++o) {
      const double theta = o * 3.14159265358979323846 / 4.0;
      const double ux = std::cos(theta), uy = std::sin(theta);
      for (int phase = 0; phase < 2; ++phase) {
        std::vector<double> k(64);
        for (int y = 0; y < 8; ++y)
          for (int x = 0; x < 8; ++x) {
            const double px = x - 3.5, py = y - 3.5;
            const double t = 2.0 * 3.14159265358979323846 *
                             (px * ux + py * uy) / period;
            k[y * 8 + x] = phase == 0 ? std::sin(t) : std::cos(t);
          }
        double mean = std::accumulate(k.begin(), k.end(), 0.0) / 64.0;
        for (double& v : k) v -= mean;
        double norm = std::sqrt(
            std::inner_product(k.begin(), k.end(), k.begin(), 0.0));
        for (double& v : k) v /= norm;
        ks.push_back(std::move(k));
      }
    }
    return ks;
  }();
  return cache[orient * 2 + (even ? 1 : 0)];
}

}  // namespace detail

// Fixed 32-channel filter bank over non-overlapping 8x8 cells:
//   0..3   |odd grating| on luminance, orientations 0/45/90/135
//   4..7   |even grating| on luminance
//   8..10  mean R, G, B
//   11..14 rectified opponents: (R-G)+, (G-R)+, (B-Y)+, (Y-B)+  with Y=(R+G)/2
//   15..18 |odd grating| on R-G
//   19..22 |odd grating| on B-Y
//   23..26 |even grating| on R-G
//   27..30 |even grating| on B-Y
//   31     luminance standard deviation
inline FeatureMap extract_filter_bank(const ExtractorSpec& spec,
                                      const Image& img) {
  const int s = spec.stride_total;
  const int gh = img.height / s, gw = img.width / s;
  FeatureMap fm(gh, gw, spec.channels, s, spec.receptive_field);
  std::vector<double> lum(64), rg(64), by(64);
  for (int gy = 0; gy < gh; ++gy) {
    for (int gx = 0; gx < gw; ++gx) {
      double mr = 0, mg = 0, mb = 0, ml = 0;
      for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
          const int ix = gx * s + x, iy = gy * s + y;
          double r, g, b;
          if (img.channels == 3) {
            r = img.at(ix, iy, 0);
            g = img.at(ix, iy, 1);
            b = img.at(ix, iy, 2);
          } else {
            r = g = b = img.at(ix, iy, 0);
          }
          const double l = 0.299 * r + 0.587 * g + 0.114 * b;
          lum[y * 8 + x] = l;
          rg[y * 8 + x] = r - g;
          by[y * 8 + x] = b - 0.5 * (r + g);
          mr += r;
          mg += g;
          mb += b;
          ml += l;
        }
      mr /= 64.0;
      mg /= 64.0;
      mb /= 64.0;
      ml /= 64.0;
      for (int o = 0; o < 4; ++o) {
        for (int phase = 0; phase < 2; ++phase) {
          const auto& ker = detail::grating_kernel(o, phase == 1);
          double dl = 0, drg = 0, dby = 0;
          for (int i = 0; i < 64; ++i) {
            dl += ker[i] * lum[i];
            drg += ker[i] * rg[i];
            dby += ker[i] * by[i];
          }
          fm.at(gx, gy, phase * 4 + o) = std::fabs(dl);
          fm.at(gx, gy, 15 + phase * 8 + o) = std::fabs(drg);
          fm.at(gx, gy, 19 + phase * 8 + o) = std::fabs(dby);
        }
      }
      fm.at(gx, gy, 8) = mr;
      fm.at(gx, gy, 9) = mg;
      fm.at(gx, gy, 10) = mb;
      fm.at(gx, gy, 11) = std::max(mr - mg, 0.0);
      fm.at(gx, gy, 12) = std::max(mg - mr, 0.0);
      fm.at(gx, gy, 13) = std::max(mb - 0.5 * (mr + mg), 0.0);
      fm.at(gx, gy, 14) = std::max(0.5 * (mr + mg) - mb, 0.0);
      double var = 0;
      for (int i = 0; i < 64; ++i) var += (lum[i] - ml) * (lum[i] - ml);
      fm.at(gx, gy, 31) = std::sqrt(var / 64.0);
    }
  }
  return fm;
}

inline FeatureMap extract(const ExtractorSpec& spec, const Image& img) {
  if (img.width < spec.receptive_field || img.height < spec.receptive_field)
    throw FeaturizerError("extract: input " + std::to_string(img.width) + "x" +
                          std::to_string(img.height) +
                          " smaller than receptive field " +
                          std::to_string(spec.receptive_field));
  if (img.channels != spec.input_channels && spec.kind == ExtractorKind::TinyConv)
    throw FeaturizerError("extract: channel mismatch");
  if (spec.kind == ExtractorKind::FilterBank)
    return extract_filter_bank(spec, img);

  detail::PlanarTensor t(img.width, img.height, img.channels);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) t.at(x, y, c) = img.at(x, y, c);
  for (const auto& layer : spec.layers) {
    if (layer.type == LayerType::Conv3x3)
      t = detail::conv3x3_relu(t, layer);
    else
      t = detail::maxpool2x2(t);
    if (t.w < 1 || t.h < 1)
      throw FeaturizerError("extract: input too small for pooling chain");
  }
  if (t.c != spec.channels)
    throw FeaturizerError("extract: layer chain ends with " +
                          std::to_string(t.c) + " channels, spec declares " +
                          std::to_string(spec.channels));
  FeatureMap fm(t.h, t.w, t.c, spec.stride_total, spec.receptive_field);
  for (int y = 0; y < t.h; ++y)
    for (int x = 0; x < t.w; ++x)
      for (int c = 0; c < t.c; ++c) fm.at(x, y, c) = t.at(x, y, c);
  return fm;
}

// --- weight container: magic "ITXW", u32 version, header ints, layer table,
// little-endian f64 payload ---

namespace detail {

template <typename T>
void put_le(std::ostream& out, T v) {
  unsigned char buf[sizeof(T)];
  std::uint64_t bits;
  if constexpr (std::is_same_v<T, double>) {
    std::memcpy(&bits, &v, 8);
  } else {
    bits = static_cast<std::uint64_t>(v);
  }
  for (size_t i = 0; i < sizeof(T); ++i)
    buf[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<char*>(buf), sizeof(T));
}

template <typename T>
T get_le(std::istream& in, const std::string& what) {
  unsigned char buf[sizeof(T)];
  in.read(reinterpret_cast<char*>(buf), sizeof(T));
  if (!in) throw FeaturizerError("weight file truncated reading " + what);
  std::uint64_t bits = 0;
  for (size_t i = 0; i < sizeof(T); ++i)
    bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  if constexpr (std::is_same_v<T, double>) {
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
  } else {
    return static_cast<T>(bits);
  }
}

}  // namespace detail

inline void save_weights(const ExtractorSpec& spec, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FeaturizerError(path + ": cannot open for writing");
  out.write("ITXW", 4);
  detail::put_le<std::uint32_t>(out, 1);  // version
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(spec.kind));
  detail::put_le<std::uint32_t>(out, spec.input_channels);
  detail::put_le<std::uint32_t>(out, spec.stride_total);
  detail::put_le<std::uint32_t>(out, spec.receptive_field);
  detail::put_le<std::uint32_t>(out, spec.channels);
  detail::put_le<std::uint32_t>(out,
                                static_cast<std::uint32_t>(spec.layers.size()));
  for (const auto& l : spec.layers) {
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(l.type));
    detail::put_le<std::uint32_t>(out, l.in_ch);
    detail::put_le<std::uint32_t>(out, l.out_ch);
  }
  for (const auto& l : spec.layers) {
    for (double w : l.weights) detail::put_le<double>(out, w);
    for (double b : l.biases) detail::put_le<double>(out, b);
  }
  if (!out) throw FeaturizerError(path + ": write failed");
}

inline ExtractorSpec load_weights(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FeaturizerError(path + ": cannot open");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "ITXW", 4) != 0)
    throw FeaturizerError(path + ": bad magic");
  const auto version = detail::get_le<std::uint32_t>(in, "version");
  if (version != 1)
    throw FeaturizerError(path + ": unsupported version " +
                          std::to_string(version));
  ExtractorSpec spec;
  spec.kind = static_cast<ExtractorKind>(
      detail::get_le<std::uint32_t>(in, "kind"));
  spec.input_channels = detail::get_le<std::uint32_t>(in, "input_channels");
  spec.stride_total = detail::get_le<std::uint32_t>(in, "stride_total");
  spec.receptive_field = detail::get_le<std::uint32_t>(in, "receptive_field");
  spec.channels = detail::get_le<std::uint32_t>(in, "channels");
  const auto nlayers = detail::get_le<std::uint32_t>(in, "layer count");
  spec.layers.resize(nlayers);
  int prev_ch = spec.input_channels;
  for (std::uint32_t i = 0; i < nlayers; ++i) {
    auto& l = spec.layers[i];
    l.type = static_cast<LayerType>(detail::get_le<std::uint32_t>(in, "type"));
    l.in_ch = detail::get_le<std::uint32_t>(in, "in_ch");
    l.out_ch = detail::get_le<std::uint32_t>(in, "out_ch");
    if (l.in_ch != prev_ch)
      throw FeaturizerError(path + ": layer " + std::to_string(i) +
                            " expects " + std::to_string(l.in_ch) +
                            " input channels, previous layer provides " +
                            std::to_string(prev_ch));
    if (l.type == LayerType::MaxPool2x2 && l.in_ch != l.out_ch)
      throw FeaturizerError(path + ": layer " + std::to_string(i) +
                            " pool must preserve channel count");
    prev_ch = l.out_ch;
  }
  if (spec.kind == ExtractorKind::TinyConv && prev_ch != spec.channels)
    throw FeaturizerError(path + ": layer table ends with " +
                          std::to_string(prev_ch) +
                          " channels, header declares " +
                          std::to_string(spec.channels));
  for (std::uint32_t i = 0; i < nlayers; ++i) {
    auto& l = spec.layers[i];
    if (l.type == LayerType::Conv3x3) {
      l.weights.resize(static_cast<size_t>(l.out_ch) * l.in_ch * 9);
      for (double& w : l.weights) w = detail::get_le<double>(in, "weights");
      l.biases.resize(l.out_ch);
      for (double& b : l.biases) b = detail::get_le<double>(in, "biases");
    }
  }
  return spec;
}

}  // namespace introspect
