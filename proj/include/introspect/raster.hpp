#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace introspect {

struct RasterError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Planar-interleaved raster, intensities in [0,1].
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<double> data;  // row-major, channel-interleaved

  Image() = default;
  Image(int w, int h, int c, double fill = 0.0)
      : width(w), height(h), channels(c),
        data(static_cast<size_t>(w) * h * c, fill) {
    if (w < 1 || h < 1 || (c != 1 && c != 3))
      throw RasterError("Image: bad dimensions " + std::to_string(w) + "x" +
                        std::to_string(h) + "x" + std::to_string(c));
  }

  double& at(int x, int y, int c) {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  double at(int x, int y, int c) const {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }

  double luminance(int x, int y) const {
    if (channels == 1) return at(x, y, 0);
    return 0.299 * at(x, y, 0) + 0.587 * at(x, y, 1) + 0.114 * at(x, y, 2);
  }

  bool same_shape(const Image& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }
};

// Axis-aligned rectangle in the coordinate frame of the original image.
struct Window {
  int x0 = 0;
  int y0 = 0;
  int w = 0;
  int h = 0;

  bool inside(int img_w, int img_h) const {
    return x0 >= 0 && y0 >= 0 && w >= 1 && h >= 1 && x0 + w <= img_w &&
           y0 + h <= img_h;
  }
  bool operator==(const Window& o) const {
    return x0 == o.x0 && y0 == o.y0 && w == o.w && h == o.h;
  }
};

inline Image crop(const Image& img, const Window& win) {
  if (!win.inside(img.width, img.height))
    throw RasterError("crop: window (" + std::to_string(win.x0) + "," +
                      std::to_string(win.y0) + "," + std::to_string(win.w) +
                      "," + std::to_string(win.h) + ") out of bounds for " +
                      std::to_string(img.width) + "x" +
                      std::to_string(img.height));
  Image out(win.w, win.h, img.channels);
  for (int y = 0; y < win.h; ++y)
    for (int x = 0; x < win.w; ++x)
      for (int c = 0; c < img.channels; ++c)
        out.at(x, y, c) = img.at(win.x0 + x, win.y0 + y, c);
  return out;
}

// Bilinear resampling with half-pixel center alignment:
// s = (d + 0.5) * (in / out) - 0.5, clamped to [0, in-1].
inline Image resize_bilinear(const Image& img, int out_w, int out_h) {
  if (out_w < 1 || out_h < 1)
    throw RasterError("resize_bilinear: target must be >= 1");
  if (out_w == img.width && out_h == img.height) return img;
  Image out(out_w, out_h, img.channels);
  const double sx = static_cast<double>(img.width) / out_w;
  const double sy = static_cast<double>(img.height) / out_h;
  for (int y = 0; y < out_h; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(img.height - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(img.width - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, img.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < img.channels; ++c) {
        const double top =
            img.at(x0, y0, c) * (1.0 - wx) + img.at(x1, y0, c) * wx;
        const double bot =
            img.at(x0, y1, c) * (1.0 - wx) + img.at(x1, y1, c) * wx;
        out.at(x, y, c) = top * (1.0 - wy) + bot * wy;
      }
    }
  }
  return out;
}

// Resize so the smaller dimension equals `target`. With preserve_aspect off
// the output is a target x target square warp. Images already at or below the
// target are returned unchanged: upsampling would stretch textures away from
// the fixed-scale filter bank, so small windows are analyzed at native
// resolution.
inline Image resize_smaller_side(const Image& img, int target,
                                 bool preserve_aspect) {
  if (target < 1) throw RasterError("resize_smaller_side: target must be >= 1");
  if (std::min(img.width, img.height) <= target) return img;
  if (!preserve_aspect) return resize_bilinear(img, target, target);
  int out_w, out_h;
  if (img.width <= img.height) {
    out_w = target;
    out_h = static_cast<int>(std::lround(
        static_cast<double>(target) * img.height / img.width));
  } else {
    out_h = target;
    out_w = static_cast<int>(std::lround(
        static_cast<double>(target) * img.width / img.height));
  }
  return resize_bilinear(img, std::max(out_w, 1), std::max(out_h, 1));
}

namespace detail {

inline int next_header_int(std::istream& in, const std::string& path) {
  int v;
  if (!(in >> v))
    throw RasterError(path + ": malformed header at offset " +
                      std::to_string(static_cast<long>(in.tellg())));
  return v;
}

}  // namespace detail

// Binary PPM (P6) / PGM (P5), maxval 255 only.
inline Image read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RasterError(path + ": cannot open");
  std::string magic;
  in >> magic;
  int channels;
  if (magic == "P6")
    channels = 3;
  else if (magic == "P5")
    channels = 1;
  else
    throw RasterError(path + ": unsupported format \"" + magic +
                      "\" at offset 0 (only binary P5/P6)");
  const int w = detail::next_header_int(in, path);
  const int h = detail::next_header_int(in, path);
  const int maxval = detail::next_header_int(in, path);
  if (w < 1 || h < 1)
    throw RasterError(path + ": bad dimensions in header");
  if (maxval != 255)
    throw RasterError(path + ": unsupported maxval " + std::to_string(maxval) +
                      " at offset " +
                      std::to_string(static_cast<long>(in.tellg())));
  in.get();  // single whitespace after maxval
  const size_t n = static_cast<size_t>(w) * h * channels;
  std::vector<unsigned char> raw(n);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n));
  if (static_cast<size_t>(in.gcount()) != n)
    throw RasterError(path + ": truncated payload at offset " +
                      std::to_string(static_cast<long>(in.tellg())));
  Image img(w, h, channels);
  for (size_t i = 0; i < n; ++i) img.data[i] = raw[i] / 255.0;
  return img;
}

namespace detail {

inline void write_pnm(const std::string& path, const Image& img,
                      const char* magic) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RasterError(path + ": cannot open for writing");
  out << magic << "\n" << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> raw(img.data.size());
  for (size_t i = 0; i < img.data.size(); ++i) {
    const double v = std::clamp(img.data[i], 0.0, 1.0);
    raw[i] = static_cast<unsigned char>(std::lround(v * 255.0));
  }
  out.write(reinterpret_cast<const char*>(raw.data()),
            static_cast<std::streamsize>(raw.size()));
  if (!out) throw RasterError(path + ": write failed");
}

}  // namespace detail

inline void write_ppm(const std::string& path, const Image& img) {
  if (img.channels != 3)
    throw RasterError(path + ": write_ppm requires 3 channels");
  detail::write_pnm(path, img, "P6");
}

inline void write_pgm(const std::string& path, const Image& img) {
  if (img.channels != 1)
    throw RasterError(path + ": write_pgm requires 1 channel");
  detail::write_pnm(path, img, "P5");
}

}  // namespace introspect
