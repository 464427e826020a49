#pragma once

#include <Eigen/Core>

#include <array>

namespace easyphoto {

/// One image channel, row-major so that (y, x) indexing matches scanline order.
using Plane = Eigen::Array<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Single-channel soft mask with values in [0,1].
using Mask = Plane;

/// RGB image stored as three planes of floats in [0,1].
struct Image {
  std::array<Plane, 3> channels;

  Image() = default;
  Image(Eigen::Index height, Eigen::Index width, float fill = 0.0f);

  static Image constant(Eigen::Index height, Eigen::Index width, float r, float g, float b);
  static Image from_gray(const Plane& gray);

  Eigen::Index height() const { return channels[0].rows(); }
  Eigen::Index width() const { return channels[0].cols(); }
  bool empty() const { return channels[0].size() == 0; }

  float& operator()(Eigen::Index y, Eigen::Index x, int c) { return channels[c](y, x); }
  float operator()(Eigen::Index y, Eigen::Index x, int c) const { return channels[c](y, x); }

  bool same_size(const Image& other) const {
    return height() == other.height() && width() == other.width();
  }

  friend bool operator==(const Image& a, const Image& b);
};

/// Axis-aligned integer box, half-open: pixels with x0 <= x < x1 and y0 <= y < y1.
struct BBox {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;

  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  long area() const { return static_cast<long>(width()) * height(); }
  double center_x() const { return 0.5 * (x0 + x1); }
  double center_y() const { return 0.5 * (y0 + y1); }
  bool valid() const { return x0 < x1 && y0 < y1; }
  BBox clamped(Eigen::Index height, Eigen::Index width) const;

  friend bool operator==(const BBox&, const BBox&) = default;
};

bool same_size(const Image& img, const Mask& mask);
bool in_unit_range(const Image& img);

/// Luma with Rec.601 weights.
Plane grayscale(const Image& img);

/// Bilinear resize with pixel-center alignment and edge clamping.
Plane resize_bilinear(const Plane& src, Eigen::Index height, Eigen::Index width);
Image resize_bilinear(const Image& src, Eigen::Index height, Eigen::Index width);

/// Exact fractional-area averaging into a height x width grid.
Plane resize_area(const Plane& src, Eigen::Index height, Eigen::Index width);

/// Halve each dimension (ceil) by averaging the pixels of each 2x2 block that exist.
Plane downscale2_area(const Plane& src);

/// Normalized (2r+1)^2 box filter; near the border only in-bounds pixels are averaged.
Plane box_blur(const Plane& src, int radius);
Image box_blur(const Image& src, int radius);

/// 1 where mask >= 0.5, else 0.
Mask binarize(const Mask& mask);

Image crop(const Image& img, const BBox& box);

Image clamp01(Image img);

}  // namespace easyphoto
