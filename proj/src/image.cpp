#include "easyphoto/image.hpp"

#include "easyphoto/error.hpp"

#include <algorithm>
#include <cmath>

namespace easyphoto {

Image::Image(Eigen::Index height, Eigen::Index width, float fill) {
  for (auto& ch : channels) ch = Plane::Constant(height, width, fill);
}

Image Image::constant(Eigen::Index height, Eigen::Index width, float r, float g, float b) {
  Image img;
  img.channels[0] = Plane::Constant(height, width, r);
  img.channels[1] = Plane::Constant(height, width, g);
  img.channels[2] = Plane::Constant(height, width, b);
  return img;
}

Image Image::from_gray(const Plane& gray) {
  Image img;
  for (auto& ch : img.channels) ch = gray;
  return img;
}

bool operator==(const Image& a, const Image& b) {
  if (!a.same_size(b)) return false;
  for (int c = 0; c < 3; ++c) {
    if ((a.channels[c] != b.channels[c]).any()) return false;
  }
  return true;
}

BBox BBox::clamped(Eigen::Index height, Eigen::Index width) const {
  const int h = static_cast<int>(height);
  const int w = static_cast<int>(width);
  return BBox{std::clamp(x0, 0, w), std::clamp(y0, 0, h), std::clamp(x1, 0, w),
              std::clamp(y1, 0, h)};
}

bool same_size(const Image& img, const Mask& mask) {
  return img.height() == mask.rows() && img.width() == mask.cols();
}

bool in_unit_range(const Image& img) {
  for (const auto& ch : img.channels) {
    if (!ch.allFinite() || (ch < 0.0f).any() || (ch > 1.0f).any()) return false;
  }
  return true;
}

Plane grayscale(const Image& img) {
  Plane out(img.height(), img.width());
  for (Eigen::Index y = 0; y < out.rows(); ++y) {
    for (Eigen::Index x = 0; x < out.cols(); ++x) {
      const double v = 0.299 * img(y, x, 0) + 0.587 * img(y, x, 1) + 0.114 * img(y, x, 2);
      out(y, x) = static_cast<float>(v);
    }
  }
  return out;
}

namespace {

struct Tap {
  Eigen::Index i0;
  Eigen::Index i1;
  double frac;
};

// Pixel-center aligned source coordinate for each destination index, clamped to the edge.
std::vector<Tap> bilinear_taps(Eigen::Index src_len, Eigen::Index dst_len) {
  std::vector<Tap> taps(static_cast<size_t>(dst_len));
  const double scale = static_cast<double>(src_len) / static_cast<double>(dst_len);
  for (Eigen::Index i = 0; i < dst_len; ++i) {
    double s = (static_cast<double>(i) + 0.5) * scale - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(src_len - 1));
    const auto i0 = static_cast<Eigen::Index>(std::floor(s));
    const auto i1 = std::min(i0 + 1, src_len - 1);
    taps[static_cast<size_t>(i)] = Tap{i0, i1, s - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace

Plane resize_bilinear(const Plane& src, Eigen::Index height, Eigen::Index width) {
  if (height < 1 || width < 1 || src.size() == 0) {
    throw Error(Errc::InvalidArgument, "resize to empty dimensions");
  }
  if (height == src.rows() && width == src.cols()) return src;
  const auto ty = bilinear_taps(src.rows(), height);
  const auto tx = bilinear_taps(src.cols(), width);
  Plane out(height, width);
  for (Eigen::Index y = 0; y < height; ++y) {
    const Tap& a = ty[static_cast<size_t>(y)];
    for (Eigen::Index x = 0; x < width; ++x) {
      const Tap& b = tx[static_cast<size_t>(x)];
      const double top = (1.0 - b.frac) * src(a.i0, b.i0) + b.frac * src(a.i0, b.i1);
      const double bot = (1.0 - b.frac) * src(a.i1, b.i0) + b.frac * src(a.i1, b.i1);
      out(y, x) = static_cast<float>((1.0 - a.frac) * top + a.frac * bot);
    }
  }
  return out;
}

Image resize_bilinear(const Image& src, Eigen::Index height, Eigen::Index width) {
  Image out;
  for (int c = 0; c < 3; ++c) out.channels[c] = resize_bilinear(src.channels[c], height, width);
  return out;
}

Plane resize_area(const Plane& src, Eigen::Index height, Eigen::Index width) {
  if (height < 1 || width < 1 || src.size() == 0) {
    throw Error(Errc::InvalidArgument, "resize to empty dimensions");
  }
  // Separable: each destination cell covers [i*s, (i+1)*s) of the source axis.
  auto weights = [](Eigen::Index src_len, Eigen::Index dst_len) {
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(dst_len, src_len);
    const double scale = static_cast<double>(src_len) / static_cast<double>(dst_len);
    for (Eigen::Index i = 0; i < dst_len; ++i) {
      const double lo = static_cast<double>(i) * scale;
      const double hi = static_cast<double>(i + 1) * scale;
      for (auto j = static_cast<Eigen::Index>(std::floor(lo));
           j < std::min<Eigen::Index>(src_len, static_cast<Eigen::Index>(std::ceil(hi))); ++j) {
        const double overlap =
            std::min(hi, static_cast<double>(j + 1)) - std::max(lo, static_cast<double>(j));
        if (overlap > 0.0) w(i, j) = overlap / scale;
      }
    }
    return w;
  };
  const Eigen::MatrixXd wy = weights(src.rows(), height);
  const Eigen::MatrixXd wx = weights(src.cols(), width);
  const Eigen::MatrixXd result = wy * src.cast<double>().matrix() * wx.transpose();
  return result.cast<float>().array();
}

Plane downscale2_area(const Plane& src) {
  const Eigen::Index h = (src.rows() + 1) / 2;
  const Eigen::Index w = (src.cols() + 1) / 2;
  Plane out(h, w);
  for (Eigen::Index y = 0; y < h; ++y) {
    for (Eigen::Index x = 0; x < w; ++x) {
      double sum = 0.0;
      int count = 0;
      for (Eigen::Index dy = 0; dy < 2; ++dy) {
        for (Eigen::Index dx = 0; dx < 2; ++dx) {
          const Eigen::Index sy = 2 * y + dy;
          const Eigen::Index sx = 2 * x + dx;
          if (sy < src.rows() && sx < src.cols()) {
            sum += src(sy, sx);
            ++count;
          }
        }
      }
      out(y, x) = static_cast<float>(sum / count);
    }
  }
  return out;
}

Plane box_blur(const Plane& src, int radius) {
  if (radius <= 0) return src;
  const Eigen::Index h = src.rows();
  const Eigen::Index w = src.cols();
  // Summed-area table with a zero border row/column.
  Eigen::ArrayXXd sat = Eigen::ArrayXXd::Zero(h + 1, w + 1);
  for (Eigen::Index y = 0; y < h; ++y) {
    for (Eigen::Index x = 0; x < w; ++x) {
      sat(y + 1, x + 1) = src(y, x) + sat(y, x + 1) + sat(y + 1, x) - sat(y, x);
    }
  }
  Plane out(h, w);
  for (Eigen::Index y = 0; y < h; ++y) {
    const Eigen::Index ya = std::max<Eigen::Index>(0, y - radius);
    const Eigen::Index yb = std::min<Eigen::Index>(h, y + radius + 1);
    for (Eigen::Index x = 0; x < w; ++x) {
      const Eigen::Index xa = std::max<Eigen::Index>(0, x - radius);
      const Eigen::Index xb = std::min<Eigen::Index>(w, x + radius + 1);
      const double sum = sat(yb, xb) - sat(ya, xb) - sat(yb, xa) + sat(ya, xa);
      const double count = static_cast<double>((yb - ya) * (xb - xa));
      out(y, x) = static_cast<float>(sum / count);
    }
  }
  return out;
}

Image box_blur(const Image& src, int radius) {
  Image out;
  for (int c = 0; c < 3; ++c) out.channels[c] = box_blur(src.channels[c], radius);
  return out;
}

Mask binarize(const Mask& mask) { return (mask >= 0.5f).cast<float>(); }

Image crop(const Image& img, const BBox& box) {
  const BBox b = box.clamped(img.height(), img.width());
  if (!b.valid()) throw Error(Errc::InvalidArgument, "empty crop");
  Image out;
  for (int c = 0; c < 3; ++c) {
    out.channels[c] = img.channels[c].block(b.y0, b.x0, b.height(), b.width());
  }
  return out;
}

Image clamp01(Image img) {
  for (auto& ch : img.channels) ch = ch.max(0.0f).min(1.0f);
  return img;
}

}  // namespace easyphoto
