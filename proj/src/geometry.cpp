#include "easyphoto/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace easyphoto {

Image warp_image(const Image& img, const AffineMatrix& m, Eigen::Index out_height,
                 Eigen::Index out_width) {
  if (out_height < 1 || out_width < 1) throw Error(Errc::InvalidArgument, "empty warp target");
  const AffineMatrix inv = invert_affine(m);
  const Eigen::Index h = img.height();
  const Eigen::Index w = img.width();
  auto fetch = [&](Eigen::Index y, Eigen::Index x, int c) -> double {
    if (y < 0 || x < 0 || y >= h || x >= w) return 0.0;
    return img(y, x, c);
  };

  Image out(out_height, out_width, 0.0f);
  for (Eigen::Index y = 0; y < out_height; ++y) {
    for (Eigen::Index x = 0; x < out_width; ++x) {
      const double sx = inv(0, 0) * x + inv(0, 1) * y + inv(0, 2);
      const double sy = inv(1, 0) * x + inv(1, 1) * y + inv(1, 2);
      const double fx0 = std::floor(sx);
      const double fy0 = std::floor(sy);
      if (fx0 < -1.0 || fy0 < -1.0 || fx0 > static_cast<double>(w) ||
          fy0 > static_cast<double>(h)) {
        continue;
      }
      const auto x0 = static_cast<Eigen::Index>(fx0);
      const auto y0 = static_cast<Eigen::Index>(fy0);
      const double ax = sx - fx0;
      const double ay = sy - fy0;
      for (int c = 0; c < 3; ++c) {
        const double top = (1.0 - ax) * fetch(y0, x0, c) + ax * fetch(y0, x0 + 1, c);
        const double bot = (1.0 - ax) * fetch(y0 + 1, x0, c) + ax * fetch(y0 + 1, x0 + 1, c);
        const double v = (1.0 - ay) * top + ay * bot;
        out(y, x, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return out;
}

Image paste_face(const Image& template_img, const Image& face_img, const AffineMatrix& m,
                 const Mask& face_mask) {
  if (!same_size(template_img, face_mask)) {
    throw Error(Errc::DimensionMismatch, "face mask does not match template");
  }
  const Image warped = warp_image(face_img, m, template_img.height(), template_img.width());
  Image out = template_img;
  for (int c = 0; c < 3; ++c) {
    out.channels[c] = (face_mask > 0.5f).select(warped.channels[c], template_img.channels[c]);
  }
  return out;
}

namespace {

double cross(const Point2& o, const Point2& a, const Point2& b) {
  return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
}

// Andrew's monotone chain; counter-clockwise in a y-up frame, collinear points dropped.
std::vector<Point2> convex_hull(const LandmarkSet& pts) {
  std::vector<Point2> p;
  p.reserve(static_cast<size_t>(pts.rows()));
  for (Eigen::Index i = 0; i < pts.rows(); ++i) p.emplace_back(pts(i, 0), pts(i, 1));
  std::sort(p.begin(), p.end(), [](const Point2& a, const Point2& b) {
    return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
  });
  if (p.size() < 3) return p;
  std::vector<Point2> hull(2 * p.size());
  size_t k = 0;
  for (const auto& q : p) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], q) <= 0.0) --k;
    hull[k++] = q;
  }
  for (size_t i = p.size() - 1, t = k + 1; i-- > 0;) {
    while (k >= t && cross(hull[k - 2], hull[k - 1], p[i]) <= 0.0) --k;
    hull[k++] = p[i];
  }
  hull.resize(k - 1);
  return hull;
}

double polygon_area(const std::vector<Point2>& poly) {
  double twice = 0.0;
  for (size_t i = 0; i < poly.size(); ++i) {
    const Point2& a = poly[i];
    const Point2& b = poly[(i + 1) % poly.size()];
    twice += a.x() * b.y() - b.x() * a.y();
  }
  return 0.5 * std::abs(twice);
}

constexpr double kInsideSlack = 1e-9;

}  // namespace

Mask hull_mask(const LandmarkSet& pts, Eigen::Index height, Eigen::Index width) {
  if (pts.rows() < 3) throw Error(Errc::DegenerateHull, "hull needs at least 3 points");
  if (!pts.allFinite()) throw Error(Errc::InvalidArgument, "non-finite landmark");
  const std::vector<Point2> hull = convex_hull(pts);
  if (hull.size() < 3 || polygon_area(hull) <= 1e-12) {
    throw Error(Errc::DegenerateHull, "landmark hull has zero area");
  }
  Mask mask = Mask::Zero(height, width);
  const Eigen::Vector2d lo = pts.colwise().minCoeff();
  const Eigen::Vector2d hi = pts.colwise().maxCoeff();
  const auto x_begin = std::max<Eigen::Index>(0, static_cast<Eigen::Index>(std::floor(lo.x())));
  const auto x_end = std::min<Eigen::Index>(width - 1, static_cast<Eigen::Index>(std::ceil(hi.x())));
  const auto y_begin = std::max<Eigen::Index>(0, static_cast<Eigen::Index>(std::floor(lo.y())));
  const auto y_end =
      std::min<Eigen::Index>(height - 1, static_cast<Eigen::Index>(std::ceil(hi.y())));
  for (Eigen::Index y = y_begin; y <= y_end; ++y) {
    for (Eigen::Index x = x_begin; x <= x_end; ++x) {
      const Point2 p(static_cast<double>(x), static_cast<double>(y));
      bool inside = true;
      for (size_t i = 0; i < hull.size() && inside; ++i) {
        const Point2& a = hull[i];
        const Point2& b = hull[(i + 1) % hull.size()];
        inside = cross(a, b, p) >= -kInsideSlack * (b - a).norm();
      }
      if (inside) mask(y, x) = 1.0f;
    }
  }
  return mask;
}

Mask segment_mask(const Point2& a, const Point2& b, double distance_px, Eigen::Index height,
                  Eigen::Index width) {
  Mask mask = Mask::Zero(height, width);
  const Point2 ab = b - a;
  const double len2 = ab.squaredNorm();
  for (Eigen::Index y = 0; y < height; ++y) {
    for (Eigen::Index x = 0; x < width; ++x) {
      const Point2 p(static_cast<double>(x), static_cast<double>(y));
      double t = len2 > 0.0 ? (p - a).dot(ab) / len2 : 0.0;
      t = std::clamp(t, 0.0, 1.0);
      if ((p - (a + t * ab)).norm() <= distance_px + kInsideSlack) mask(y, x) = 1.0f;
    }
  }
  return mask;
}

Mask dilate(const Mask& mask, int radius) {
  if (radius < 0) throw Error(Errc::InvalidArgument, "negative dilation radius");
  const Mask bin = binarize(mask);
  if (radius == 0) return bin;
  const Eigen::Index h = bin.rows();
  const Eigen::Index w = bin.cols();

  // Row prefix counts: prefix(y, x) = number of set pixels in row y before column x.
  Eigen::Array<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> prefix(h, w + 1);
  for (Eigen::Index y = 0; y < h; ++y) {
    prefix(y, 0) = 0;
    for (Eigen::Index x = 0; x < w; ++x) prefix(y, x + 1) = prefix(y, x) + (bin(y, x) > 0.5f);
  }
  // Half-width of the disc on each row offset.
  std::vector<int> half(static_cast<size_t>(2 * radius + 1));
  for (int dy = -radius; dy <= radius; ++dy) {
    int dx = 0;
    while ((dx + 1) * (dx + 1) + dy * dy <= radius * radius) ++dx;
    half[static_cast<size_t>(dy + radius)] = dx;
  }

  Mask out = Mask::Zero(h, w);
  for (Eigen::Index y = 0; y < h; ++y) {
    for (Eigen::Index x = 0; x < w; ++x) {
      for (int dy = -radius; dy <= radius; ++dy) {
        const Eigen::Index yy = y + dy;
        if (yy < 0 || yy >= h) continue;
        const int hw = half[static_cast<size_t>(dy + radius)];
        const Eigen::Index xa = std::max<Eigen::Index>(0, x - hw);
        const Eigen::Index xb = std::min<Eigen::Index>(w, x + hw + 1);
        if (prefix(yy, xb) - prefix(yy, xa) > 0) {
          out(y, x) = 1.0f;
          break;
        }
      }
    }
  }
  return out;
}

Mask erode(const Mask& mask, int radius) {
  const Mask complement = 1.0f - binarize(mask);
  return 1.0f - dilate(complement, radius);
}

Mask mask_union(const Mask& a, const Mask& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(Errc::DimensionMismatch, "mask union of different sizes");
  }
  return binarize(a).max(binarize(b));
}

Mask boundary_ring(const Mask& mask, int r_out, int r_in) {
  if (r_out < 1 || r_in < 0) throw Error(Errc::InvalidArgument, "ring radii out of range");
  const Mask outer = dilate(mask, r_out);
  const Mask inner = erode(mask, r_in);
  return outer * (1.0f - inner);
}

Image feathered_blend(const Image& base, const Image& patch, const Mask& mask, int feather_radius) {
  if (!base.same_size(patch) || !same_size(base, mask)) {
    throw Error(Errc::DimensionMismatch, "blend inputs differ in size");
  }
  if (feather_radius < 0) throw Error(Errc::InvalidArgument, "negative feather radius");
  const Mask soft = box_blur(Mask(mask.max(0.0f).min(1.0f)), feather_radius);
  Image out;
  for (int c = 0; c < 3; ++c) {
    out.channels[c] = (1.0f - soft) * base.channels[c] + soft * patch.channels[c];
  }
  return clamp01(std::move(out));
}

Mask bbox_mask(const BBox& bbox, Eigen::Index height, Eigen::Index width) {
  Mask mask = Mask::Zero(height, width);
  const BBox b = bbox.clamped(height, width);
  if (b.valid()) mask.block(b.y0, b.x0, b.height(), b.width()).setOnes();
  return mask;
}

Mask calibrate_face_mask(const LandmarkSet& landmarks, const BBox& bbox, Eigen::Index height,
                         Eigen::Index width, double ear_expand_ratio) {
  if (!(ear_expand_ratio >= 0.0 && ear_expand_ratio <= 1.0)) {
    throw Error(Errc::InvalidArgument, "ear_expand_ratio outside [0,1]");
  }
  const Mask base = mask_union(hull_mask(landmarks, height, width), bbox_mask(bbox, height, width));
  const int radius = static_cast<int>(std::lround(ear_expand_ratio * bbox.width()));
  return dilate(base, radius);
}

Mask mouth_mask(const LandmarkSet& landmarks, const BBox& bbox, Eigen::Index height,
                Eigen::Index width) {
  if (landmarks.rows() != landmark::kCanonicalCount) {
    throw Error(Errc::LengthMismatch, "mouth mask needs the canonical 5-point set");
  }
  const Point2 left = landmarks.row(landmark::MouthLeft).transpose();
  const Point2 right = landmarks.row(landmark::MouthRight).transpose();
  const int radius = static_cast<int>(std::lround(kMouthExpandRatio * bbox.width()));
  return dilate(segment_mask(left, right, 0.5, height, width), radius);
}

}  // namespace easyphoto
