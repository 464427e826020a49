#include "easyphoto/fiducial.hpp"

#include <algorithm>
#include <cmath>

namespace easyphoto::fiducial {

LandmarkSet layout(const BBox& face) {
  const double w = face.width();
  const double h = face.height();
  auto at = [&](double fx, double fy) {
    return Point2(face.x0 + std::round(fx * w), face.y0 + std::round(fy * h));
  };
  LandmarkSet lm(landmark::kCanonicalCount, 2);
  lm.row(landmark::LeftEye) = at(0.30, 0.40).transpose();
  lm.row(landmark::RightEye) = at(0.70, 0.40).transpose();
  lm.row(landmark::Nose) = at(0.50, 0.60).transpose();
  lm.row(landmark::MouthLeft) = at(0.35, 0.80).transpose();
  lm.row(landmark::MouthRight) = at(0.65, 0.80).transpose();
  return lm;
}

LandmarkSet paint_face(Image& canvas, const BBox& face) {
  if (face.width() < kMinFaceSize || face.height() < kMinFaceSize) {
    throw Error(Errc::InvalidArgument, "fiducial face smaller than 30 px");
  }
  const BBox b = face.clamped(canvas.height(), canvas.width());
  if (!(b == face)) throw Error(Errc::InvalidArgument, "fiducial face outside the canvas");
  for (int c = 0; c < 3; ++c) {
    canvas.channels[c].block(b.y0, b.x0, b.height(), b.width()).setConstant(kFaceFill[c]);
  }
  const LandmarkSet lm = layout(face);
  paint_dots(canvas, lm);
  return lm;
}

void paint_dots(Image& canvas, const LandmarkSet& landmarks) {
  if (landmarks.rows() != landmark::kCanonicalCount) {
    throw Error(Errc::LengthMismatch, "fiducial dots need the canonical 5-point set");
  }
  for (int i = 0; i < landmark::kCanonicalCount; ++i) {
    const auto cx = static_cast<Eigen::Index>(std::lround(landmarks(i, 0)));
    const auto cy = static_cast<Eigen::Index>(std::lround(landmarks(i, 1)));
    for (Eigen::Index y = cy - kDotHalfSize; y <= cy + kDotHalfSize; ++y) {
      for (Eigen::Index x = cx - kDotHalfSize; x <= cx + kDotHalfSize; ++x) {
        if (y < 0 || x < 0 || y >= canvas.height() || x >= canvas.width()) continue;
        for (int c = 0; c < 3; ++c) canvas(y, x, c) = kKeypointColors[static_cast<size_t>(i)][static_cast<size_t>(c)];
      }
    }
  }
}

BBox bbox_from_landmarks(const LandmarkSet& landmarks) {
  const Eigen::Vector2d lo = landmarks.colwise().minCoeff();
  const Eigen::Vector2d hi = landmarks.colwise().maxCoeff();
  const double lw = hi.x() - lo.x();
  const double lh = hi.y() - lo.y();
  return BBox{static_cast<int>(std::floor(lo.x() - 0.75 * lw)),
              static_cast<int>(std::floor(lo.y() - lh)),
              static_cast<int>(std::ceil(hi.x() + 0.75 * lw)),
              static_cast<int>(std::ceil(hi.y() + 0.5 * lh))};
}

std::optional<int> classify(float r, float g, float b) {
  const float hi = std::max({r, g, b});
  const float lo = std::min({r, g, b});
  const float spread = hi - lo;
  if (!(spread > kMinSpread)) return std::nullopt;
  const float mid = lo + 0.5f * spread;
  const bool on[3] = {r > mid, g > mid, b > mid};
  for (size_t i = 0; i < kKeypointColors.size(); ++i) {
    const auto& k = kKeypointColors[i];
    if (on[0] == (k[0] > 0.5f) && on[1] == (k[1] > 0.5f) && on[2] == (k[2] > 0.5f)) {
      return static_cast<int>(i);
    }
  }
  return std::nullopt;
}

}  // namespace easyphoto::fiducial
