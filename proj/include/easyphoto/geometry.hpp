#pragma once

#include "easyphoto/error.hpp"
#include "easyphoto/image.hpp"

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include <cmath>

namespace easyphoto {

template <typename Scalar>
using Point2T = Eigen::Matrix<Scalar, 2, 1>;

/// Ordered keypoints, one point per row. Order is semantic and never sorted.
template <typename Scalar>
using LandmarksT = Eigen::Matrix<Scalar, Eigen::Dynamic, 2>;

/// Row-major 2x3 map from source (x, y, 1) to target (x, y).
template <typename Scalar>
using AffineT = Eigen::Matrix<Scalar, 2, 3>;

using Point2 = Point2T<double>;
using LandmarkSet = LandmarksT<double>;
using AffineMatrix = AffineT<double>;

/// Canonical 5-point layout.
namespace landmark {
enum Index : int { LeftEye = 0, RightEye = 1, Nose = 2, MouthLeft = 3, MouthRight = 4 };
inline constexpr int kCanonicalCount = 5;
}  // namespace landmark

inline constexpr double kCollinearThreshold = 1e-10;
inline constexpr double kSingularDeterminant = 1e-12;

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  return m.allFinite();
}

/// Least-squares affine fit of dst ~ M * [src; 1].
///
/// Solved on centered, RMS-normalized source coordinates with Householder QR. Throws
/// CollinearLandmarks when the homogeneous normal matrix of the normalized points has a
/// reciprocal condition number below kCollinearThreshold.
template <typename DerivedSrc, typename DerivedDst>
AffineT<typename DerivedSrc::Scalar> estimate_affine(const Eigen::MatrixBase<DerivedSrc>& src,
                                                     const Eigen::MatrixBase<DerivedDst>& dst) {
  using Scalar = typename DerivedSrc::Scalar;
  static_assert(DerivedSrc::ColsAtCompileTime == 2 && DerivedDst::ColsAtCompileTime == 2,
                "landmarks are k x 2");
  const Eigen::Index k = src.rows();
  if (k != dst.rows()) throw Error(Errc::LengthMismatch, "landmark sets differ in length");
  if (!src.allFinite() || !dst.allFinite()) {
    throw Error(Errc::InvalidArgument, "non-finite landmark");
  }
  if (k < 3) throw Error(Errc::CollinearLandmarks, "affine fit needs at least 3 points");

  const Eigen::Matrix<Scalar, 1, 2> src_mean = src.colwise().mean();
  const Eigen::Matrix<Scalar, 1, 2> dst_mean = dst.colwise().mean();
  const LandmarksT<Scalar> centered = src.rowwise() - src_mean;
  const LandmarksT<Scalar> target = dst.rowwise() - dst_mean;
  const Scalar rms = std::sqrt(centered.squaredNorm() / static_cast<Scalar>(k));
  if (!(rms > Scalar(0))) throw Error(Errc::CollinearLandmarks, "coincident landmarks");
  const LandmarksT<Scalar> normalized = centered / rms;

  Eigen::Matrix<Scalar, 3, 3> normal = Eigen::Matrix<Scalar, 3, 3>::Zero();
  normal.template topLeftCorner<2, 2>() = normalized.transpose() * normalized;
  normal(2, 2) = static_cast<Scalar>(k);
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix<Scalar, 3, 3>> eig(normal,
                                                                      Eigen::EigenvaluesOnly);
  const auto& ev = eig.eigenvalues();
  if (ev.minCoeff() / ev.maxCoeff() < Scalar(kCollinearThreshold)) {
    throw Error(Errc::CollinearLandmarks, "landmarks are (nearly) collinear");
  }

  const Eigen::Matrix<Scalar, 2, 2> linear_t =
      normalized.householderQr().solve(target) / rms;  // = L^T
  AffineT<Scalar> m;
  m.template leftCols<2>() = linear_t.transpose();
  m.col(2) = dst_mean.transpose() - linear_t.transpose() * src_mean.transpose();
  return m;
}

/// Closed-form scale + rotation + translation fit (orthogonal Procrustes, no reflection).
template <typename DerivedSrc, typename DerivedDst>
AffineT<typename DerivedSrc::Scalar> estimate_similarity(
    const Eigen::MatrixBase<DerivedSrc>& src, const Eigen::MatrixBase<DerivedDst>& dst) {
  using Scalar = typename DerivedSrc::Scalar;
  if (src.rows() != dst.rows()) throw Error(Errc::LengthMismatch, "landmark sets differ in length");
  if (src.rows() < 2) throw Error(Errc::CollinearLandmarks, "similarity fit needs 2 points");
  const Eigen::Matrix<Scalar, 3, 3> h =
      Eigen::umeyama(src.transpose().eval(), dst.transpose().eval(), true);
  if (!h.allFinite()) throw Error(Errc::CollinearLandmarks, "coincident landmarks");
  return h.template topRows<2>();
}

/// Full affine fit, falling back to a similarity fit on collinear layouts.
template <typename DerivedSrc, typename DerivedDst>
AffineT<typename DerivedSrc::Scalar> estimate_alignment(const Eigen::MatrixBase<DerivedSrc>& src,
                                                        const Eigen::MatrixBase<DerivedDst>& dst) {
  try {
    return estimate_affine(src, dst);
  } catch (const Error& e) {
    if (e.code() != Errc::CollinearLandmarks) throw;
  }
  return estimate_similarity(src, dst);
}

template <typename Scalar>
AffineT<Scalar> identity_affine() {
  AffineT<Scalar> m = AffineT<Scalar>::Zero();
  m(0, 0) = Scalar(1);
  m(1, 1) = Scalar(1);
  return m;
}

template <typename Derived>
AffineT<typename Derived::Scalar> invert_affine(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Matrix<Scalar, 2, 2> linear = m.template leftCols<2>();
  const Scalar det = linear.determinant();
  if (!(std::abs(det) > Scalar(kSingularDeterminant)) || !m.allFinite()) {
    throw Error(Errc::SingularTransform, "affine linear part is not invertible");
  }
  const Eigen::Matrix<Scalar, 2, 2> inv = linear.inverse();
  AffineT<Scalar> out;
  out.template leftCols<2>() = inv;
  out.col(2) = -inv * m.col(2);
  return out;
}

template <typename DerivedM, typename DerivedP>
LandmarksT<typename DerivedP::Scalar> transform_points(const Eigen::MatrixBase<DerivedM>& m,
                                                       const Eigen::MatrixBase<DerivedP>& pts) {
  LandmarksT<typename DerivedP::Scalar> out =
      pts * m.template leftCols<2>().transpose();
  out.rowwise() += m.col(2).transpose();
  return out;
}

/// Backward-mapped bilinear warp: output (x, y) samples img at M^-1 (x, y, 1).
/// Samples outside the source are black.
Image warp_image(const Image& img, const AffineMatrix& m, Eigen::Index out_height,
                 Eigen::Index out_width);

/// The "replaced" image: warped face pasted over the template where face_mask > 0.5.
Image paste_face(const Image& template_img, const Image& face_img, const AffineMatrix& m,
                 const Mask& face_mask);

/// Filled convex hull of pts; pixel (x, y) is inside when its center (x, y) is.
Mask hull_mask(const LandmarkSet& pts, Eigen::Index height, Eigen::Index width);

/// Pixels within distance_px of the segment a-b.
Mask segment_mask(const Point2& a, const Point2& b, double distance_px, Eigen::Index height,
                  Eigen::Index width);

/// Binary dilation by a disc of the given radius (offsets with dx^2 + dy^2 <= r^2).
Mask dilate(const Mask& mask, int radius);

/// Dual of dilate: pixels outside the image count as foreground.
Mask erode(const Mask& mask, int radius);

Mask mask_union(const Mask& a, const Mask& b);

/// dilate(mask, r_out) minus erode(mask, r_in).
Mask boundary_ring(const Mask& mask, int r_out, int r_in);

/// (1 - m) * base + m * patch with m the box-feathered mask.
Image feathered_blend(const Image& base, const Image& patch, const Mask& mask, int feather_radius);

inline constexpr double kDefaultEarExpandRatio = 0.1;
inline constexpr double kMouthExpandRatio = 0.15;

/// Hull of the landmarks unioned with the bbox interior, dilated by
/// round(ear_expand_ratio * bbox width).
Mask calibrate_face_mask(const LandmarkSet& landmarks, const BBox& bbox, Eigen::Index height,
                         Eigen::Index width, double ear_expand_ratio = kDefaultEarExpandRatio);

/// Mouth segment (the two mouth corners) dilated by round(0.15 * bbox width).
Mask mouth_mask(const LandmarkSet& landmarks, const BBox& bbox, Eigen::Index height,
                Eigen::Index width);

Mask bbox_mask(const BBox& bbox, Eigen::Index height, Eigen::Index width);

}  // namespace easyphoto
