#pragma once

#include "easyphoto/geometry.hpp"

#include <array>
#include <optional>

namespace easyphoto::fiducial {

// Fiducial faces are the model-free test format understood by the reference detector:
// a flat low-saturation face rectangle carrying five 5x5 keypoint dots, one per canonical
// landmark, each in a reserved saturated color. Detection keys on color dominance, so the
// dots survive blending with gray content (e.g. a mock inpaint at moderate strength).

using Rgb = std::array<float, 3>;

/// Keypoint palette, indexed by landmark::Index. Shared with the openpose reference.
inline constexpr std::array<Rgb, 5> kKeypointColors{{
    {1.0f, 0.0f, 0.0f},  // left eye
    {0.0f, 1.0f, 0.0f},  // right eye
    {0.0f, 0.0f, 1.0f},  // nose
    {1.0f, 0.0f, 1.0f},  // left mouth corner
    {0.0f, 1.0f, 1.0f},  // right mouth corner
}};

/// Face fill, 8-bit exact (204, 191, 178).
inline constexpr Rgb kFaceFill{204.0f / 255.0f, 191.0f / 255.0f, 178.0f / 255.0f};

inline constexpr int kDotHalfSize = 2;
inline constexpr int kMinFaceSize = 30;

/// A pixel is a keypoint candidate when max - min channel exceeds this.
inline constexpr float kMinSpread = 0.15f;

/// Canonical landmark positions (integer pixels) inside a face box.
LandmarkSet layout(const BBox& face);

/// Paints the face rectangle and its dots; returns the painted landmarks.
LandmarkSet paint_face(Image& canvas, const BBox& face);

/// Paints only the five keypoint dots at (rounded) landmark positions.
void paint_dots(Image& canvas, const LandmarkSet& landmarks);

/// Face box implied by a landmark set; inverts layout() up to rounding.
BBox bbox_from_landmarks(const LandmarkSet& landmarks);

/// Keypoint class of a pixel, if its dominant channels match a palette entry.
std::optional<int> classify(float r, float g, float b);

}  // namespace easyphoto::fiducial
