#pragma once

#include "easyphoto/fiducial.hpp"

#include <cstdint>
#include <vector>

namespace easyphoto::fixtures {

/// Low-contrast gray texture in [0.1, 0.3]; carries no keypoint colors.
Image textured_background(Eigen::Index height, Eigen::Index width, std::uint64_t seed);

/// Textured background with one fiducial face painted at `face`.
Image portrait(Eigen::Index height, Eigen::Index width, const BBox& face, std::uint64_t seed);

/// Textured background with several fiducial faces.
Image group_portrait(Eigen::Index height, Eigen::Index width, const std::vector<BBox>& faces,
                     std::uint64_t seed);

/// Three neutral single-face portraits used for checkpoint validation.
std::vector<Image> validation_templates();

/// `count` single-face 256x256 photos of one synthetic user; face geometry jitters
/// deterministically with `user_seed`.
std::vector<Image> training_photos(std::uint64_t user_seed, int count);

/// 256x256 single-face template.
Image single_template();

/// 320x192 template with two disjoint faces.
Image group_template();

}  // namespace easyphoto::fixtures
