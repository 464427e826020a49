#include "easyphoto/fixtures.hpp"

#include "easyphoto/random.hpp"

namespace easyphoto::fixtures {

Image textured_background(Eigen::Index height, Eigen::Index width, std::uint64_t seed) {
  // Smooth diagonal gradient plus a faint deterministic grain.
  Plane gray(height, width);
  for (Eigen::Index y = 0; y < height; ++y) {
    for (Eigen::Index x = 0; x < width; ++x) {
      const double ramp = static_cast<double>(x + y) / static_cast<double>(height + width);
      const double grain =
          0.5 * (unit2_from_bits(splitmix64(seed ^ (static_cast<std::uint64_t>(y) << 32) ^
                                            static_cast<std::uint64_t>(x))));
      const double v = 0.1 + 0.15 * ramp + 0.05 * grain;
      gray(y, x) = static_cast<float>(std::round(v * 255.0) / 255.0);
    }
  }
  return Image::from_gray(gray);
}

Image portrait(Eigen::Index height, Eigen::Index width, const BBox& face, std::uint64_t seed) {
  Image img = textured_background(height, width, seed);
  fiducial::paint_face(img, face);
  return img;
}

Image group_portrait(Eigen::Index height, Eigen::Index width, const std::vector<BBox>& faces,
                     std::uint64_t seed) {
  Image img = textured_background(height, width, seed);
  for (const auto& face : faces) fiducial::paint_face(img, face);
  return img;
}

std::vector<Image> validation_templates() {
  return {
      portrait(256, 256, BBox{88, 72, 168, 172}, 101),
      portrait(256, 256, BBox{76, 60, 172, 180}, 102),
      portrait(256, 256, BBox{96, 84, 164, 168}, 103),
  };
}

std::vector<Image> training_photos(std::uint64_t user_seed, int count) {
  std::vector<Image> photos;
  SplitMix64 rng(splitmix64(user_seed));
  for (int i = 0; i < count; ++i) {
    const int w = 60 + static_cast<int>(rng() % 21);  // 60..80
    const int h = 70 + static_cast<int>(rng() % 21);  // 70..90
    const int x0 = 128 - w / 2 + static_cast<int>(rng() % 17) - 8;
    const int y0 = 128 - h / 2 + static_cast<int>(rng() % 17) - 8;
    photos.push_back(portrait(256, 256, BBox{x0, y0, x0 + w, y0 + h}, user_seed * 1000 + static_cast<std::uint64_t>(i)));
  }
  return photos;
}

Image single_template() { return portrait(256, 256, BBox{84, 70, 172, 178}, 7); }

Image group_template() {
  return group_portrait(192, 320, {BBox{40, 50, 110, 140}, BBox{200, 46, 274, 140}}, 11);
}

}  // namespace easyphoto::fixtures
